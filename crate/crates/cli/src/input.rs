//! Scripted open-loop inputs `u(t)`.

use fasteval::{Compiler, Evaler, Instruction, Parser, Slab};

/// A compiled expression in the variable `t`.
pub struct InputSchedule {
    slab: Slab,
    program: Instruction,
}

impl std::fmt::Debug for InputSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("InputSchedule")
    }
}

impl InputSchedule {
    pub fn parse(expr: &str) -> Result<Self, String> {
        let mut slab = Slab::new();
        let program = Parser::new()
            .parse(expr, &mut slab.ps)
            .map_err(|e| format!("cannot parse `{expr}`: {e}"))?
            .from(&slab.ps)
            .compile(&slab.ps, &mut slab.cs);
        let schedule = Self { slab, program };
        schedule.try_eval(0.0)?;
        Ok(schedule)
    }

    fn try_eval(&self, t: f64) -> Result<f64, String> {
        let mut vars = |name: &str, _args: Vec<f64>| (name == "t").then_some(t);
        self.program
            .eval(&self.slab, &mut vars)
            .map_err(|e| format!("cannot evaluate input at t = {t}: {e}"))
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.try_eval(t).unwrap_or(f64::NAN)
    }
}
