//! Sixteen-variable mammalian circadian clock model (Per/Cry/Bmal1 loops).
//!
//! Light enters as an additive change of the maximal Per transcription rate,
//! `v_sP(t) = v_sP0 + u(t)`. The default output is Per mRNA.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::VectorField;

/// State layout of [`LeloupField`].
pub mod idx {
    pub const MP: usize = 0;
    pub const MC: usize = 1;
    pub const MB: usize = 2;
    pub const PC: usize = 3;
    pub const CC: usize = 4;
    pub const PCP: usize = 5;
    pub const CCP: usize = 6;
    pub const PCC: usize = 7;
    pub const PCN: usize = 8;
    pub const PCCP: usize = 9;
    pub const PCNP: usize = 10;
    pub const BC: usize = 11;
    pub const BCP: usize = 12;
    pub const BN: usize = 13;
    pub const BNP: usize = 14;
    pub const IN: usize = 15;
}

pub const STATE_NAMES: [&str; 16] = [
    "MP", "MC", "MB", "PC", "CC", "PCP", "CCP", "PCC", "PCN", "PCCP", "PCNP", "BC", "BCP", "BN", "BNP", "IN",
];

/// Rate constants (nM, h). Defaults are the basal set with `k1 = 0.58` and
/// `k2 = 2.0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeloupParameters {
    pub v_sp0: f64,
    pub v_sc: f64,
    pub v_sb: f64,
    pub k_ap: f64,
    pub k_ac: f64,
    pub k_ib: f64,
    pub hill_n: f64,
    pub hill_m: f64,
    pub v_mp: f64,
    pub v_mc: f64,
    pub v_mb: f64,
    pub k_mp: f64,
    pub k_mc: f64,
    pub k_mb: f64,
    pub k_dmp: f64,
    pub k_dmc: f64,
    pub k_dmb: f64,
    pub k_sp: f64,
    pub k_sc: f64,
    pub k_sb: f64,
    pub v_1p: f64,
    pub v_1c: f64,
    pub v_1b: f64,
    pub v_1pc: f64,
    pub v_2p: f64,
    pub v_2c: f64,
    pub v_2b: f64,
    pub v_2pc: f64,
    pub v_3b: f64,
    pub v_3pc: f64,
    pub v_4b: f64,
    pub v_4pc: f64,
    pub k_p: f64,
    pub k_dp: f64,
    pub k_d: f64,
    pub v_dpc: f64,
    pub v_dcc: f64,
    pub v_dpcc: f64,
    pub v_dpcn: f64,
    pub v_dbc: f64,
    pub v_dbn: f64,
    pub v_din: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
    pub k7: f64,
    pub k8: f64,
    pub k_dn: f64,
    pub k_dnc: f64,
}

impl Default for LeloupParameters {
    fn default() -> Self {
        Self {
            v_sp0: 1.2,
            v_sc: 1.1,
            v_sb: 1.0,
            k_ap: 0.7,
            k_ac: 0.6,
            k_ib: 2.2,
            hill_n: 4.0,
            hill_m: 2.0,
            v_mp: 1.1,
            v_mc: 1.0,
            v_mb: 0.8,
            k_mp: 0.31,
            k_mc: 0.4,
            k_mb: 0.4,
            k_dmp: 0.01,
            k_dmc: 0.01,
            k_dmb: 0.01,
            k_sp: 0.6,
            k_sc: 1.6,
            k_sb: 0.12,
            v_1p: 0.4,
            v_1c: 0.6,
            v_1b: 0.5,
            v_1pc: 0.4,
            v_2p: 0.3,
            v_2c: 0.1,
            v_2b: 0.1,
            v_2pc: 0.1,
            v_3b: 0.5,
            v_3pc: 0.4,
            v_4b: 0.2,
            v_4pc: 0.1,
            k_p: 0.1,
            k_dp: 0.1,
            k_d: 0.3,
            v_dpc: 0.7,
            v_dcc: 0.7,
            v_dpcc: 0.7,
            v_dpcn: 0.7,
            v_dbc: 0.5,
            v_dbn: 0.6,
            v_din: 0.8,
            k1: 0.58,
            k2: 2.0,
            k3: 0.4,
            k4: 0.2,
            k5: 0.4,
            k6: 0.2,
            k7: 0.5,
            k8: 0.1,
            k_dn: 0.01,
            k_dnc: 0.12,
        }
    }
}

impl LeloupParameters {
    fn values(&self) -> [(&'static str, f64); 52] {
        [
            ("v_sp0", self.v_sp0),
            ("v_sc", self.v_sc),
            ("v_sb", self.v_sb),
            ("k_ap", self.k_ap),
            ("k_ac", self.k_ac),
            ("k_ib", self.k_ib),
            ("hill_n", self.hill_n),
            ("hill_m", self.hill_m),
            ("v_mp", self.v_mp),
            ("v_mc", self.v_mc),
            ("v_mb", self.v_mb),
            ("k_mp", self.k_mp),
            ("k_mc", self.k_mc),
            ("k_mb", self.k_mb),
            ("k_dmp", self.k_dmp),
            ("k_dmc", self.k_dmc),
            ("k_dmb", self.k_dmb),
            ("k_sp", self.k_sp),
            ("k_sc", self.k_sc),
            ("k_sb", self.k_sb),
            ("v_1p", self.v_1p),
            ("v_1c", self.v_1c),
            ("v_1b", self.v_1b),
            ("v_1pc", self.v_1pc),
            ("v_2p", self.v_2p),
            ("v_2c", self.v_2c),
            ("v_2b", self.v_2b),
            ("v_2pc", self.v_2pc),
            ("v_3b", self.v_3b),
            ("v_3pc", self.v_3pc),
            ("v_4b", self.v_4b),
            ("v_4pc", self.v_4pc),
            ("k_p", self.k_p),
            ("k_dp", self.k_dp),
            ("k_d", self.k_d),
            ("v_dpc", self.v_dpc),
            ("v_dcc", self.v_dcc),
            ("v_dpcc", self.v_dpcc),
            ("v_dpcn", self.v_dpcn),
            ("v_dbc", self.v_dbc),
            ("v_dbn", self.v_dbn),
            ("v_din", self.v_din),
            ("k1", self.k1),
            ("k2", self.k2),
            ("k3", self.k3),
            ("k4", self.k4),
            ("k5", self.k5),
            ("k6", self.k6),
            ("k7", self.k7),
            ("k8", self.k8),
            ("k_dn", self.k_dn),
            ("k_dnc", self.k_dnc),
        ]
    }

    /// Every constant must be finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.values() {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("Leloup parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeloupField {
    pub params: LeloupParameters,
    /// State index reported as the output.
    pub output_index: usize,
}

impl LeloupField {
    pub fn new(params: LeloupParameters) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            output_index: idx::MP,
        })
    }

    pub fn with_output(mut self, index: usize) -> Result<Self> {
        if index >= 16 {
            return Err(Error::InvalidArgument(format!("output index {index} out of range")));
        }
        self.output_index = index;
        Ok(self)
    }

    /// A positive state inside the basin of the limit cycle.
    pub fn initial_state() -> [f64; 16] {
        [0.5; 16]
    }
}

#[inline]
fn mm(v: f64, x: f64, k: f64) -> f64 {
    v * x / (k + x)
}

impl VectorField for LeloupField {
    fn dim(&self) -> usize {
        16
    }

    fn rhs(&self, x: &[f64], u: f64, _t: f64, dx: &mut [f64]) {
        use idx::*;
        let p = &self.params;
        let (mp, mc, mb) = (x[MP], x[MC], x[MB]);
        let (pc, cc, pcp, ccp) = (x[PC], x[CC], x[PCP], x[CCP]);
        let (pcc, pcn, pccp, pcnp) = (x[PCC], x[PCN], x[PCCP], x[PCNP]);
        let (bc, bcp, bn, bnp, inn) = (x[BC], x[BCP], x[BN], x[BNP], x[IN]);

        let bn_n = bn.powf(p.hill_n);
        let bn_m = bn.powf(p.hill_m);
        let kib_m = p.k_ib.powf(p.hill_m);
        let v_sp = p.v_sp0 + u;
        let complexing = p.k3 * pc * cc;
        let binding = p.k7 * bn * pcn;

        dx[MP] = v_sp * bn_n / (p.k_ap.powf(p.hill_n) + bn_n) - mm(p.v_mp, mp, p.k_mp) - p.k_dmp * mp;
        dx[MC] = p.v_sc * bn_n / (p.k_ac.powf(p.hill_n) + bn_n) - mm(p.v_mc, mc, p.k_mc) - p.k_dmc * mc;
        dx[MB] = p.v_sb * kib_m / (kib_m + bn_m) - mm(p.v_mb, mb, p.k_mb) - p.k_dmb * mb;

        dx[PC] = p.k_sp * mp - mm(p.v_1p, pc, p.k_p) + mm(p.v_2p, pcp, p.k_dp) + p.k4 * pcc - complexing
            - p.k_dn * pc;
        dx[CC] = p.k_sc * mc - mm(p.v_1c, cc, p.k_p) + mm(p.v_2c, ccp, p.k_dp) + p.k4 * pcc - complexing
            - p.k_dnc * cc;
        dx[PCP] = mm(p.v_1p, pc, p.k_p) - mm(p.v_2p, pcp, p.k_dp) - mm(p.v_dpc, pcp, p.k_d) - p.k_dn * pcp;
        dx[CCP] = mm(p.v_1c, cc, p.k_p) - mm(p.v_2c, ccp, p.k_dp) - mm(p.v_dcc, ccp, p.k_d) - p.k_dn * ccp;

        dx[PCC] = -mm(p.v_1pc, pcc, p.k_p) + mm(p.v_2pc, pccp, p.k_dp) - p.k4 * pcc + complexing + p.k2 * pcn
            - p.k1 * pcc
            - p.k_dn * pcc;
        dx[PCN] = -mm(p.v_3pc, pcn, p.k_p) + mm(p.v_4pc, pcnp, p.k_dp) - p.k2 * pcn + p.k1 * pcc - binding
            + p.k8 * inn
            - p.k_dn * pcn;
        dx[PCCP] = mm(p.v_1pc, pcc, p.k_p) - mm(p.v_2pc, pccp, p.k_dp) - mm(p.v_dpcc, pccp, p.k_d) - p.k_dn * pccp;
        dx[PCNP] = mm(p.v_3pc, pcn, p.k_p) - mm(p.v_4pc, pcnp, p.k_dp) - mm(p.v_dpcn, pcnp, p.k_d) - p.k_dn * pcnp;

        dx[BC] = p.k_sb * mb - mm(p.v_1b, bc, p.k_p) + mm(p.v_2b, bcp, p.k_dp) - p.k5 * bc + p.k6 * bn - p.k_dn * bc;
        dx[BCP] = mm(p.v_1b, bc, p.k_p) - mm(p.v_2b, bcp, p.k_dp) - mm(p.v_dbc, bcp, p.k_d) - p.k_dn * bcp;
        dx[BN] = -mm(p.v_3b, bn, p.k_p) + mm(p.v_4b, bnp, p.k_dp) + p.k5 * bc - p.k6 * bn - binding + p.k8 * inn
            - p.k_dn * bn;
        dx[BNP] = mm(p.v_3b, bn, p.k_p) - mm(p.v_4b, bnp, p.k_dp) - mm(p.v_dbn, bnp, p.k_d) - p.k_dn * bnp;
        dx[IN] = -p.k8 * inn + binding - mm(p.v_din, inn, p.k_d) - p.k_dn * inn;
    }

    fn output(&self, x: &[f64]) -> f64 {
        x[self.output_index]
    }
}
