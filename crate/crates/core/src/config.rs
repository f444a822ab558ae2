//! Scenario configuration, loaded from flat TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pilots::Modulation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermMethod {
    None,
    Csi,
    Phy,
}

impl std::str::FromStr for PermMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(PermMethod::None),
            "csi" => Ok(PermMethod::Csi),
            "phy" => Ok(PermMethod::Phy),
            other => Err(format!("unknown permutation method '{other}'")),
        }
    }
}

/// How JED is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    /// Per-virtual-cell LS, James-Stein shrinkage and L-MMSE.
    Blockjs,
    /// Plain LS over the whole pilot matrix and L-MMSE with the true noise level.
    Ls,
    /// The l1 channel estimate and L-MMSE with the true noise level.
    L1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "B")]
    pub b: usize,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub modulation: Modulation,
    #[serde(rename = "N_cells")]
    pub n_cells: usize,
    #[serde(default = "defaults::area_m")]
    pub area_m: f64,
    #[serde(default = "defaults::ap_height_m")]
    pub ap_height_m: f64,
    #[serde(default = "defaults::ue_height_m")]
    pub ue_height_m: f64,
    #[serde(rename = "P_db", default = "defaults::p_db")]
    pub p_db: f64,
    #[serde(default = "defaults::sigma_sh_db")]
    pub sigma_sh_db: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::trials")]
    pub trials: usize,
    #[serde(default = "defaults::perm")]
    pub perm: PermMethod,
    #[serde(default = "defaults::init")]
    pub init: InitMethod,
    pub mu: f64,
    pub gamma: f64,
    pub mu1: f64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::tol")]
    pub tol: f64,
    /// Solver budget for the l1 baseline.
    #[serde(default = "defaults::l1_max_iter")]
    pub l1_max_iter: usize,
}

mod defaults {
    use super::{InitMethod, PermMethod};

    pub fn area_m() -> f64 {
        1000.0
    }
    pub fn ap_height_m() -> f64 {
        15.0
    }
    pub fn ue_height_m() -> f64 {
        1.65
    }
    pub fn p_db() -> f64 {
        12.0
    }
    pub fn sigma_sh_db() -> f64 {
        8.0
    }
    pub fn trials() -> usize {
        50
    }
    pub fn perm() -> PermMethod {
        PermMethod::Csi
    }
    pub fn init() -> InitMethod {
        InitMethod::Blockjs
    }
    pub fn max_iter() -> usize {
        5000
    }
    pub fn tol() -> f64 {
        1e-6
    }
    pub fn l1_max_iter() -> usize {
        2000
    }
}

impl SystemConfig {
    pub fn d(&self) -> usize {
        self.k - self.t
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.b == 0 || self.u == 0 {
            return bad("B and U must be positive".into());
        }
        if self.t == 0 || self.t > self.u {
            return bad(format!("need 1 <= T <= U, got T={} U={}", self.t, self.u));
        }
        if self.k <= self.t {
            return bad(format!("K={} leaves no payload after T={}", self.k, self.t));
        }
        if self.n_cells == 0 {
            return bad("N_cells must be positive".into());
        }
        if self.perm != PermMethod::None || self.init == InitMethod::Blockjs {
            if self.u % self.t != 0 || self.u / self.t != self.n_cells {
                return bad(format!(
                    "virtual-cell training needs U = N_cells * T (U={}, T={}, N_cells={})",
                    self.u, self.t, self.n_cells
                ));
            }
        }
        if self.perm != PermMethod::None && self.b % self.n_cells != 0 {
            return Err(Error::Divisibility(self.n_cells, self.b));
        }
        if !(self.area_m > 0.0) || self.p_db < 0.0 || self.sigma_sh_db < 0.0 {
            return bad("area_m must be positive, P_db and sigma_sh_db nonnegative".into());
        }
        if self.mu < 0.0 || self.gamma < 0.0 || self.mu1 < 0.0 {
            return bad("mu, gamma and mu1 must be nonnegative".into());
        }
        if self.trials == 0 || self.max_iter == 0 || !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("trials and max_iter must be positive, tol in (0,1)".into());
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: SystemConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
