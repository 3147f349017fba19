//! System-level configuration shared across the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which channel of a paired sample an operation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Ul,
    Dl,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Ul => "ul",
            Side::Dl => "dl",
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ul" | "UL" => Ok(Side::Ul),
            "dl" | "DL" => Ok(Side::Dl),
            other => Err(Error::Config(format!("unknown side '{other}'"))),
        }
    }
}

/// Antenna counts, power budgets and carrier frequencies of one scenario.
///
/// Powers are linear (any unit, as long as `rho` and `sigma_n2` share it);
/// frequencies are in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Transmit antenna count at the base station.
    pub n_tx: usize,
    /// Receive antenna count at the terminal (must be < `n_tx`).
    pub n_rx: usize,
    /// Total transmit power, linear.
    pub rho: f64,
    /// Noise variance, linear (same unit as `rho`).
    pub sigma_n2: f64,
    /// Uplink carrier frequency in Hz.
    pub f_ul: f64,
    /// Downlink carrier frequency in Hz (must be > `f_ul`).
    pub f_dl: f64,
    /// Number of downlink pilots.
    pub n_p: usize,
}

impl SystemConfig {
    pub fn new(
        n_tx: usize,
        n_rx: usize,
        rho: f64,
        sigma_n2: f64,
        f_ul: f64,
        f_dl: f64,
        n_p: usize,
    ) -> Result<Self> {
        let cfg = SystemConfig {
            n_tx,
            n_rx,
            rho,
            sigma_n2,
            f_ul,
            f_dl,
            n_p,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A small default scenario: 15 dBm transmit power, -114 dBm noise,
    /// 2.53/2.73 GHz carriers.
    pub fn with_defaults(n_tx: usize, n_rx: usize, n_p: usize) -> Result<Self> {
        SystemConfig::new(
            n_tx,
            n_rx,
            dbm_to_mw(15.0),
            dbm_to_mw(-114.0),
            2.53e9,
            2.73e9,
            n_p,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        if self.n_rx >= self.n_tx {
            return Err(Error::Config(format!(
                "n_rx ({}) must be smaller than n_tx ({})",
                self.n_rx, self.n_tx
            )));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::Config("rho must be positive and finite".into()));
        }
        if !(self.sigma_n2 > 0.0) || !self.sigma_n2.is_finite() {
            return Err(Error::Config("sigma_n2 must be positive and finite".into()));
        }
        if !(self.f_dl > self.f_ul) || self.f_ul <= 0.0 {
            return Err(Error::Config(
                "carrier frequencies must satisfy 0 < f_ul < f_dl".into(),
            ));
        }
        if self.n_p == 0 {
            return Err(Error::Config("n_p must be positive".into()));
        }
        Ok(())
    }
}

/// dBm to linear milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Linear power ratio to decibels.
pub fn ratio_to_db(ratio: f64) -> f64 {
    10.0 * ratio.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_square_systems() {
        assert!(SystemConfig::new(4, 4, 1.0, 1.0, 1.0e9, 1.2e9, 4).is_err());
    }

    #[test]
    fn rejects_inverted_carriers() {
        assert!(SystemConfig::new(4, 2, 1.0, 1.0, 2.0e9, 1.5e9, 4).is_err());
    }

    #[test]
    fn dbm_roundtrip() {
        assert!((dbm_to_mw(15.0) - 31.6227766016838).abs() < 1e-10);
        assert!((ratio_to_db(100.0) - 20.0).abs() < 1e-12);
    }
}
