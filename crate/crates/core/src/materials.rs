//! Material properties and process parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid {field}: {reason}")]
pub struct ParamError {
    pub field: &'static str,
    pub reason: String,
}

fn check(ok: bool, field: &'static str, reason: impl Into<String>) -> Result<(), ParamError> {
    if ok {
        Ok(())
    } else {
        Err(ParamError { field, reason: reason.into() })
    }
}

/// Isotropic, temperature independent bulk properties. Units: kg/mm³, J/(kg·K), W/(mm·K).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaterialProps {
    pub rho: f64,
    pub c: f64,
    pub k: f64,
}

impl MaterialProps {
    /// AlSi10Mg.
    pub fn alsi10mg() -> Self {
        Self { rho: 2.67e-6, c: 910.0, k: 119e-3 }
    }

    /// Volumetric heat capacity ρc in J/(mm³·K).
    pub fn rho_c(&self) -> f64 {
        self.rho * self.c
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.rho > 0.0, "materials.rho", format!("must be > 0, got {}", self.rho))?;
        check(self.c > 0.0, "materials.c", format!("must be > 0, got {}", self.c))?;
        check(self.k > 0.0, "materials.k", format!("must be > 0, got {}", self.k))
    }
}

impl Default for MaterialProps {
    fn default() -> Self {
        Self::alsi10mg()
    }
}

/// Flash-heating process parameters and ersatz factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessParams {
    /// Volume heat flux in W/mm³.
    pub q: f64,
    /// Heating time per layer (s), performed in a single implicit step.
    pub t_h: f64,
    /// Cooling time per layer (s).
    pub t_c: f64,
    pub dt_cool: f64,
    /// Build plate and initial temperature (°C).
    pub t_amb: f64,
    /// Cooling steps entering the objective.
    pub n_obj: usize,
    /// Property factor for not-yet-built layers.
    pub ersatz_inactive: f64,
    /// Property factor for void in the smoothed interpolation.
    pub d_void: f64,
    /// Heaviside transition half width.
    pub w_heaviside: f64,
}

impl ProcessParams {
    pub fn default_process() -> Self {
        Self {
            q: 2e4,
            t_h: 0.5e-3,
            t_c: 10.0,
            dt_cool: 1.0,
            t_amb: 20.0,
            n_obj: 3,
            ersatz_inactive: 1e-3,
            d_void: 1e-3,
            w_heaviside: 0.9,
        }
    }

    /// Number of cooling steps `t_c / dt_cool`.
    pub fn n_cool(&self) -> usize {
        (self.t_c / self.dt_cool).round() as usize
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        check(self.q >= 0.0 && self.q.is_finite(), "process.q", format!("must be >= 0, got {}", self.q))?;
        check(self.t_h > 0.0, "process.t_h", format!("must be > 0, got {}", self.t_h))?;
        check(self.dt_cool > 0.0, "process.dt_cool", format!("must be > 0, got {}", self.dt_cool))?;
        check(self.t_c > 0.0, "process.t_c", format!("must be > 0, got {}", self.t_c))?;
        let ratio = self.t_c / self.dt_cool;
        check(
            (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0),
            "process.t_c",
            format!("t_c = {} is not an integer multiple of dt_cool = {}", self.t_c, self.dt_cool),
        )?;
        check(self.t_amb.is_finite(), "process.t_amb", "must be finite")?;
        check(
            self.n_obj >= 1 && self.n_obj <= self.n_cool(),
            "process.n_obj",
            format!("must lie in 1..={}, got {}", self.n_cool(), self.n_obj),
        )?;
        check(
            self.ersatz_inactive > 0.0 && self.ersatz_inactive < 1.0,
            "process.ersatz_inactive",
            format!("must lie in (0, 1), got {}", self.ersatz_inactive),
        )?;
        check(
            self.d_void > 0.0 && self.d_void < 1.0,
            "process.d_void",
            format!("must lie in (0, 1), got {}", self.d_void),
        )?;
        check(
            self.w_heaviside > 0.0 && self.w_heaviside <= 1.0,
            "process.w_heaviside",
            format!("must lie in (0, 1], got {}", self.w_heaviside),
        )
    }
}

impl Default for ProcessParams {
    fn default() -> Self {
        Self::default_process()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alsi10mg_values() {
        let m = MaterialProps::alsi10mg();
        assert_eq!(m.rho, 2.67e-6);
        assert_eq!(m.c, 910.0);
        assert_eq!(m.k, 0.119);
        assert!(m.validate().is_ok());
    }

    #[test]
    fn default_process_values() {
        let p = ProcessParams::default_process();
        assert_eq!(p.q, 2e4);
        assert_eq!(p.t_h, 0.5e-3);
        assert_eq!(p.n_cool(), 10);
        assert_eq!(p.n_obj, 3);
        assert_eq!((p.ersatz_inactive, p.d_void, p.w_heaviside), (1e-3, 1e-3, 0.9));
        assert!(p.validate().is_ok());
    }

    #[test]
    fn named_field_errors() {
        let mut p = ProcessParams::default();
        p.dt_cool = 3.0;
        assert_eq!(p.validate().unwrap_err().field, "process.t_c");
        let mut p = ProcessParams::default();
        p.n_obj = 11;
        assert_eq!(p.validate().unwrap_err().field, "process.n_obj");
        let mut p = ProcessParams::default();
        p.w_heaviside = 0.0;
        assert_eq!(p.validate().unwrap_err().field, "process.w_heaviside");
        let mut p = ProcessParams::default();
        p.q = -1.0;
        assert_eq!(p.validate().unwrap_err().field, "process.q");
        let m = MaterialProps { rho: 0.0, ..MaterialProps::default() };
        assert_eq!(m.validate().unwrap_err().field, "materials.rho");
    }
}
