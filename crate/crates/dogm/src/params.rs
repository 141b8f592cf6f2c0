//! Filter configuration: particle budgets, survival/birth probabilities,
//! process and birth noise, free-mass discount, and the master seed.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("{name} must be a probability in [0,1], got {value}")]
    BadProbability { name: &'static str, value: f64 },
    #[error("{name} must be non-negative and finite, got {value}")]
    BadSigma { name: &'static str, value: f64 },
    #[error("{name} must be positive, got {value}")]
    BadCount { name: &'static str, value: usize },
    #[error("free_discount_tau must be positive (may be +inf to disable), got {0}")]
    BadTau(f64),
}

/// All per-run filter parameters. Defaults follow the reference
/// experimental configuration: 2·10⁶ persistent and 2·10⁵ new-born particles,
/// survival probability 0.99, birth probability 0.02, birth velocity spread
/// 4 m/s, process noise 0.02 m and 0.8 m/s per second of prediction horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    /// Persistent particle budget ν (resampling output size).
    pub particle_count: usize,
    /// New-born particle budget ν_b per step.
    pub birth_particle_count: usize,
    /// Survival probability p_S applied to every predicted weight.
    pub persistence_prob: f64,
    /// Birth probability p_B splitting updated occupancy into new-born mass.
    pub birth_prob: f64,
    /// Standard deviation of each new-born velocity component, m/s.
    pub sigma_birth_vel: f64,
    /// Process position noise, meters per second of horizon: the SD applied
    /// in one prediction over `dt` is `sigma_process_pos * dt / 1s`.
    pub sigma_process_pos: f64,
    /// Process velocity noise, m/s per second of horizon, scaled like
    /// `sigma_process_pos`.
    pub sigma_process_vel: f64,
    /// Time constant τ of the free-mass discount α(T) = exp(−T/τ). Setting
    /// +inf keeps free mass undamped.
    pub free_discount_tau: f64,
    /// Master seed for all random streams.
    pub seed: u64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            particle_count: 2_000_000,
            birth_particle_count: 200_000,
            persistence_prob: 0.99,
            birth_prob: 0.02,
            sigma_birth_vel: 4.0,
            sigma_process_pos: 0.02,
            sigma_process_vel: 0.8,
            free_discount_tau: 2.0,
            seed: 0,
        }
    }
}

impl FilterParams {
    pub fn validate(&self) -> Result<(), ParamsError> {
        fn prob(name: &'static str, value: f64) -> Result<(), ParamsError> {
            if value.is_finite() && (0.0..=1.0).contains(&value) {
                Ok(())
            } else {
                Err(ParamsError::BadProbability { name, value })
            }
        }
        fn sigma(name: &'static str, value: f64) -> Result<(), ParamsError> {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(ParamsError::BadSigma { name, value })
            }
        }
        fn count(name: &'static str, value: usize) -> Result<(), ParamsError> {
            if value > 0 {
                Ok(())
            } else {
                Err(ParamsError::BadCount { name, value })
            }
        }
        count("particle_count", self.particle_count)?;
        count("birth_particle_count", self.birth_particle_count)?;
        prob("persistence_prob", self.persistence_prob)?;
        prob("birth_prob", self.birth_prob)?;
        sigma("sigma_birth_vel", self.sigma_birth_vel)?;
        sigma("sigma_process_pos", self.sigma_process_pos)?;
        sigma("sigma_process_vel", self.sigma_process_vel)?;
        if self.free_discount_tau > 0.0 && !self.free_discount_tau.is_nan() {
            Ok(())
        } else {
            Err(ParamsError::BadTau(self.free_discount_tau))
        }
    }

    /// Free-mass discount factor for a prediction horizon of `dt` seconds.
    pub fn free_discount(&self, dt: f64) -> f64 {
        (-dt / self.free_discount_tau).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        FilterParams::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_values() {
        let mut p = FilterParams::default();
        p.persistence_prob = 1.5;
        assert!(matches!(p.validate(), Err(ParamsError::BadProbability { .. })));

        let mut p = FilterParams::default();
        p.particle_count = 0;
        assert!(matches!(p.validate(), Err(ParamsError::BadCount { .. })));

        let mut p = FilterParams::default();
        p.sigma_birth_vel = -1.0;
        assert!(matches!(p.validate(), Err(ParamsError::BadSigma { .. })));

        let mut p = FilterParams::default();
        p.free_discount_tau = 0.0;
        assert!(matches!(p.validate(), Err(ParamsError::BadTau(_))));
    }

    #[test]
    fn infinite_tau_disables_the_discount() {
        let mut p = FilterParams::default();
        p.free_discount_tau = f64::INFINITY;
        p.validate().unwrap();
        assert_eq!(p.free_discount(0.1), 1.0);
    }

    #[test]
    fn discount_decays_with_horizon() {
        let p = FilterParams::default();
        let a = p.free_discount(0.1);
        assert!((a - (-0.05f64).exp()).abs() < 1e-15);
        assert!(p.free_discount(0.2) < a);
    }
}
