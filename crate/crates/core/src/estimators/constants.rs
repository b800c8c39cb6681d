use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds of the sign-alignment estimators.
///
/// Only the four primitives are stored; the derived thresholds are recomputed on demand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConstants {
    pub c_a: f64,
    pub c_b: f64,
    pub tau_a: f64,
    pub tau_b: f64,
}

impl Default for EstimatorConstants {
    fn default() -> Self {
        EstimatorConstants {
            c_a: 50.0,
            c_b: 30.0,
            tau_a: 59.0 / 60.0,
            tau_b: 399.0 / 400.0,
        }
    }
}

impl EstimatorConstants {
    /// Same C_a, C_b with a wider (tau_a, tau_b) gap for desk-scale experiments.
    pub fn relaxed(tau_a: f64, tau_b: f64) -> Self {
        EstimatorConstants {
            tau_a,
            tau_b,
            ..Default::default()
        }
    }

    pub fn gap(&self) -> f64 {
        self.tau_b - self.tau_a
    }

    pub fn tau_m(&self) -> f64 {
        (self.tau_a + self.tau_b) / 2.0
    }

    pub fn tau_m1(&self) -> f64 {
        self.tau_a + self.gap() / 5.0
    }

    pub fn tau_m2(&self) -> f64 {
        self.tau_b - self.gap() / 5.0
    }

    pub fn tau_delta_threshold(&self) -> f64 {
        self.gap() / 10.0
    }

    pub fn tau_delta_stable(&self) -> f64 {
        self.gap() / 25.0
    }

    /// Low/high cutoffs of the flip number.
    pub fn flip_low(&self) -> f64 {
        self.tau_a + 0.4 * self.gap()
    }

    pub fn flip_high(&self) -> f64 {
        self.tau_b - 0.4 * self.gap()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_a > 0.0 && self.c_b > 0.0) {
            return Err(Error::param("c_a/c_b", "must be positive"));
        }
        if !(0.5 < self.tau_a && self.tau_a < self.tau_b && self.tau_b < 1.0) {
            return Err(Error::param(
                "tau_a/tau_b",
                format!("need 1/2 < tau_a < tau_b < 1 (got {}, {})", self.tau_a, self.tau_b),
            ));
        }
        Ok(())
    }
}
