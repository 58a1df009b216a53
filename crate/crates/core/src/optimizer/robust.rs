use serde::{Deserialize, Serialize};

/// Huber kernel on the squared whitened residual norm `s = ‖r/σ‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberKernel {
    /// Transition point in whitened pixels.
    pub delta: f64,
}

impl Default for HuberKernel {
    fn default() -> Self {
        // ≈ √5.991, the 2-DoF 95% gate.
        Self { delta: 2.45 }
    }
}

impl HuberKernel {
    pub fn cost(&self, s: f64) -> f64 {
        let d2 = self.delta * self.delta;
        if s <= d2 {
            s
        } else {
            2.0 * self.delta * s.sqrt() - d2
        }
    }

    /// `ρ'(s)`, the IRLS weight.
    pub fn weight(&self, s: f64) -> f64 {
        if s <= self.delta * self.delta {
            1.0
        } else {
            self.delta / s.sqrt()
        }
    }
}

/// Chi-square 95% quantile for 2 degrees of freedom.
pub const CHI2_2DOF_95: f64 = 5.991;
