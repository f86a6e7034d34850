//! Barrier synthesis from raw point clouds and the closed-form safety filter.
//!
//! The barrier over a cloud P is `h(q) = min_{p in P} |q - p|^2 - delta^2`:
//! nonnegative exactly when every sensed point stays at least `delta` away.
//! A commanded velocity u is safe when `grad_h . u + alpha_gain * h >= 0`;
//! unsafe commands are projected onto that half-space, which is the
//! minimum-norm correction.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::perception::PointCloud;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    /// Clearance radius maintained against every cloud point.
    pub delta: f64,
    /// Linear class-K gain: alpha(h) = alpha_gain * h.
    pub alpha_gain: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig { delta: 0.1, alpha_gain: 1.0 }
    }
}

impl SafetyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::invalid("delta must be positive and finite"));
        }
        if !(self.alpha_gain > 0.0) || !self.alpha_gain.is_finite() {
            return Err(Error::invalid("alpha_gain must be positive and finite"));
        }
        Ok(())
    }
}

/// Barrier value with its gradient and the minimizing cloud point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub value: f64,
    /// Gradient of the squared-distance barrier: 2 * (q - nearest_point).
    pub gradient: Vec3,
    pub nearest_point: Vec3,
}

/// Evaluate the barrier at `q` over the cloud. `None` when the cloud is
/// empty (no obstacle in range; the constraint is inactive). Distance ties
/// resolve to the lowest point index.
pub fn barrier_value(q: Vec3, cloud: &PointCloud, cfg: &SafetyConfig) -> Option<BarrierEval> {
    let mut nearest: Option<(f64, Vec3)> = None;
    for p in &cloud.points {
        let d2 = (q - *p).norm_squared();
        if nearest.map_or(true, |(best, _)| d2 < best) {
            nearest = Some((d2, *p));
        }
    }
    nearest.map(|(d2, p)| BarrierEval {
        value: d2 - cfg.delta * cfg.delta,
        gradient: (q - p) * 2.0,
        nearest_point: p,
    })
}

/// Project the nominal command onto the safe half-space
/// `grad_h . u + alpha_gain * h >= 0`.
///
/// Safe commands pass through unchanged. Errors when the gradient is
/// numerically zero while the constraint is violated (no command can help).
pub fn safety_filter(u_nom: Vec3, eval: &BarrierEval, cfg: &SafetyConfig) -> Result<Vec3> {
    let slack = eval.gradient.dot(u_nom) + cfg.alpha_gain * eval.value;
    if slack >= 0.0 {
        return Ok(u_nom);
    }
    let g2 = eval.gradient.norm_squared();
    if g2 < 1e-24 {
        return Err(Error::InfeasibleConstraint);
    }
    Ok(u_nom - eval.gradient * (slack / g2))
}

/// Proportional go-to-goal velocity, clamped to `v_cap`.
pub fn nominal_control(q: Vec3, goal: Vec3, gain: f64, v_cap: f64) -> Vec3 {
    debug_assert!(gain > 0.0 && v_cap > 0.0);
    let u = (goal - q) * gain;
    let n = u.norm();
    if n > v_cap {
        u * (v_cap / n)
    } else {
        u
    }
}

/// One-step discrete barrier margin: `h_next - h_curr + alpha_gain * h_curr * dt`.
/// Nonnegative when the step respected the decay condition.
pub fn discrete_cbf_margin(h_next: f64, h_curr: f64, cfg: &SafetyConfig, dt: f64) -> f64 {
    debug_assert!(dt > 0.0);
    h_next - h_curr + cfg.alpha_gain * h_curr * dt
}
