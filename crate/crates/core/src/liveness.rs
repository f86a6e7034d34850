//! Deadlock prediction and minimally invasive resolution.
//!
//! Two agents heading into a symmetric conflict have their relative
//! displacement aligned with their relative velocity; the angle between
//! those two vectors (the liveness angle) approaches zero on a collision
//! course and stays large for resolved geometries. When the angle falls
//! below a threshold, lower-priority agents scale their commanded speed
//! down (heading untouched) until the joint speed vector re-enters the
//! liveness set, where one agent clears the conflict region first.

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LivenessConfig {
    /// Required speed ratio between consecutively ranked agents.
    pub zeta: f64,
    /// Liveness angle below which a deadlock is predicted.
    pub ell_thresh: f64,
    /// Regularizer guarding the zero-relative-velocity case.
    pub epsilon: f64,
    /// Speed below which an agent counts as stopped.
    pub deadlock_speed_floor: f64,
    /// How long an agent must dwell below the floor to be deadlocked.
    pub deadlock_dwell: f64,
}

impl Default for LivenessConfig {
    fn default() -> Self {
        LivenessConfig {
            zeta: 2.0,
            ell_thresh: 0.3,
            epsilon: 1e-6,
            deadlock_speed_floor: 0.01,
            deadlock_dwell: 1.0,
        }
    }
}

impl LivenessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta >= 1.0) || !self.zeta.is_finite() {
            return Err(Error::invalid("zeta must be >= 1"));
        }
        if !(self.ell_thresh > 0.0 && self.ell_thresh < PI) {
            return Err(Error::invalid("ell_thresh must lie in (0, pi)"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.deadlock_speed_floor > 0.0) {
            return Err(Error::invalid("deadlock_speed_floor must be positive"));
        }
        if !(self.deadlock_dwell > 0.0) {
            return Err(Error::invalid("deadlock_dwell must be positive"));
        }
        Ok(())
    }
}

/// Positional snapshot of one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentKinematics {
    pub position: Vec3,
    pub velocity: Vec3,
    pub speed: f64,
    /// Unit velocity, absent while the agent is at rest.
    pub heading: Option<Vec3>,
}

impl AgentKinematics {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        AgentKinematics {
            position,
            velocity,
            speed: velocity.norm(),
            heading: velocity.try_normalized(),
        }
    }
}

/// Liveness angle between the relative displacement `p_b - p_a` and the
/// relative velocity `v_a - v_b`, in [0, pi]. Near zero means `a` is
/// closing on `b` along the line joining them.
pub fn liveness_value(a: &AgentKinematics, b: &AgentKinematics, cfg: &LivenessConfig) -> f64 {
    let dp = b.position - a.position;
    let dv = a.velocity - b.velocity;
    let cos = dp.dot(dv) / (dp.norm() * dv.norm() + cfg.epsilon);
    cos.clamp(-1.0, 1.0).acos()
}

/// Largest liveness angle still classified as a conflict for a given speed
/// ratio: `pi/4 - arctan(1/zeta)`. Errors for `zeta < 1`.
pub fn liveness_threshold(zeta: f64) -> Result<f64> {
    if !(zeta >= 1.0) || !zeta.is_finite() {
        return Err(Error::invalid("zeta must be >= 1"));
    }
    Ok(FRAC_PI_4 - (1.0 / zeta).atan())
}

/// Minimum speed ratio guaranteeing that the faster agent clears a shared
/// conflict point of extent `l` at distance `d` before the slower one
/// (tolerance `eps` on the slower agent's speed `v`).
pub fn min_speed_ratio(l: f64, d: f64, eps: f64, v: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::invalid("conflict extent l must be positive"));
    }
    if !(d > 0.0) {
        return Err(Error::invalid("distance d must be positive"));
    }
    if !(eps >= 0.0) {
        return Err(Error::invalid("eps must be nonnegative"));
    }
    if !(v > eps) {
        return Err(Error::invalid("speed v must exceed eps"));
    }
    Ok((1.0 + l / d) * (1.0 - eps / v))
}

/// Whether some ranking of the joint speeds has every adjacent pair
/// separated by a factor of at least `zeta`.
pub fn in_liveness_set(speeds: &[f64], zeta: f64) -> bool {
    debug_assert!(speeds.len() >= 2);
    debug_assert!(speeds.iter().all(|s| *s >= 0.0));
    let mut sorted = speeds.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.windows(2).all(|w| w[0] >= zeta * w[1])
}

/// Scale commanded speeds down (headings unchanged) so the joint speed
/// vector enters the liveness set.
///
/// With an explicit priority order, the leader keeps its speed and each
/// follower is capped at the previous agent's resolved speed over `zeta`.
/// Without one, ranking by current speed gives the unique minimum-norm
/// slow-down-only correction; identical speeds are then ambiguous and
/// rejected. Joint speeds already in the set pass through untouched.
pub fn resolve_deadlock(
    agents: &[AgentKinematics],
    priority: Option<&[usize]>,
    cfg: &LivenessConfig,
) -> Result<Vec<Vec3>> {
    if agents.len() < 2 {
        return Err(Error::invalid("resolution needs at least two agents"));
    }
    let speeds: Vec<f64> = agents.iter().map(|a| a.speed).collect();
    let order: Vec<usize> = match priority {
        // With an explicit order the chain itself decides: it must hold in
        // that order, so a joint vector feasible only under some other
        // ranking still gets capped.
        Some(p) => {
            let mut seen = vec![false; agents.len()];
            if p.len() != agents.len() || p.iter().any(|&i| i >= agents.len() || std::mem::replace(&mut seen[i], true)) {
                return Err(Error::invalid("priority must be a permutation of agent indices"));
            }
            p.to_vec()
        }
        None => {
            if in_liveness_set(&speeds, cfg.zeta) {
                return Ok(agents.iter().map(|a| a.velocity).collect());
            }
            let mut idx: Vec<usize> = (0..agents.len()).collect();
            idx.sort_by(|&a, &b| speeds[b].total_cmp(&speeds[a]));
            if idx.windows(2).any(|w| speeds[w[0]] == speeds[w[1]]) {
                return Err(Error::AmbiguousResolution);
            }
            idx
        }
    };

    let mut out: Vec<Vec3> = agents.iter().map(|a| a.velocity).collect();
    let mut prev = speeds[order[0]];
    for &i in order.iter().skip(1) {
        // Decide by the set-membership inequality itself; `s <= prev/zeta`
        // does not imply `zeta*s <= prev` once both sides round.
        if cfg.zeta * speeds[i] <= prev {
            prev = speeds[i];
            continue;
        }
        let mut target = prev / cfg.zeta;
        let mut capped = out[i].with_norm(target);
        // Rescaling rounds, so walk the target down until the achieved
        // norm satisfies the exact inequality (a few ulps at most).
        while cfg.zeta * capped.norm() > prev && target > 0.0 {
            target = target.next_down();
            capped = out[i].with_norm(target);
        }
        out[i] = capped;
        prev = capped.norm();
    }
    Ok(out)
}

/// Whether an agent is in a deadlock state: away from its goal, slower
/// than the floor, for at least the dwell time.
pub fn is_deadlock_state(
    kin: &AgentKinematics,
    at_goal: bool,
    low_speed_duration: f64,
    cfg: &LivenessConfig,
) -> bool {
    debug_assert!(low_speed_duration >= 0.0);
    !at_goal && kin.speed < cfg.deadlock_speed_floor && low_speed_duration >= cfg.deadlock_dwell
}
