//! Simulated planar range sensing.
//!
//! Each agent carries a horizontal lidar: rays fan out at uniform angles in
//! its flight plane and return first-hit points on static obstacles and on
//! the spheres of the other active agents.

use crate::error::{Error, Result};
use crate::geometry::{ray_sphere, Sphere, Vec3};
use crate::sim::World;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    /// Number of rays, uniformly spaced over [0, 2*pi).
    pub ray_count: u32,
    /// Hits farther than this are dropped.
    pub max_range: f64,
    /// Whether other active agents appear in the returns.
    pub include_agents: bool,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            ray_count: 360,
            max_range: 5.0,
            include_agents: true,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ray_count < 8 {
            return Err(Error::invalid("ray_count must be at least 8"));
        }
        if !(self.max_range > 0.0) || !self.max_range.is_finite() {
            return Err(Error::invalid("max_range must be positive and finite"));
        }
        Ok(())
    }
}

/// First-hit points from one sweep, stamped with the simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub stamp: f64,
}

/// Sweep the lidar of `agent_id` against the world.
///
/// Goal-removed (inactive) agents contribute no returns. Errors when the
/// sensing agent is itself inactive.
pub fn sense(agent_id: usize, world: &World, cfg: &LidarConfig) -> Result<PointCloud> {
    cfg.validate()?;
    let agent = world
        .agents
        .get(agent_id)
        .ok_or_else(|| Error::invalid(format!("no agent {agent_id}")))?;
    if !agent.active {
        return Err(Error::invalid(format!("agent {agent_id} is not active")));
    }
    let origin = agent.state.position;

    let mut others: Vec<Sphere> = Vec::new();
    if cfg.include_agents {
        for (j, other) in world.agents.iter().enumerate() {
            if j != agent_id && other.active {
                others.push(Sphere {
                    center: other.state.position,
                    radius: other.radius,
                });
            }
        }
    }

    let mut points = Vec::new();
    for k in 0..cfg.ray_count {
        let theta = TAU * k as f64 / cfg.ray_count as f64;
        let dir = Vec3::new(theta.cos(), theta.sin(), 0.0);
        let mut best: Option<f64> = None;
        for sphere in world.scene.obstacles.iter().chain(others.iter()) {
            if let Some(t) = ray_sphere(origin, dir, sphere) {
                if t <= cfg.max_range && best.map_or(true, |b| t < b) {
                    best = Some(t);
                }
            }
        }
        if let Some(t) = best {
            points.push(origin + dir * t);
        }
    }
    Ok(PointCloud {
        points,
        stamp: world.clock(),
    })
}
