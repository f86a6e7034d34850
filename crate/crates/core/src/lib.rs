//! Decentralized multi-agent navigation built from onboard-style sensing:
//! each quadrotor ray-casts its surroundings, shapes a go-to-goal velocity
//! through a control barrier filter synthesized from the resulting point
//! cloud, and defuses mutual blocking with a liveness test over pairwise
//! approach geometry. The crate bundles the geometry and sensing
//! primitives, the safety and liveness filters, rigid-body quadrotor
//! dynamics with a tracking controller, a deterministic two-agent
//! simulation loop, and a batch experiment driver with CSV/JSON outputs.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod liveness;
pub mod metrics;
pub mod perception;
pub mod safety;
pub mod sim;

pub use error::{Error, Result};
pub use geometry::{ray_cast, Aabb, Mat3, Sphere, Vec3};
pub use perception::{sense, LidarConfig, PointCloud};
pub use safety::{
    barrier_value, discrete_cbf_margin, nominal_control, safety_filter, BarrierEval, SafetyConfig,
};
pub use liveness::{
    in_liveness_set, is_deadlock_state, liveness_threshold, liveness_value, min_speed_ratio,
    resolve_deadlock, AgentKinematics, LivenessConfig,
};
pub use dynamics::{
    mechanical_energy, quadrotor_derivative, rk4_step, track_velocity, QuadrotorParams,
    QuadrotorState, Wrench,
};
pub use sim::{
    build_scenario, check_collision, run_episode, AgentSpec, CollisionKind, EpisodeOutcome, Event,
    Outcome, ScenarioKind, SimParams, Simulation, SubstepMode, TrajSample, World,
};
pub use metrics::{region_velocity_stats, summarize, SuiteSummary};
pub use cli::{
    resolve_config, run_suite, run_suite_with_outcomes, validate_config, CliArgs, ExperimentConfig,
};
