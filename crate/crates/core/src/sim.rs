//! Scenario construction and the sequential multi-agent control loop.
//!
//! A cycle is one full control round: each agent in index order senses its
//! point cloud, filters its go-to-goal command through the barrier
//! constraint, optionally applies the liveness slow-down, and hands the
//! command to the quadrotor tracking loop. In the default interleaved mode
//! an agent integrates physics only during its own 0.02 s sub-step; the
//! simultaneous mode instead freezes all commands at the cycle start and
//! integrates every active agent through both sub-steps. Either way the
//! clock advances 0.02 s per sub-step, so a two-agent cycle spans 0.04 s.
//!
//! An episode ends when every agent has been removed at its goal
//! (success), when any center distance drops below the contact sum
//! (collision), or when the cycle budget runs out (deadlock).

use crate::dynamics::{rk4_step, track_velocity, QuadrotorParams, QuadrotorState};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Scene, Sphere, Vec3};
use crate::liveness::{liveness_value, resolve_deadlock, AgentKinematics, LivenessConfig};
use crate::perception::{sense, LidarConfig};
use crate::safety::{barrier_value, discrete_cbf_margin, nominal_control, safety_filter, SafetyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Physics and per-agent control period.
pub const SUBSTEP_DT: f64 = 0.02;
/// Duration of one full two-agent control cycle.
pub const CYCLE_DT: f64 = 0.04;
/// Cycle budget before an episode is classified as a deadlock.
pub const DEFAULT_MAX_CYCLES: u32 = 400;
/// Arrival radius at which an agent is removed from the simulation.
pub const DEFAULT_GOAL_RADIUS: f64 = 0.1;
/// Body radius of every agent.
pub const AGENT_RADIUS: f64 = 0.1;
/// Radius of every static obstacle sphere.
pub const OBSTACLE_RADIUS: f64 = 0.25;
/// Fixed flight plane of the planar scenarios.
pub const FLIGHT_ALTITUDE: f64 = 1.0;
/// Start distance from the doorway gap.
pub const START_DISTANCE: f64 = 2.0;
/// Start distance from the intersection crossing. Shorter than the doorway
/// run-up: the crossing needs no staging room in front of it, and 1.5 m
/// keeps completion times in the same band as the doorway's.
pub const INTERSECTION_START_DISTANCE: f64 = 1.5;
/// Half-width of the constrained metric region around the bottleneck.
pub const REGION_HALF_WIDTH: f64 = 0.3;
/// Default uniform perturbation of start positions.
pub const DEFAULT_JITTER: f64 = 0.02;
/// Largest accepted start jitter; beyond this the starts leave the
/// corridor clearance the scenarios were designed around.
pub const MAX_JITTER: f64 = 0.1;
/// Slack granted to the discrete barrier margin for tracking error.
pub const MARGIN_TOLERANCE: f64 = 1e-2;

const WALL_SPACING: f64 = 0.25;
const WALL_SPHERES_PER_ARM: usize = 9;
// Innermost doorway sphere centers sit at |y| = 0.4, leaving surface-to-
// surface gap edges at |y| = 0.15 (a 0.3 m passage).
const DOORWAY_GAP_CENTER_OFFSET: f64 = 0.4;
const DOORWAY_LATERAL_OFFSET: f64 = 0.3;
// Corridor wall centers sit 0.45 from the axis: 0.2 half-width plus the
// 0.25 sphere radius. At 0.2 the passable band is one agent wide, so two
// agents cannot share a cross-section of an arm.
const CORRIDOR_WALL_OFFSET: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Doorway,
    Intersection,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioKind::Doorway => write!(f, "doorway"),
            ScenarioKind::Intersection => write!(f, "intersection"),
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "doorway" => Ok(ScenarioKind::Doorway),
            "intersection" => Ok(ScenarioKind::Intersection),
            other => Err(Error::invalid(format!(
                "unknown scenario '{other}' (expected doorway or intersection)"
            ))),
        }
    }
}

/// Whether agents move only in their own sub-step or all together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "lowercase")]
pub enum SubstepMode {
    #[default]
    Interleaved,
    Simultaneous,
}

impl fmt::Display for SubstepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubstepMode::Interleaved => write!(f, "interleaved"),
            SubstepMode::Simultaneous => write!(f, "simultaneous"),
        }
    }
}

impl FromStr for SubstepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interleaved" => Ok(SubstepMode::Interleaved),
            "simultaneous" => Ok(SubstepMode::Simultaneous),
            other => Err(Error::invalid(format!(
                "unknown substep mode '{other}' (expected interleaved or simultaneous)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentSpec {
    pub start: Vec3,
    pub goal: Vec3,
    pub radius: f64,
    /// Cleared once the agent reaches its goal and leaves the simulation.
    pub active: bool,
    pub state: QuadrotorState,
}

impl AgentSpec {
    pub fn new(start: Vec3, goal: Vec3, radius: f64) -> Result<Self> {
        if !start.is_finite() || !goal.is_finite() {
            return Err(Error::invalid("agent start and goal must be finite"));
        }
        if start == goal {
            return Err(Error::invalid("agent start must differ from its goal"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("agent radius must be positive"));
        }
        Ok(AgentSpec {
            start,
            goal,
            radius,
            active: true,
            state: QuadrotorState::at_rest(start),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub scene: Scene,
    pub agents: Vec<AgentSpec>,
    /// Bottleneck box over which the velocity metrics are computed.
    pub constrained_region: Aabb,
    pub cycle: u32,
    pub substep: u32,
}

impl World {
    pub fn new(scene: Scene, agents: Vec<AgentSpec>, constrained_region: Aabb) -> Result<Self> {
        if agents.len() < 2 {
            return Err(Error::invalid("a world starts with at least two agents"));
        }
        for agent in &agents {
            if !scene.bounds.contains(agent.start) || !scene.bounds.contains(agent.goal) {
                return Err(Error::invalid("agent endpoints must lie inside the scene bounds"));
            }
        }
        Ok(World {
            scene,
            agents,
            constrained_region,
            cycle: 0,
            substep: 0,
        })
    }

    /// Simulation time. Computed from the integer counters so that after
    /// any whole number of cycles the clock equals cycle * 0.04 exactly.
    pub fn clock(&self) -> f64 {
        (self.agents.len() as u32 * self.cycle + self.substep) as f64 * SUBSTEP_DT
    }

    pub fn active_count(&self) -> usize {
        self.agents.iter().filter(|a| a.active).count()
    }

    fn advance_substep(&mut self) {
        self.substep += 1;
        if self.substep as usize == self.agents.len() {
            self.substep = 0;
            self.cycle += 1;
        }
    }
}

/// The metric region shared by both shipped scenarios: a 0.6 m box
/// centered on the doorway gap / intersection crossing.
pub fn constrained_region() -> Aabb {
    Aabb::new(
        Vec3::new(-REGION_HALF_WIDTH, -REGION_HALF_WIDTH, 0.0),
        Vec3::new(REGION_HALF_WIDTH, REGION_HALF_WIDTH, 2.0),
    )
    .expect("static region box is well-formed")
}

/// Build one of the two shipped bottleneck scenarios.
///
/// Doorway: a wall of overlapping spheres along x = 0 with a 0.3 m gap at
/// the origin; the agents start mirror-symmetric on the near side, 2 m
/// from the gap center, with goals mirrored through the origin so both
/// straight-line paths thread the gap. Intersection: two 0.4 m-wide
/// corridors crossing at the origin; the agents approach at right angles
/// and exit straight through. Start positions are perturbed uniformly in
/// [-jitter, +jitter] per horizontal axis, drawn in agent order (x before
/// y) from a counter-based generator, so equal (kind, seed, jitter)
/// triples build identical worlds.
pub fn build_scenario(kind: ScenarioKind, seed: u64, jitter: f64) -> Result<World> {
    if !jitter.is_finite() || !(0.0..=MAX_JITTER).contains(&jitter) {
        return Err(Error::invalid(format!(
            "jitter must lie in [0, {MAX_JITTER}] (got {jitter})"
        )));
    }

    let mut obstacles = Vec::new();
    let z = FLIGHT_ALTITUDE;
    let (starts, goals) = match kind {
        ScenarioKind::Doorway => {
            for k in 0..WALL_SPHERES_PER_ARM {
                let y = DOORWAY_GAP_CENTER_OFFSET + WALL_SPACING * k as f64;
                for sign in [1.0, -1.0] {
                    obstacles.push(Sphere::new(Vec3::new(0.0, sign * y, z), OBSTACLE_RADIUS)?);
                }
            }
            // Offset in x so the straight start-to-center range is exactly
            // START_DISTANCE despite the lateral stagger.
            let lat = DOORWAY_LATERAL_OFFSET;
            let x = (START_DISTANCE * START_DISTANCE - lat * lat).sqrt();
            let starts = [Vec3::new(-x, lat, z), Vec3::new(-x, -lat, z)];
            // Goals mirror the starts through the origin, so the nominal
            // paths cross exactly at the gap center.
            let goals = [Vec3::new(x, -lat, z), Vec3::new(x, lat, z)];
            (starts, goals)
        }
        ScenarioKind::Intersection => {
            for k in 0..WALL_SPHERES_PER_ARM {
                let t = CORRIDOR_WALL_OFFSET + WALL_SPACING * k as f64;
                for sx in [1.0, -1.0] {
                    for sy in [1.0, -1.0] {
                        obstacles.push(Sphere::new(
                            Vec3::new(sx * t, sy * CORRIDOR_WALL_OFFSET, z),
                            OBSTACLE_RADIUS,
                        )?);
                        // The corner sphere is shared by both arms; push the
                        // perpendicular arm only past it.
                        if k > 0 {
                            obstacles.push(Sphere::new(
                                Vec3::new(sx * CORRIDOR_WALL_OFFSET, sy * t, z),
                                OBSTACLE_RADIUS,
                            )?);
                        }
                    }
                }
            }
            let d = INTERSECTION_START_DISTANCE;
            let starts = [Vec3::new(-d, 0.0, z), Vec3::new(0.0, -d, z)];
            let goals = [Vec3::new(d, 0.0, z), Vec3::new(0.0, d, z)];
            (starts, goals)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = Vec::with_capacity(starts.len());
    for (start, goal) in starts.into_iter().zip(goals) {
        let dx = rng.gen_range(-jitter..=jitter);
        let dy = rng.gen_range(-jitter..=jitter);
        agents.push(AgentSpec::new(start + Vec3::new(dx, dy, 0.0), goal, AGENT_RADIUS)?);
    }

    let bounds = Aabb::new(Vec3::new(-4.0, -4.0, 0.0), Vec3::new(4.0, 4.0, 2.0))?;
    let scene = Scene::new(obstacles, bounds)?;
    World::new(scene, agents, constrained_region())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionKind {
    AgentAgent { a: usize, b: usize },
    AgentObstacle { agent: usize, obstacle: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    /// The liveness layer scaled this agent's command down.
    PerturbationApplied {
        agent: usize,
        cycle: u32,
        time: f64,
        commanded: Vec3,
        adjusted: Vec3,
    },
    GoalReached {
        agent: usize,
        cycle: u32,
        time: f64,
    },
    Collision {
        kind: CollisionKind,
        cycle: u32,
        time: f64,
    },
    /// The per-agent discrete barrier condition failed beyond tolerance.
    MarginViolation {
        agent: usize,
        cycle: u32,
        margin: f64,
    },
    /// The safety filter was infeasible; the agent commanded zero velocity.
    CollisionRisk {
        agent: usize,
        cycle: u32,
    },
    Timeout {
        cycle: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Deadlock,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Success => write!(f, "success"),
            Outcome::Collision => write!(f, "collision"),
            Outcome::Deadlock => write!(f, "deadlock"),
        }
    }
}

/// One trajectory row, captured at the start of the owning agent's
/// sub-step, before integration: the state the agent decided from, the
/// barrier and liveness values it saw, and whether its command was scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSample {
    pub cycle: u32,
    pub time: f64,
    pub agent: usize,
    pub position: Vec3,
    pub velocity: Vec3,
    pub speed: f64,
    /// Barrier value at the sensed cloud; infinite when nothing is in range.
    pub barrier: f64,
    /// Smallest liveness angle against any other active agent; pi when alone.
    pub liveness: f64,
    pub perturbed: bool,
    pub in_region: bool,
}

/// Lowest-index collision among active agents, scanning agent pairs before
/// agent-obstacle pairs. Contact exactly at the radius sum does not count.
pub fn check_collision(world: &World) -> Option<CollisionKind> {
    let n = world.agents.len();
    for i in 0..n {
        if !world.agents[i].active {
            continue;
        }
        for j in (i + 1)..n {
            if !world.agents[j].active {
                continue;
            }
            let d = (world.agents[i].state.position - world.agents[j].state.position).norm();
            if d < world.agents[i].radius + world.agents[j].radius {
                return Some(CollisionKind::AgentAgent { a: i, b: j });
            }
        }
    }
    for (i, agent) in world.agents.iter().enumerate() {
        if !agent.active {
            continue;
        }
        for (oi, sphere) in world.scene.obstacles.iter().enumerate() {
            let d = (agent.state.position - sphere.center).norm();
            if d < agent.radius + sphere.radius {
                return Some(CollisionKind::AgentObstacle { agent: i, obstacle: oi });
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub safety: SafetyConfig,
    pub liveness: LivenessConfig,
    pub quadrotor: QuadrotorParams,
    pub lidar: LidarConfig,
    /// Proportional gain of the go-to-goal command.
    pub nominal_gain: f64,
    /// Norm cap on the commanded velocity.
    pub speed_cap: f64,
    pub liveness_enabled: bool,
    pub substep_mode: SubstepMode,
    pub max_cycles: u32,
    pub goal_radius: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            safety: SafetyConfig::default(),
            liveness: LivenessConfig::default(),
            quadrotor: QuadrotorParams::default(),
            lidar: LidarConfig::default(),
            nominal_gain: 1.5,
            // Interleaved stepping halves the ground speed relative to the
            // command, so 0.8 puts doorway transit times around 10-13 s of
            // the 16 s budget with gentle approaches to the 0.35 m wall
            // clearance.
            speed_cap: 0.8,
            liveness_enabled: true,
            substep_mode: SubstepMode::Interleaved,
            max_cycles: DEFAULT_MAX_CYCLES,
            goal_radius: DEFAULT_GOAL_RADIUS,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        self.safety.validate()?;
        self.liveness.validate()?;
        self.quadrotor.validate()?;
        self.lidar.validate()?;
        if !(self.nominal_gain > 0.0) || !self.nominal_gain.is_finite() {
            return Err(Error::invalid("nominal_gain must be positive"));
        }
        if !(self.speed_cap > 0.0) || !self.speed_cap.is_finite() {
            return Err(Error::invalid("speed_cap must be positive"));
        }
        if self.max_cycles == 0 {
            return Err(Error::invalid("max_cycles must be at least 1"));
        }
        if !(self.goal_radius > 0.0) || !self.goal_radius.is_finite() {
            return Err(Error::invalid("goal_radius must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub jitter: f64,
    pub outcome: Outcome,
    /// Arrival time per agent, in agent-index order.
    pub completion_times: Vec<Option<f64>>,
    /// Closest center-to-center approach of any co-active agent pair.
    pub min_agent_distance: f64,
    /// Smallest finite barrier value any agent observed.
    pub min_barrier: f64,
    pub cycles: u32,
    pub events: Vec<Event>,
    pub samples: Vec<TrajSample>,
}

pub struct Simulation {
    pub world: World,
    pub params: SimParams,
    scenario: ScenarioKind,
    seed: u64,
    jitter: f64,
    events: Vec<Event>,
    samples: Vec<TrajSample>,
    prev_barrier: Vec<Option<f64>>,
    goal_times: Vec<Option<f64>>,
    min_agent_distance: f64,
    min_barrier: f64,
    finished: Option<Outcome>,
}

impl Simulation {
    pub fn new(world: World, params: SimParams) -> Result<Self> {
        params.validate()?;
        let n = world.agents.len();
        Ok(Simulation {
            world,
            params,
            scenario: ScenarioKind::Doorway,
            seed: 0,
            jitter: 0.0,
            events: Vec::new(),
            samples: Vec::new(),
            prev_barrier: vec![None; n],
            goal_times: vec![None; n],
            min_agent_distance: f64::INFINITY,
            min_barrier: f64::INFINITY,
            finished: None,
        })
    }

    pub fn finished(&self) -> Option<Outcome> {
        self.finished
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn samples(&self) -> &[TrajSample] {
        &self.samples
    }

    /// Execute one control cycle and return the events it emitted. A
    /// finished episode is a no-op.
    pub fn step_cycle(&mut self) -> Result<Vec<Event>> {
        if self.finished.is_some() {
            return Ok(Vec::new());
        }
        if self.world.active_count() == 0 {
            self.finished = Some(Outcome::Success);
            return Ok(Vec::new());
        }
        let emitted_before = self.events.len();
        let cycle_idx = self.world.cycle;

        // Cycle-start snapshot: the liveness layer decides from where
        // everyone was when the round began, not from mid-cycle motion.
        let snapshot: Vec<AgentKinematics> = self
            .world
            .agents
            .iter()
            .map(|a| AgentKinematics::new(a.state.position, a.state.velocity))
            .collect();
        let n = snapshot.len();
        let mut conflict = false;
        let mut agent_ell = vec![PI; n];
        for i in 0..n {
            for j in (i + 1)..n {
                if !(self.world.agents[i].active && self.world.agents[j].active) {
                    continue;
                }
                let ell = liveness_value(&snapshot[i], &snapshot[j], &self.params.liveness);
                if ell < agent_ell[i] {
                    agent_ell[i] = ell;
                }
                if ell < agent_ell[j] {
                    agent_ell[j] = ell;
                }
                if ell < self.params.liveness.ell_thresh {
                    conflict = true;
                }
            }
        }

        match self.params.substep_mode {
            SubstepMode::Interleaved => self.cycle_interleaved(cycle_idx, &snapshot, conflict, &agent_ell)?,
            SubstepMode::Simultaneous => self.cycle_simultaneous(cycle_idx, &snapshot, conflict, &agent_ell)?,
        }
        Ok(self.events[emitted_before..].to_vec())
    }

    fn cycle_interleaved(
        &mut self,
        cycle_idx: u32,
        snapshot: &[AgentKinematics],
        conflict: bool,
        agent_ell: &[f64],
    ) -> Result<()> {
        for slot in 0..self.world.agents.len() {
            if self.finished.is_some() {
                break;
            }
            if !self.world.agents[slot].active {
                // Removed agents still own their slot so the clock keeps
                // its cycle alignment.
                self.world.advance_substep();
                continue;
            }
            let command = self.decide(slot, cycle_idx, snapshot, conflict, agent_ell)?;
            self.integrate(slot, command, cycle_idx)?;
            self.world.advance_substep();
            self.post_substep(cycle_idx);
        }
        Ok(())
    }

    fn cycle_simultaneous(
        &mut self,
        cycle_idx: u32,
        snapshot: &[AgentKinematics],
        conflict: bool,
        agent_ell: &[f64],
    ) -> Result<()> {
        let n = self.world.agents.len();
        let mut commands: Vec<Option<Vec3>> = vec![None; n];
        for i in 0..n {
            if self.world.agents[i].active {
                commands[i] = Some(self.decide(i, cycle_idx, snapshot, conflict, agent_ell)?);
            }
        }
        for _ in 0..n {
            if self.finished.is_some() {
                break;
            }
            for i in 0..n {
                if self.world.agents[i].active {
                    let command = commands[i].expect("active agents were assigned commands");
                    self.integrate(i, command, cycle_idx)?;
                }
            }
            self.world.advance_substep();
            self.post_substep(cycle_idx);
        }
        Ok(())
    }

    /// Run the sense -> barrier -> nominal -> safety filter -> liveness
    /// pipeline for one agent, record its trajectory row, and return the
    /// velocity command to execute.
    fn decide(
        &mut self,
        i: usize,
        cycle_idx: u32,
        snapshot: &[AgentKinematics],
        conflict: bool,
        agent_ell: &[f64],
    ) -> Result<Vec3> {
        let q = self.world.agents[i].state.position;
        let v = self.world.agents[i].state.velocity;
        let goal = self.world.agents[i].goal;

        let cloud = sense(i, &self.world, &self.params.lidar)?;
        let eval = barrier_value(q, &cloud, &self.params.safety);
        let h = eval.as_ref().map_or(f64::INFINITY, |e| e.value);

        // Commands are planar; altitude is regulated only through the
        // tracking loop's thrust term.
        let u_nom = nominal_control(
            Vec3::new(q.x, q.y, 0.0),
            Vec3::new(goal.x, goal.y, 0.0),
            self.params.nominal_gain,
            self.params.speed_cap,
        );
        let u_safe = match &eval {
            Some(eval) => match safety_filter(u_nom, eval, &self.params.safety) {
                Ok(u) => u,
                Err(Error::InfeasibleConstraint) => {
                    self.events.push(Event::CollisionRisk { agent: i, cycle: cycle_idx });
                    Vec3::ZERO
                }
                Err(e) => return Err(e),
            },
            None => u_nom,
        };

        let mut command = u_safe;
        let mut perturbed = false;
        if self.params.liveness_enabled && conflict {
            // Joint speeds: everyone else as observed at the cycle start,
            // this agent at its candidate command. Index order is the
            // priority order, so agent 0 always keeps its speed.
            let mut kins = Vec::new();
            let mut own = 0;
            for (j, agent) in self.world.agents.iter().enumerate() {
                if !agent.active {
                    continue;
                }
                if j == i {
                    own = kins.len();
                    kins.push(AgentKinematics::new(q, u_safe));
                } else {
                    kins.push(snapshot[j]);
                }
            }
            if kins.len() >= 2 {
                let priority: Vec<usize> = (0..kins.len()).collect();
                let resolved = resolve_deadlock(&kins, Some(&priority), &self.params.liveness)?;
                if resolved[own] != u_safe {
                    command = resolved[own];
                    perturbed = true;
                    self.events.push(Event::PerturbationApplied {
                        agent: i,
                        cycle: cycle_idx,
                        time: self.world.clock(),
                        commanded: u_safe,
                        adjusted: command,
                    });
                }
            }
        }

        self.samples.push(TrajSample {
            cycle: cycle_idx,
            time: self.world.clock(),
            agent: i,
            position: q,
            velocity: v,
            speed: v.norm(),
            barrier: h,
            liveness: agent_ell[i],
            perturbed,
            in_region: self.world.constrained_region.contains(q),
        });

        if h.is_finite() {
            if let Some(prev) = self.prev_barrier[i] {
                let dt = self.world.agents.len() as f64 * SUBSTEP_DT;
                let margin = discrete_cbf_margin(h, prev, &self.params.safety, dt);
                if margin < -MARGIN_TOLERANCE {
                    self.events.push(Event::MarginViolation { agent: i, cycle: cycle_idx, margin });
                }
            }
            self.prev_barrier[i] = Some(h);
            if h < self.min_barrier {
                self.min_barrier = h;
            }
        } else {
            self.prev_barrier[i] = None;
        }

        Ok(command)
    }

    fn integrate(&mut self, i: usize, command: Vec3, cycle_idx: u32) -> Result<()> {
        let state = self.world.agents[i].state;
        let wrench = track_velocity(&state, command, &self.params.quadrotor);
        let next = rk4_step(&state, &wrench, SUBSTEP_DT, &self.params.quadrotor)
            .map_err(|_| Error::Diverged { cycle: cycle_idx })?;
        if !next.is_finite() {
            return Err(Error::Diverged { cycle: cycle_idx });
        }
        self.world.agents[i].state = next;
        Ok(())
    }

    /// Goal removal, closest-approach tracking, and collision detection,
    /// in that order, after every sub-step.
    fn post_substep(&mut self, cycle_idx: u32) {
        let t = self.world.clock();
        for i in 0..self.world.agents.len() {
            let agent = &self.world.agents[i];
            if !agent.active {
                continue;
            }
            // Arrival is judged in the flight plane: commands carry no
            // vertical component, so altitude is not position-regulated.
            let dx = agent.state.position.x - agent.goal.x;
            let dy = agent.state.position.y - agent.goal.y;
            if (dx * dx + dy * dy).sqrt() <= self.params.goal_radius {
                self.world.agents[i].active = false;
                self.goal_times[i] = Some(t);
                self.events.push(Event::GoalReached { agent: i, cycle: cycle_idx, time: t });
            }
        }
        self.observe_distances();
        if let Some(kind) = check_collision(&self.world) {
            self.events.push(Event::Collision { kind, cycle: cycle_idx, time: t });
            self.finished = Some(Outcome::Collision);
        } else if self.world.active_count() == 0 {
            self.finished = Some(Outcome::Success);
        }
    }

    fn observe_distances(&mut self) {
        let n = self.world.agents.len();
        for i in 0..n {
            if !self.world.agents[i].active {
                continue;
            }
            for j in (i + 1)..n {
                if !self.world.agents[j].active {
                    continue;
                }
                let d = (self.world.agents[i].state.position - self.world.agents[j].state.position).norm();
                if d < self.min_agent_distance {
                    self.min_agent_distance = d;
                }
            }
        }
    }

    /// Drive the episode to termination.
    pub fn run(mut self) -> Result<EpisodeOutcome> {
        self.observe_distances();
        while self.finished.is_none() {
            if self.world.cycle >= self.params.max_cycles {
                self.events.push(Event::Timeout { cycle: self.world.cycle });
                self.finished = Some(Outcome::Deadlock);
                break;
            }
            self.step_cycle()?;
        }
        Ok(EpisodeOutcome {
            scenario: self.scenario,
            seed: self.seed,
            jitter: self.jitter,
            outcome: self.finished.expect("loop exits only once classified"),
            completion_times: self.goal_times,
            min_agent_distance: self.min_agent_distance,
            min_barrier: self.min_barrier,
            cycles: self.world.cycle,
            events: self.events,
            samples: self.samples,
        })
    }
}

/// Build the scenario and run one full episode.
pub fn run_episode(kind: ScenarioKind, seed: u64, jitter: f64, params: &SimParams) -> Result<EpisodeOutcome> {
    let world = build_scenario(kind, seed, jitter)?;
    let mut sim = Simulation::new(world, params.clone())?;
    sim.scenario = kind;
    sim.seed = seed;
    sim.jitter = jitter;
    sim.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doorway_world() -> World {
        build_scenario(ScenarioKind::Doorway, 0, 0.0).unwrap()
    }

    #[test]
    fn scenario_building_is_deterministic() {
        let a = build_scenario(ScenarioKind::Doorway, 7, 0.05).unwrap();
        let b = build_scenario(ScenarioKind::Doorway, 7, 0.05).unwrap();
        assert_eq!(a, b);
        let c = build_scenario(ScenarioKind::Doorway, 8, 0.05).unwrap();
        assert_ne!(a.agents[0].start, c.agents[0].start);
    }

    #[test]
    fn doorway_geometry() {
        let world = doorway_world();
        assert_eq!(world.scene.obstacles.len(), 18);
        let center = Vec3::new(0.0, 0.0, FLIGHT_ALTITUDE);
        let d0 = (world.agents[0].start - center).norm();
        let d1 = (world.agents[1].start - center).norm();
        assert!((d0 - START_DISTANCE).abs() < 1e-12);
        assert!((d0 - d1).abs() < 1e-12);
        // Mirror symmetry about the corridor axis.
        assert!((world.agents[0].start.y + world.agents[1].start.y).abs() < 1e-12);
        // Crossing goals: each goal is the start reflected through the gap.
        for agent in &world.agents {
            assert!((agent.goal.x + agent.start.x).abs() < 1e-12);
            assert!((agent.goal.y + agent.start.y).abs() < 1e-12);
        }
        // Innermost wall spheres leave a 0.3 m surface-to-surface gap.
        let min_wall_y = world
            .scene
            .obstacles
            .iter()
            .map(|s| s.center.y.abs() - s.radius)
            .fold(f64::INFINITY, f64::min);
        assert!((min_wall_y - 0.15).abs() < 1e-12);
    }

    #[test]
    fn intersection_geometry() {
        let world = build_scenario(ScenarioKind::Intersection, 0, 0.0).unwrap();
        assert_eq!(world.scene.obstacles.len(), 68);
        // Both nominal straight paths pass exactly through the crossing.
        for agent in &world.agents {
            let dir = (agent.goal - agent.start).try_normalized().unwrap();
            let to_origin = Vec3::new(0.0, 0.0, FLIGHT_ALTITUDE) - agent.start;
            let along = to_origin.dot(dir);
            let offset = (to_origin - dir * along).norm();
            assert!(offset < 1e-12);
            assert!((along - INTERSECTION_START_DISTANCE).abs() < 1e-12);
        }
        // Corridor surfaces sit 0.2 m from the axes.
        let clearance = world
            .scene
            .obstacles
            .iter()
            .map(|s| s.center.y.abs() - s.radius)
            .fold(f64::INFINITY, f64::min);
        assert!((clearance - 0.2).abs() < 1e-12);
    }

    #[test]
    fn jitter_is_bounded_and_applied() {
        assert!(build_scenario(ScenarioKind::Doorway, 0, -0.01).is_err());
        assert!(build_scenario(ScenarioKind::Doorway, 0, 0.2).is_err());
        assert!(build_scenario(ScenarioKind::Doorway, 0, f64::NAN).is_err());
        let base = doorway_world();
        let moved = build_scenario(ScenarioKind::Doorway, 0, 0.1).unwrap();
        for (a, b) in base.agents.iter().zip(&moved.agents) {
            let d = a.start - b.start;
            assert!(d.x.abs() <= 0.1 && d.y.abs() <= 0.1);
            assert_eq!(d.z, 0.0);
            assert_eq!(a.goal, b.goal);
        }
    }

    #[test]
    fn scenario_names_round_trip() {
        assert_eq!("doorway".parse::<ScenarioKind>().unwrap(), ScenarioKind::Doorway);
        assert_eq!(
            "intersection".parse::<ScenarioKind>().unwrap(),
            ScenarioKind::Intersection
        );
        assert!("plaza".parse::<ScenarioKind>().is_err());
        assert_eq!(ScenarioKind::Doorway.to_string(), "doorway");
        assert_eq!("simultaneous".parse::<SubstepMode>().unwrap(), SubstepMode::Simultaneous);
        assert!("staggered".parse::<SubstepMode>().is_err());
    }

    #[test]
    fn clock_stays_cycle_aligned() {
        let mut sim = Simulation::new(doorway_world(), SimParams::default()).unwrap();
        for _ in 0..10 {
            sim.step_cycle().unwrap();
            assert_eq!(sim.world.substep, 0);
            assert_eq!(sim.world.clock(), CYCLE_DT * sim.world.cycle as f64);
        }
        assert_eq!(sim.world.cycle, 10);
    }

    #[test]
    fn finished_episode_is_a_noop() {
        let mut sim = Simulation::new(doorway_world(), SimParams::default()).unwrap();
        for agent in &mut sim.world.agents {
            agent.active = false;
        }
        let events = sim.step_cycle().unwrap();
        assert!(events.is_empty());
        assert_eq!(sim.finished(), Some(Outcome::Success));
        assert_eq!(sim.world.cycle, 0);
        assert!(sim.step_cycle().unwrap().is_empty());
    }

    #[test]
    fn symmetric_approach_triggers_perturbation_early() {
        let mut sim = Simulation::new(doorway_world(), SimParams::default()).unwrap();
        let mut first = None;
        for _ in 0..50 {
            let events = sim.step_cycle().unwrap();
            if let Some(Event::PerturbationApplied { agent, cycle, .. }) = events
                .iter()
                .find(|e| matches!(e, Event::PerturbationApplied { .. }))
            {
                first = Some((*agent, *cycle));
                break;
            }
        }
        let (agent, cycle) = first.expect("symmetric start must trip the liveness layer");
        assert!(cycle <= 25, "first perturbation waited until cycle {cycle}");
        // Agent 0 leads the priority order and never slows.
        assert_eq!(agent, 1);
    }

    #[test]
    fn exhausted_cycle_budget_is_a_deadlock() {
        let params = SimParams { max_cycles: 3, ..SimParams::default() };
        let outcome = run_episode(ScenarioKind::Doorway, 0, 0.0, &params).unwrap();
        assert_eq!(outcome.outcome, Outcome::Deadlock);
        assert_eq!(outcome.cycles, 3);
        assert!(outcome.completion_times.iter().all(Option::is_none));
        assert!(outcome.events.iter().any(|e| matches!(e, Event::Timeout { cycle: 3 })));
    }

    #[test]
    fn collision_thresholds_are_strict() {
        let mut world = doorway_world();
        // Separations along one axis so the distances are the literals
        // themselves: 0.1 + 0.1 == 0.2 exactly in binary64.
        world.agents[0].state.position = Vec3::new(-1.0, 0.0, 1.0);
        world.agents[1].state.position = Vec3::new(-1.0, 0.19, 1.0);
        assert_eq!(check_collision(&world), Some(CollisionKind::AgentAgent { a: 0, b: 1 }));
        world.agents[1].state.position = Vec3::new(-1.0, 0.2, 1.0);
        assert_eq!(check_collision(&world), None);

        // Isolate the obstacle check: 0.25 m sphere at (0, 0.4, 1).
        world.agents[1].active = false;
        world.agents[0].state.position = Vec3::new(0.36, 0.4, 1.0);
        assert_eq!(check_collision(&world), None);
        world.agents[0].state.position = Vec3::new(0.34, 0.4, 1.0);
        assert_eq!(
            check_collision(&world),
            Some(CollisionKind::AgentObstacle { agent: 0, obstacle: 0 })
        );
    }

    #[test]
    fn infeasible_filter_reports_risk_and_stops_commanding() {
        // Sitting exactly on an obstacle surface point makes the barrier
        // gradient vanish while the value is negative.
        let mut world = doorway_world();
        world.agents[1].active = false;
        world.agents[0].state.position = Vec3::new(0.25, 0.4, 1.0);
        let mut sim = Simulation::new(world, SimParams::default()).unwrap();
        let events = sim.step_cycle().unwrap();
        assert!(events.iter().any(|e| matches!(e, Event::CollisionRisk { agent: 0, .. })));
        assert_eq!(sim.finished(), Some(Outcome::Collision));
    }

    #[test]
    fn episodes_are_bitwise_reproducible() {
        let params = SimParams::default();
        let a = run_episode(ScenarioKind::Doorway, 3, DEFAULT_JITTER, &params).unwrap();
        let b = run_episode(ScenarioKind::Doorway, 3, DEFAULT_JITTER, &params).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn doorway_with_liveness_succeeds_in_order() {
        let outcome = run_episode(ScenarioKind::Doorway, 0, DEFAULT_JITTER, &SimParams::default()).unwrap();
        assert_eq!(outcome.outcome, Outcome::Success);
        let t0 = outcome.completion_times[0].expect("agent 0 arrives");
        let t1 = outcome.completion_times[1].expect("agent 1 arrives");
        assert!(t0 < t1, "priority agent must clear the gap first ({t0} vs {t1})");
        assert!(t1 <= 16.0);
        assert!(outcome.min_agent_distance >= 0.2, "closest approach {}", outcome.min_agent_distance);
        assert!(outcome.min_barrier >= 0.0, "barrier dipped to {}", outcome.min_barrier);
        assert!(!outcome.events.iter().any(|e| matches!(e, Event::MarginViolation { .. })));
    }

    #[test]
    fn doorway_without_liveness_fails() {
        let params = SimParams { liveness_enabled: false, ..SimParams::default() };
        let outcome = run_episode(ScenarioKind::Doorway, 0, DEFAULT_JITTER, &params).unwrap();
        assert_ne!(outcome.outcome, Outcome::Success);
    }

    #[test]
    fn nan_state_is_reported_as_divergence() {
        let mut world = doorway_world();
        world.agents[0].state.velocity = Vec3::new(f64::NAN, 0.0, 0.0);
        let sim = Simulation::new(world, SimParams::default()).unwrap();
        match sim.run() {
            Err(Error::Diverged { cycle }) => assert_eq!(cycle, 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn perturbations_preserve_heading() {
        let outcome = run_episode(ScenarioKind::Doorway, 0, 0.0, &SimParams::default()).unwrap();
        let mut seen = 0;
        for event in &outcome.events {
            if let Event::PerturbationApplied { commanded, adjusted, .. } = event {
                seen += 1;
                assert!(adjusted.norm() <= commanded.norm() + 1e-12, "liveness only slows");
                let angle = commanded.cross(*adjusted).norm().atan2(commanded.dot(*adjusted));
                assert!(angle.abs() < 1e-9, "heading turned by {angle} rad");
            }
        }
        assert!(seen > 0, "the symmetric doorway must perturb at least once");
    }

    #[test]
    fn simultaneous_mode_completes_the_doorway() {
        let params = SimParams {
            substep_mode: SubstepMode::Simultaneous,
            ..SimParams::default()
        };
        let outcome = run_episode(ScenarioKind::Doorway, 0, DEFAULT_JITTER, &params).unwrap();
        assert_eq!(outcome.outcome, Outcome::Success);
        let t0 = outcome.completion_times[0].unwrap();
        let t1 = outcome.completion_times[1].unwrap();
        assert!(t0 < t1 && t1 <= 16.0);
    }

    #[test]
    fn trajectory_rows_follow_the_substep_grid() {
        let outcome = run_episode(ScenarioKind::Doorway, 1, DEFAULT_JITTER, &SimParams::default()).unwrap();
        assert!(!outcome.samples.is_empty());
        for pair in outcome.samples.windows(2) {
            assert!(pair[0].time <= pair[1].time);
        }
        for sample in &outcome.samples {
            assert!((sample.speed - sample.velocity.norm()).abs() < 1e-15);
            assert!(sample.liveness >= 0.0 && sample.liveness <= PI);
            // Row times sit on the 0.02 s grid.
            let steps = sample.time / SUBSTEP_DT;
            assert!((steps - steps.round()).abs() < 1e-9);
        }
        // Per-agent cadence is one row per cycle.
        let rows0 = outcome.samples.iter().filter(|s| s.agent == 0).count();
        let t0 = outcome.completion_times[0].unwrap();
        assert_eq!(rows0 as f64, (t0 / CYCLE_DT).round());
    }
}
