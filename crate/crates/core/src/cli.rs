//! Batch experiment driver: config parsing and validation, seeded suite
//! execution (parallel across seeds), and the on-disk outputs — one
//! trajectory CSV per run plus a JSON summary per suite.

use crate::dynamics::QuadrotorParams;
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};
use crate::liveness::{liveness_threshold, LivenessConfig};
use crate::metrics::{summarize, SuiteSummary};
use crate::perception::LidarConfig;
use crate::safety::SafetyConfig;
use crate::sim::{
    self, run_episode, EpisodeOutcome, Outcome, ScenarioKind, SimParams, SubstepMode,
    DEFAULT_JITTER, DEFAULT_MAX_CYCLES, MAX_JITTER,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Re-wrap an IO error so the message names the offending path; the
/// original kind survives for callers that dispatch on it.
fn with_path(path: &Path, e: io::Error) -> io::Error {
    io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

/// Quadrotor parameters in config form; the inertia tensor is restricted
/// to its diagonal here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrotorSection {
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub gravity: f64,
    pub k_v: f64,
    pub k_r: f64,
    pub k_omega: f64,
}

impl Default for QuadrotorSection {
    fn default() -> Self {
        let p = QuadrotorParams::default();
        QuadrotorSection {
            mass: p.mass,
            inertia_diag: [p.inertia.d[0], p.inertia.d[4], p.inertia.d[8]],
            gravity: p.gravity,
            k_v: p.k_v,
            k_r: p.k_r,
            k_omega: p.k_omega,
        }
    }
}

impl QuadrotorSection {
    pub fn to_params(&self) -> QuadrotorParams {
        QuadrotorParams {
            mass: self.mass,
            inertia: Mat3::from_diagonal(Vec3::new(
                self.inertia_diag[0],
                self.inertia_diag[1],
                self.inertia_diag[2],
            )),
            gravity: self.gravity,
            k_v: self.k_v,
            k_r: self.k_r,
            k_omega: self.k_omega,
        }
    }
}

/// Go-to-goal command shaping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NominalSection {
    pub gain: f64,
    pub speed_cap: f64,
}

impl Default for NominalSection {
    fn default() -> Self {
        let p = SimParams::default();
        NominalSection { gain: p.nominal_gain, speed_cap: p.speed_cap }
    }
}

/// Fully resolved experiment description. Serializing it and validating
/// the result reproduces it field for field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioKind,
    pub runs: u32,
    pub base_seed: u64,
    pub liveness_enabled: bool,
    pub jitter: f64,
    pub substep_mode: SubstepMode,
    pub max_cycles: u32,
    pub output_dir: PathBuf,
    pub safety: SafetyConfig,
    pub liveness: LivenessConfig,
    pub quadrotor: QuadrotorSection,
    pub lidar: LidarConfig,
    pub nominal: NominalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: ScenarioKind::Doorway,
            runs: 50,
            base_seed: 0,
            liveness_enabled: true,
            jitter: DEFAULT_JITTER,
            substep_mode: SubstepMode::default(),
            max_cycles: DEFAULT_MAX_CYCLES,
            output_dir: PathBuf::from("out"),
            safety: SafetyConfig::default(),
            liveness: LivenessConfig::default(),
            quadrotor: QuadrotorSection::default(),
            lidar: LidarConfig::default(),
            nominal: NominalSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn to_sim_params(&self) -> SimParams {
        SimParams {
            safety: self.safety,
            liveness: self.liveness,
            quadrotor: self.quadrotor.to_params(),
            lidar: self.lidar,
            nominal_gain: self.nominal.gain,
            speed_cap: self.nominal.speed_cap,
            liveness_enabled: self.liveness_enabled,
            substep_mode: self.substep_mode,
            max_cycles: self.max_cycles,
            goal_radius: sim::DEFAULT_GOAL_RADIUS,
        }
    }
}

// Raw mirrors of the config schema: every field optional, unknown keys
// rejected, so absent sections fall back to defaults while typos fail
// loudly.

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Option<ScenarioKind>,
    runs: Option<u32>,
    base_seed: Option<u64>,
    liveness_enabled: Option<bool>,
    jitter: Option<f64>,
    substep_mode: Option<SubstepMode>,
    max_cycles: Option<u32>,
    output_dir: Option<PathBuf>,
    safety: Option<RawSafety>,
    liveness: Option<RawLiveness>,
    quadrotor: Option<RawQuadrotor>,
    lidar: Option<RawLidar>,
    nominal: Option<RawNominal>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSafety {
    delta: Option<f64>,
    alpha_gain: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLiveness {
    zeta: Option<f64>,
    ell_thresh: Option<f64>,
    /// When set, ell_thresh is computed from zeta instead of given.
    derive_ell_thresh: Option<bool>,
    epsilon: Option<f64>,
    deadlock_speed_floor: Option<f64>,
    deadlock_dwell: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuadrotor {
    mass: Option<f64>,
    inertia_diag: Option<[f64; 3]>,
    gravity: Option<f64>,
    k_v: Option<f64>,
    k_r: Option<f64>,
    k_omega: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLidar {
    ray_count: Option<u32>,
    max_range: Option<f64>,
    include_agents: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNominal {
    gain: Option<f64>,
    speed_cap: Option<f64>,
}

fn check_positive(errors: &mut Vec<String>, path: &str, v: f64) {
    if !(v > 0.0) || !v.is_finite() {
        errors.push(format!("{path}: must be positive (got {v})"));
    }
}

/// Resolve a configuration document against the defaults, collecting every
/// violated invariant as a `field.path: message` diagnostic.
pub fn validate_config(doc: &Value) -> Result<ExperimentConfig> {
    let raw: RawConfig =
        serde_json::from_value(doc.clone()).map_err(|e| Error::Config(vec![e.to_string()]))?;
    let defaults = ExperimentConfig::default();
    let mut errors = Vec::new();

    let runs = raw.runs.unwrap_or(defaults.runs);
    if runs == 0 {
        errors.push("runs: must be at least 1".into());
    }
    let jitter = raw.jitter.unwrap_or(defaults.jitter);
    if !jitter.is_finite() || !(0.0..=MAX_JITTER).contains(&jitter) {
        errors.push(format!("jitter: must lie in [0, {MAX_JITTER}] (got {jitter})"));
    }
    let max_cycles = raw.max_cycles.unwrap_or(defaults.max_cycles);
    if max_cycles == 0 {
        errors.push("max_cycles: must be at least 1".into());
    }

    let rs = raw.safety.unwrap_or_default();
    let safety = SafetyConfig {
        delta: rs.delta.unwrap_or(defaults.safety.delta),
        alpha_gain: rs.alpha_gain.unwrap_or(defaults.safety.alpha_gain),
    };
    check_positive(&mut errors, "safety.delta", safety.delta);
    check_positive(&mut errors, "safety.alpha_gain", safety.alpha_gain);

    let rl = raw.liveness.unwrap_or_default();
    let zeta = rl.zeta.unwrap_or(defaults.liveness.zeta);
    if !(zeta >= 1.0) || !zeta.is_finite() {
        errors.push(format!("liveness.zeta: must be at least 1 (got {zeta})"));
    }
    let derive = rl.derive_ell_thresh.unwrap_or(false);
    let ell_thresh = match (rl.ell_thresh, derive) {
        (Some(_), true) => {
            errors.push(
                "liveness.ell_thresh: explicit value conflicts with derive_ell_thresh".into(),
            );
            defaults.liveness.ell_thresh
        }
        (Some(v), false) => v,
        (None, true) => match liveness_threshold(zeta) {
            Ok(t) if t > 0.0 => t,
            Ok(_) => {
                errors.push(
                    "liveness.ell_thresh: derived threshold is zero (zeta must exceed 1)".into(),
                );
                defaults.liveness.ell_thresh
            }
            // zeta already reported above.
            Err(_) => defaults.liveness.ell_thresh,
        },
        (None, false) => defaults.liveness.ell_thresh,
    };
    if !(ell_thresh > 0.0 && ell_thresh < std::f64::consts::FRAC_PI_2) {
        errors.push(format!(
            "liveness.ell_thresh: must lie in (0, pi/2) (got {ell_thresh})"
        ));
    }
    let liveness = LivenessConfig {
        zeta,
        ell_thresh,
        epsilon: rl.epsilon.unwrap_or(defaults.liveness.epsilon),
        deadlock_speed_floor: rl
            .deadlock_speed_floor
            .unwrap_or(defaults.liveness.deadlock_speed_floor),
        deadlock_dwell: rl.deadlock_dwell.unwrap_or(defaults.liveness.deadlock_dwell),
    };
    check_positive(&mut errors, "liveness.epsilon", liveness.epsilon);
    check_positive(&mut errors, "liveness.deadlock_speed_floor", liveness.deadlock_speed_floor);
    check_positive(&mut errors, "liveness.deadlock_dwell", liveness.deadlock_dwell);

    let rq = raw.quadrotor.unwrap_or_default();
    let quadrotor = QuadrotorSection {
        mass: rq.mass.unwrap_or(defaults.quadrotor.mass),
        inertia_diag: rq.inertia_diag.unwrap_or(defaults.quadrotor.inertia_diag),
        gravity: rq.gravity.unwrap_or(defaults.quadrotor.gravity),
        k_v: rq.k_v.unwrap_or(defaults.quadrotor.k_v),
        k_r: rq.k_r.unwrap_or(defaults.quadrotor.k_r),
        k_omega: rq.k_omega.unwrap_or(defaults.quadrotor.k_omega),
    };
    check_positive(&mut errors, "quadrotor.mass", quadrotor.mass);
    for (i, v) in quadrotor.inertia_diag.iter().enumerate() {
        check_positive(&mut errors, &format!("quadrotor.inertia_diag[{i}]"), *v);
    }
    check_positive(&mut errors, "quadrotor.gravity", quadrotor.gravity);
    check_positive(&mut errors, "quadrotor.k_v", quadrotor.k_v);
    check_positive(&mut errors, "quadrotor.k_r", quadrotor.k_r);
    check_positive(&mut errors, "quadrotor.k_omega", quadrotor.k_omega);

    let rld = raw.lidar.unwrap_or_default();
    let lidar = LidarConfig {
        ray_count: rld.ray_count.unwrap_or(defaults.lidar.ray_count),
        max_range: rld.max_range.unwrap_or(defaults.lidar.max_range),
        include_agents: rld.include_agents.unwrap_or(defaults.lidar.include_agents),
    };
    if lidar.ray_count < 8 {
        errors.push(format!("lidar.ray_count: must be at least 8 (got {})", lidar.ray_count));
    }
    check_positive(&mut errors, "lidar.max_range", lidar.max_range);

    let rn = raw.nominal.unwrap_or_default();
    let nominal = NominalSection {
        gain: rn.gain.unwrap_or(defaults.nominal.gain),
        speed_cap: rn.speed_cap.unwrap_or(defaults.nominal.speed_cap),
    };
    check_positive(&mut errors, "nominal.gain", nominal.gain);
    check_positive(&mut errors, "nominal.speed_cap", nominal.speed_cap);

    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    Ok(ExperimentConfig {
        scenario: raw.scenario.unwrap_or(defaults.scenario),
        runs,
        base_seed: raw.base_seed.unwrap_or(defaults.base_seed),
        liveness_enabled: raw.liveness_enabled.unwrap_or(defaults.liveness_enabled),
        jitter,
        substep_mode: raw.substep_mode.unwrap_or(defaults.substep_mode),
        max_cycles,
        output_dir: raw.output_dir.unwrap_or(defaults.output_dir),
        safety,
        liveness,
        quadrotor,
        lidar,
        nominal,
    })
}

/// Per-run entry of the suite summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub outcome: Outcome,
    pub completion_times: Vec<Option<f64>>,
    pub min_agent_distance: f64,
    pub min_barrier: f64,
    pub cycles: u32,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    config: &'a ExperimentConfig,
    summary: &'a SuiteSummary,
    runs: Vec<RunRecord>,
}

fn csv_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.12e}")
    } else if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        "nan".into()
    }
}

/// One row per agent sub-step, header included. Infinite barrier values
/// (empty clouds) serialize as `inf`.
pub fn write_trajectory_csv(path: &Path, outcome: &EpisodeOutcome) -> Result<()> {
    let mut text = String::with_capacity(64 + outcome.samples.len() * 256);
    text.push_str("run_seed,cycle,t,agent,x,y,z,vx,vy,vz,speed,h,liveness,perturbed,in_region\n");
    for r in &outcome.samples {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            outcome.seed,
            r.cycle,
            csv_float(r.time),
            r.agent,
            csv_float(r.position.x),
            csv_float(r.position.y),
            csv_float(r.position.z),
            csv_float(r.velocity.x),
            csv_float(r.velocity.y),
            csv_float(r.velocity.z),
            csv_float(r.speed),
            csv_float(r.barrier),
            csv_float(r.liveness),
            u8::from(r.perturbed),
            u8::from(r.in_region),
        )
        .expect("writing to a String cannot fail");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Run the configured suite and return the summary along with every
/// episode. Seeds are `base_seed..base_seed + runs`; episodes execute in
/// parallel but are collected in seed order, so the aggregate is
/// independent of scheduling. Writes `run_{seed:05}.csv` per run and
/// `summary.json` into the output directory.
pub fn run_suite_with_outcomes(cfg: &ExperimentConfig) -> Result<(SuiteSummary, Vec<EpisodeOutcome>)> {
    let params = cfg.to_sim_params();
    params.validate()?;
    let seeds: Vec<u64> = (0..cfg.runs as u64).map(|k| cfg.base_seed + k).collect();
    let outcomes = seeds
        .par_iter()
        .map(|&seed| run_episode(cfg.scenario, seed, cfg.jitter, &params))
        .collect::<Result<Vec<EpisodeOutcome>>>()?;

    fs::create_dir_all(&cfg.output_dir).map_err(|e| with_path(&cfg.output_dir, e))?;
    for outcome in &outcomes {
        let name = format!("run_{:05}.csv", outcome.seed);
        write_trajectory_csv(&cfg.output_dir.join(name), outcome)?;
    }

    let summary = summarize(&outcomes, &sim::constrained_region());
    let runs = outcomes
        .iter()
        .map(|o| RunRecord {
            seed: o.seed,
            outcome: o.outcome,
            completion_times: o.completion_times.clone(),
            min_agent_distance: o.min_agent_distance,
            min_barrier: o.min_barrier,
            cycles: o.cycles,
        })
        .collect();
    let doc = SummaryDoc { config: cfg, summary: &summary, runs };
    let mut json = serde_json::to_string_pretty(&doc)?;
    json.push('\n');
    fs::write(cfg.output_dir.join("summary.json"), json)?;
    Ok((summary, outcomes))
}

pub fn run_suite(cfg: &ExperimentConfig) -> Result<SuiteSummary> {
    run_suite_with_outcomes(cfg).map(|(summary, _)| summary)
}

/// Command-line surface. Flags override config-file values.
#[derive(Debug, Default, clap::Parser)]
#[command(name = "cloudnav", version, about = "Decentralized two-agent navigation experiments with point-cloud barrier filters")]
pub struct CliArgs {
    /// Scenario to run.
    #[arg(long, value_enum)]
    pub scenario: Option<ScenarioKind>,
    /// Number of seeded runs in the suite.
    #[arg(long)]
    pub runs: Option<u32>,
    /// Base seed; run k uses base_seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Disable the liveness layer (ablation).
    #[arg(long)]
    pub no_liveness: bool,
    /// Uniform start-position jitter in meters.
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Output directory for trajectory CSVs and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Whether agents integrate in their own sub-step or all together.
    #[arg(long, value_enum)]
    pub substep_mode: Option<SubstepMode>,
}

/// Load the config file (if any), overlay the flags, and validate.
pub fn resolve_config(args: &CliArgs) -> Result<ExperimentConfig> {
    let mut doc: Value = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| with_path(path, e))?;
            serde_json::from_str(&text)?
        }
        None => Value::Object(Default::default()),
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| Error::Config(vec!["config root must be a JSON object".into()]))?;
    if let Some(s) = args.scenario {
        obj.insert("scenario".into(), Value::String(s.to_string()));
    }
    if let Some(r) = args.runs {
        obj.insert("runs".into(), Value::from(r));
    }
    if let Some(s) = args.seed {
        obj.insert("base_seed".into(), Value::from(s));
    }
    if args.no_liveness {
        obj.insert("liveness_enabled".into(), Value::from(false));
    }
    if let Some(j) = args.jitter {
        let n = serde_json::Number::from_f64(j)
            .ok_or_else(|| Error::Config(vec![format!("jitter: must be finite (got {j})")]))?;
        obj.insert("jitter".into(), Value::Number(n));
    }
    if let Some(out) = &args.out {
        obj.insert("output_dir".into(), Value::String(out.to_string_lossy().into_owned()));
    }
    if let Some(mode) = args.substep_mode {
        obj.insert("substep_mode".into(), Value::String(mode.to_string()));
    }
    validate_config(&doc)
}

/// Human-readable one-suite report for the terminal.
pub fn render_summary(cfg: &ExperimentConfig, summary: &SuiteSummary) -> String {
    let opt = |v: Option<f64>| match v {
        Some(v) => format!("{v:.3}"),
        None => "n/a".into(),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} | {} runs from seed {} | liveness {}",
        cfg.scenario,
        summary.total,
        cfg.base_seed,
        if cfg.liveness_enabled { "on" } else { "off" }
    );
    let _ = writeln!(
        s,
        "outcomes: {} success / {} collision / {} deadlock ({:.1}% success)",
        summary.successes, summary.collisions, summary.deadlocks, summary.success_pct
    );
    let _ = writeln!(
        s,
        "time   r1 {} s, r2 {} s",
        opt(summary.time_r1),
        opt(summary.time_r2)
    );
    let _ = writeln!(
        s,
        "vel    r1 {} m/s, r2 {} m/s (constrained region)",
        opt(summary.vel_r1),
        opt(summary.vel_r2)
    );
    let _ = writeln!(
        s,
        "|dv|   r1 {} m/s, r2 {} m/s (constrained region)",
        opt(summary.dv_r1),
        opt(summary.dv_r2)
    );
    let _ = write!(s, "outputs in {}", cfg.output_dir.display());
    s
}
