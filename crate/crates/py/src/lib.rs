//! Python bindings for the navigation engine.
//!
//! The module mirrors the Rust surface with plain Python types: points and
//! velocities are `(x, y, z)` tuples, clouds are lists of tuples, episode
//! and suite results are dicts. Configuration knobs appear as keyword
//! arguments with the library defaults.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cloudnav::sim::DEFAULT_JITTER;
use cloudnav::{
    liveness, safety, AgentKinematics, BarrierEval, EpisodeOutcome, Error, Event,
    ExperimentConfig, LivenessConfig, PointCloud, SafetyConfig, ScenarioKind, SimParams,
    SubstepMode, Vec3,
};

type Triple = (f64, f64, f64);

fn vec3(t: Triple) -> Vec3 {
    Vec3::new(t.0, t.1, t.2)
}

fn triple(v: Vec3) -> Triple {
    (v.x, v.y, v.z)
}

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::IntegrationFailure | Error::Diverged { .. } => {
            PyRuntimeError::new_err(err.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_scenario(name: &str) -> PyResult<ScenarioKind> {
    name.parse().map_err(to_py_err)
}

fn parse_mode(name: &str) -> PyResult<SubstepMode> {
    match name {
        "interleaved" => Ok(SubstepMode::Interleaved),
        "simultaneous" => Ok(SubstepMode::Simultaneous),
        other => Err(PyValueError::new_err(format!(
            "unknown substep mode '{other}' (expected interleaved or simultaneous)"
        ))),
    }
}

/// Liveness angle between two agents given positions and velocities.
#[pyfunction]
#[pyo3(signature = (p_a, v_a, p_b, v_b, epsilon = 1e-6))]
fn liveness_value(p_a: Triple, v_a: Triple, p_b: Triple, v_b: Triple, epsilon: f64) -> PyResult<f64> {
    if !(epsilon > 0.0) {
        return Err(PyValueError::new_err("epsilon must be positive"));
    }
    let cfg = LivenessConfig { epsilon, ..LivenessConfig::default() };
    let a = AgentKinematics::new(vec3(p_a), vec3(v_a));
    let b = AgentKinematics::new(vec3(p_b), vec3(v_b));
    Ok(liveness::liveness_value(&a, &b, &cfg))
}

/// Largest liveness angle still treated as a conflict for speed ratio `zeta`.
#[pyfunction]
fn liveness_threshold(zeta: f64) -> PyResult<f64> {
    liveness::liveness_threshold(zeta).map_err(to_py_err)
}

/// Speed ratio that lets the faster agent clear a shared conflict first.
#[pyfunction]
fn min_speed_ratio(l: f64, d: f64, eps: f64, v: f64) -> PyResult<f64> {
    liveness::min_speed_ratio(l, d, eps, v).map_err(to_py_err)
}

/// Whether some ranking of the joint speeds steps down by `zeta` each rank.
#[pyfunction]
#[pyo3(signature = (speeds, zeta = 2.0))]
fn in_liveness_set(speeds: Vec<f64>, zeta: f64) -> PyResult<bool> {
    if speeds.len() < 2 {
        return Err(PyValueError::new_err("need at least two speeds"));
    }
    if speeds.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(PyValueError::new_err("speeds must be finite and nonnegative"));
    }
    Ok(liveness::in_liveness_set(&speeds, zeta))
}

/// Slow agents down (headings unchanged) until the joint speeds enter the
/// liveness set. Returns the adjusted velocities.
#[pyfunction]
#[pyo3(signature = (positions, velocities, priority = None, zeta = 2.0))]
fn resolve_deadlock(
    positions: Vec<Triple>,
    velocities: Vec<Triple>,
    priority: Option<Vec<usize>>,
    zeta: f64,
) -> PyResult<Vec<Triple>> {
    if positions.len() != velocities.len() {
        return Err(PyValueError::new_err("positions and velocities must pair up"));
    }
    let agents: Vec<AgentKinematics> = positions
        .into_iter()
        .zip(velocities)
        .map(|(p, v)| AgentKinematics::new(vec3(p), vec3(v)))
        .collect();
    let cfg = LivenessConfig { zeta, ..LivenessConfig::default() };
    liveness::resolve_deadlock(&agents, priority.as_deref(), &cfg)
        .map(|out| out.into_iter().map(triple).collect())
        .map_err(to_py_err)
}

/// Barrier value, gradient, and minimizing point over a cloud, or None for
/// an empty cloud.
#[pyfunction]
#[pyo3(signature = (q, cloud, delta = 0.1))]
fn barrier_value(q: Triple, cloud: Vec<Triple>, delta: f64) -> PyResult<Option<(f64, Triple, Triple)>> {
    if !(delta > 0.0) {
        return Err(PyValueError::new_err("delta must be positive"));
    }
    let cfg = SafetyConfig { delta, ..SafetyConfig::default() };
    let cloud = PointCloud { points: cloud.into_iter().map(vec3).collect(), stamp: 0.0 };
    Ok(safety::barrier_value(vec3(q), &cloud, &cfg)
        .map(|e| (e.value, triple(e.gradient), triple(e.nearest_point))))
}

/// Project a nominal command onto the barrier half-space constraint.
#[pyfunction]
#[pyo3(signature = (u_nom, value, gradient, alpha_gain = 1.0))]
fn safety_filter(u_nom: Triple, value: f64, gradient: Triple, alpha_gain: f64) -> PyResult<Triple> {
    if !(alpha_gain > 0.0) {
        return Err(PyValueError::new_err("alpha_gain must be positive"));
    }
    let cfg = SafetyConfig { alpha_gain, ..SafetyConfig::default() };
    let eval = BarrierEval { value, gradient: vec3(gradient), nearest_point: Vec3::ZERO };
    safety::safety_filter(vec3(u_nom), &eval, &cfg).map(triple).map_err(to_py_err)
}

/// Proportional go-to-goal velocity command, capped at `v_cap`.
#[pyfunction]
#[pyo3(signature = (q, goal, gain = 1.5, v_cap = 0.8))]
fn nominal_control(q: Triple, goal: Triple, gain: f64, v_cap: f64) -> PyResult<Triple> {
    if !(gain > 0.0) || !(v_cap > 0.0) {
        return Err(PyValueError::new_err("gain and v_cap must be positive"));
    }
    Ok(triple(safety::nominal_control(vec3(q), vec3(goal), gain, v_cap)))
}

/// One-step discrete barrier margin; nonnegative means the decay condition
/// held over the step.
#[pyfunction]
#[pyo3(signature = (h_next, h_curr, alpha_gain = 1.0, dt = 0.04))]
fn discrete_cbf_margin(h_next: f64, h_curr: f64, alpha_gain: f64, dt: f64) -> PyResult<f64> {
    if !(dt > 0.0) {
        return Err(PyValueError::new_err("dt must be positive"));
    }
    let cfg = SafetyConfig { alpha_gain, ..SafetyConfig::default() };
    Ok(safety::discrete_cbf_margin(h_next, h_curr, &cfg, dt))
}

fn episode_dict<'py>(py: Python<'py>, ep: &EpisodeOutcome) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scenario", ep.scenario.to_string())?;
    d.set_item("seed", ep.seed)?;
    d.set_item("outcome", ep.outcome.to_string())?;
    d.set_item("completion_times", ep.completion_times.clone())?;
    d.set_item("min_agent_distance", ep.min_agent_distance)?;
    d.set_item("min_barrier", ep.min_barrier)?;
    d.set_item("cycles", ep.cycles)?;
    let count = |pred: fn(&Event) -> bool| ep.events.iter().filter(|e| pred(e)).count();
    d.set_item("perturbations", count(|e| matches!(e, Event::PerturbationApplied { .. })))?;
    d.set_item("margin_violations", count(|e| matches!(e, Event::MarginViolation { .. })))?;
    d.set_item("collision_risks", count(|e| matches!(e, Event::CollisionRisk { .. })))?;
    Ok(d)
}

/// Simulate one scenario episode and return its outcome as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, seed = 0, jitter = DEFAULT_JITTER, liveness = true, substep_mode = "interleaved"))]
fn run_episode<'py>(
    py: Python<'py>,
    scenario: &str,
    seed: u64,
    jitter: f64,
    liveness: bool,
    substep_mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = parse_scenario(scenario)?;
    let params = SimParams {
        liveness_enabled: liveness,
        substep_mode: parse_mode(substep_mode)?,
        ..SimParams::default()
    };
    let ep = cloudnav::run_episode(kind, seed, jitter, &params).map_err(to_py_err)?;
    episode_dict(py, &ep)
}

/// Run a seeded suite, write the CSV and summary artifacts under `out_dir`,
/// and return the summary table as a dict.
#[pyfunction]
#[pyo3(signature = (scenario, out_dir, runs = 50, base_seed = 0, jitter = DEFAULT_JITTER, liveness = true))]
fn run_suite<'py>(
    py: Python<'py>,
    scenario: &str,
    out_dir: &str,
    runs: u32,
    base_seed: u64,
    jitter: f64,
    liveness: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig {
        scenario: parse_scenario(scenario)?,
        runs,
        base_seed,
        jitter,
        liveness_enabled: liveness,
        output_dir: PathBuf::from(out_dir),
        ..ExperimentConfig::default()
    };
    let summary = cloudnav::run_suite(&cfg).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("total", summary.total)?;
    d.set_item("successes", summary.successes)?;
    d.set_item("collisions", summary.collisions)?;
    d.set_item("deadlocks", summary.deadlocks)?;
    d.set_item("success_pct", summary.success_pct)?;
    d.set_item("time_r1", summary.time_r1)?;
    d.set_item("time_r2", summary.time_r2)?;
    d.set_item("vel_r1", summary.vel_r1)?;
    d.set_item("vel_r2", summary.vel_r2)?;
    d.set_item("dv_r1", summary.dv_r1)?;
    d.set_item("dv_r2", summary.dv_r2)?;
    Ok(d)
}

#[pymodule]
pub fn cloudnav_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(liveness_value, m)?)?;
    m.add_function(wrap_pyfunction!(liveness_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(min_speed_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(in_liveness_set, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_deadlock, m)?)?;
    m.add_function(wrap_pyfunction!(barrier_value, m)?)?;
    m.add_function(wrap_pyfunction!(safety_filter, m)?)?;
    m.add_function(wrap_pyfunction!(nominal_control, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_cbf_margin, m)?)?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_round_trip_preserves_components() {
        let t = (1.5, -2.25, 0.125);
        assert_eq!(triple(vec3(t)), t);
    }

    #[test]
    fn scenario_and_mode_parsing() {
        assert_eq!(parse_scenario("doorway").unwrap(), ScenarioKind::Doorway);
        assert_eq!(parse_scenario("intersection").unwrap(), ScenarioKind::Intersection);
        assert!(parse_scenario("hallway").is_err());
        assert_eq!(parse_mode("interleaved").unwrap(), SubstepMode::Interleaved);
        assert_eq!(parse_mode("simultaneous").unwrap(), SubstepMode::Simultaneous);
        assert!(parse_mode("lockstep").is_err());
    }

    #[test]
    fn error_kinds_map_to_python_exceptions() {
        Python::attach(|py| {
            let io = to_py_err(Error::Io(std::io::Error::other("disk gone")));
            assert!(io.is_instance_of::<PyIOError>(py));
            let val = to_py_err(Error::invalid("bad"));
            assert!(val.is_instance_of::<PyValueError>(py));
            let run = to_py_err(Error::Diverged { cycle: 3 });
            assert!(run.is_instance_of::<PyRuntimeError>(py));
        });
    }
}
