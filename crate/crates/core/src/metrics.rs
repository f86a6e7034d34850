//! Aggregates episode outcomes into the summary metric table: outcome
//! counts, completion times, and velocity statistics inside the
//! constrained region, averaged over the successful runs of a suite.

use crate::geometry::Aabb;
use crate::sim::{EpisodeOutcome, Outcome, TrajSample};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub total: usize,
    pub successes: usize,
    pub collisions: usize,
    pub deadlocks: usize,
    pub success_pct: f64,
    /// Mean completion time of agent 0 over successful runs.
    pub time_r1: Option<f64>,
    pub time_r2: Option<f64>,
    /// Mean speed inside the constrained region, agent 0, successes only.
    pub vel_r1: Option<f64>,
    pub vel_r2: Option<f64>,
    /// Mean per-step |speed change| inside the region, agent 0.
    pub dv_r1: Option<f64>,
    pub dv_r2: Option<f64>,
}

/// Order-independent mean: summing in sorted order makes the result a
/// pure function of the multiset, so shuffled suites aggregate bit-equal.
fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// Speed statistics of one agent's time series inside `region`: the mean
/// speed over in-region rows and the mean |speed delta| over consecutive
/// row pairs that are both in-region. `None` if the agent never entered.
pub fn region_velocity_stats(samples: &[TrajSample], region: &Aabb) -> Option<(f64, f64)> {
    let inside: Vec<bool> = samples.iter().map(|s| region.contains(s.position)).collect();
    let speeds: Vec<f64> = samples
        .iter()
        .zip(&inside)
        .filter(|(_, inside)| **inside)
        .map(|(s, _)| s.speed)
        .collect();
    if speeds.is_empty() {
        return None;
    }
    let mean_speed = speeds.iter().sum::<f64>() / speeds.len() as f64;

    let mut deltas = Vec::new();
    for i in 1..samples.len() {
        if inside[i - 1] && inside[i] {
            deltas.push((samples[i].speed - samples[i - 1].speed).abs());
        }
    }
    let mean_abs_dv = if deltas.is_empty() {
        0.0
    } else {
        deltas.iter().sum::<f64>() / deltas.len() as f64
    };
    Some((mean_speed, mean_abs_dv))
}

/// Aggregate a suite. Counts cover every run; the time and velocity
/// columns average over successful runs only, skipping runs where the
/// agent never produced the underlying quantity.
pub fn summarize(outcomes: &[EpisodeOutcome], region: &Aabb) -> SuiteSummary {
    assert!(!outcomes.is_empty(), "summarize requires at least one outcome");
    let total = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.outcome == Outcome::Success).count();
    let collisions = outcomes.iter().filter(|o| o.outcome == Outcome::Collision).count();
    let deadlocks = outcomes.iter().filter(|o| o.outcome == Outcome::Deadlock).count();

    let mut times: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut vels: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut dvs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for outcome in outcomes {
        if outcome.outcome != Outcome::Success {
            continue;
        }
        for agent in 0..2 {
            if let Some(Some(t)) = outcome.completion_times.get(agent) {
                times[agent].push(*t);
            }
            let series: Vec<TrajSample> = outcome
                .samples
                .iter()
                .filter(|s| s.agent == agent)
                .copied()
                .collect();
            if let Some((vel, dv)) = region_velocity_stats(&series, region) {
                vels[agent].push(vel);
                dvs[agent].push(dv);
            }
        }
    }

    SuiteSummary {
        total,
        successes,
        collisions,
        deadlocks,
        success_pct: 100.0 * successes as f64 / total as f64,
        time_r1: stable_mean(&times[0]),
        time_r2: stable_mean(&times[1]),
        vel_r1: stable_mean(&vels[0]),
        vel_r2: stable_mean(&vels[1]),
        dv_r1: stable_mean(&dvs[0]),
        dv_r2: stable_mean(&dvs[1]),
    }
}
