//! Post-hoc evaluation of finished runs: distance travelled, makespan,
//! log dimensionless jerk (LDJ), junction flow rates and the junction
//! correctness condition.
//!
//! Everything here is a pure function of a [`RunResult`] (or of plain
//! sample series), so metrics can be recomputed from saved traces.

use std::io::Write;

use nalgebra::Vector2;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::scenario::Region;
use crate::sim::{Outcome, RobotRecord, RunResult, TraceEvent};

/// Token used wherever a zero-jerk (infinitely smooth) LDJ is serialized.
pub const PERFECTLY_SMOOTH: &str = "perfectly_smooth";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("robot {0} never reached its goal")]
    Incomplete(u32),
    #[error("robot {0} does not appear in the run")]
    UnknownRobot(u32),
    #[error("need at least 4 velocity samples, got {0}")]
    TooFewSamples(usize),
    #[error("velocity samples are not uniformly spaced in time")]
    NonUniformSampling,
    #[error("peak speed is zero; jerk cannot be normalized")]
    ZeroPeakSpeed,
}

/// Length of the polyline through `points`.
pub fn path_length(points: &[Vector2<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

fn events_of(trace: &[TraceEvent], id: u32) -> impl Iterator<Item = &TraceEvent> {
    trace.iter().filter(move |e| e.robot == id)
}

fn record_of(result: &RunResult, id: u32) -> Result<&RobotRecord, MetricsError> {
    result
        .robots
        .iter()
        .find(|r| r.id == id)
        .ok_or(MetricsError::UnknownRobot(id))
}

/// Ground-truth path length of robot `id` from spawn to its finish tick.
/// Robots that never finished are reported as [`MetricsError::Incomplete`].
pub fn distance_travelled(result: &RunResult, id: u32) -> Result<f64, MetricsError> {
    let record = record_of(result, id)?;
    let finish = record.finish_tick.ok_or(MetricsError::Incomplete(id))?;
    let points: Vec<Vector2<f64>> = events_of(&result.trace, id)
        .filter(|e| e.tick <= finish)
        .map(|e| e.state.pos)
        .collect();
    Ok(path_length(&points))
}

/// Time until the last robot finished.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Makespan {
    /// Latest finish time among robots that finished, seconds.
    pub seconds: f64,
    /// Whether every robot finished; otherwise `seconds` covers only the
    /// finished ones and the value must be read as a lower bound.
    pub complete: bool,
}

/// Makespan over a set of robot records at timestep `dt`.
pub fn makespan(robots: &[RobotRecord], dt: f64) -> Makespan {
    let seconds = robots
        .iter()
        .filter_map(|r| r.finish_tick)
        .max()
        .map_or(0.0, |t| t as f64 * dt);
    Makespan {
        seconds,
        complete: robots.iter().all(|r| r.finish_tick.is_some()),
    }
}

/// Log dimensionless jerk of a uniformly sampled velocity series
/// `(t, v(t))`:
///
/// `−ln( (t_end − t_start)³ / v_max² · ∫ |v̈|² dt )`
///
/// with `v̈` from second-order central differences at interior samples and
/// the integral by the trapezoid rule. Larger is smoother; a series with no
/// jerk at all returns `f64::INFINITY`.
pub fn ldj(samples: &[(f64, Vector2<f64>)]) -> Result<f64, MetricsError> {
    let n = samples.len();
    if n < 4 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let duration = samples[n - 1].0 - samples[0].0;
    let dt = duration / (n - 1) as f64;
    let uniform = dt > 0.0 && samples.windows(2).all(|w| ((w[1].0 - w[0].0) - dt).abs() <= 1e-6 * dt);
    if !uniform {
        return Err(MetricsError::NonUniformSampling);
    }
    let v_max = samples.iter().fold(0.0f64, |m, (_, v)| m.max(v.norm()));
    if v_max == 0.0 {
        return Err(MetricsError::ZeroPeakSpeed);
    }
    let jerk_sq: Vec<f64> = samples
        .windows(3)
        .map(|w| ((w[2].1 - 2.0 * w[1].1 + w[0].1) / (dt * dt)).norm_squared())
        .collect();
    let integral: f64 = jerk_sq.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
    if integral == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-(duration.powi(3) / (v_max * v_max) * integral).ln())
}

/// Ground-truth velocity series of robot `id` from spawn to finish (or to
/// the end of the run for robots that never finished).
pub fn velocity_series(result: &RunResult, id: u32) -> Vec<(f64, Vector2<f64>)> {
    let finish = result
        .robots
        .iter()
        .find(|r| r.id == id)
        .and_then(|r| r.finish_tick)
        .unwrap_or(u64::MAX);
    events_of(&result.trace, id)
        .filter(|e| e.tick <= finish)
        .map(|e| (e.tick as f64 * result.dt, e.state.vel))
        .collect()
}

fn serialize_ldj<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_infinite() => s.serialize_str(PERFECTLY_SMOOTH),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

fn format_ldj(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => PERFECTLY_SMOOTH.to_string(),
        Some(x) => x.to_string(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobotMetrics {
    pub id: u32,
    pub outcome: Outcome,
    /// Path length to the goal; `None` for robots that never finished.
    pub distance: Option<f64>,
    /// Seconds from spawn to finish; `None` for robots that never finished.
    pub completion_time: Option<f64>,
    /// `None` when the series is too short or never moves.
    #[serde(serialize_with = "serialize_ldj")]
    pub ldj: Option<f64>,
    pub collisions: u64,
}

/// Per-robot metrics in robot id order.
pub fn robot_metrics(result: &RunResult) -> Vec<RobotMetrics> {
    result
        .robots
        .iter()
        .map(|r| RobotMetrics {
            id: r.id,
            outcome: r.outcome,
            distance: distance_travelled(result, r.id).ok(),
            completion_time: r.finish_tick.map(|f| (f - r.spawn_tick) as f64 * result.dt),
            ldj: ldj(&velocity_series(result, r.id)).ok(),
            collisions: r.collisions,
        })
        .collect()
}

/// Per-robot CSV: `id,outcome,distance,completion_time,ldj,collisions`.
/// Unknown values are empty; zero-jerk LDJ is written as
/// [`PERFECTLY_SMOOTH`].
pub fn write_robot_csv<W: Write>(metrics: &[RobotMetrics], mut w: W) -> std::io::Result<()> {
    writeln!(w, "id,outcome,distance,completion_time,ldj,collisions")?;
    for m in metrics {
        let outcome = match m.outcome {
            Outcome::Active => "active".to_string(),
            Outcome::Completed => "completed".to_string(),
            Outcome::Exited { side } => format!("exited_{side}"),
        };
        writeln!(
            w,
            "{},{},{},{},{},{}",
            m.id,
            outcome,
            m.distance.map(|d| d.to_string()).unwrap_or_default(),
            m.completion_time.map(|d| d.to_string()).unwrap_or_default(),
            format_ldj(m.ldj),
            m.collisions
        )?;
    }
    Ok(())
}

/// Flow through a region over a window of ticks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowReport {
    /// Entries into the region per second.
    pub q_in: f64,
    /// Exits from the region per second.
    pub q_out: f64,
    /// First tick of the window.
    pub window_start: u64,
    /// Window length in ticks.
    pub window: u64,
    /// Robots that collided or left by the wrong side.
    pub correctness_violations: u64,
}

/// Counts region entries and exits whose tick falls in
/// `window_start .. window_start + window`. A robot entering between two
/// consecutive records counts at the later one; a robot that despawns
/// while inside counts as leaving at its last record.
pub fn flowrates(result: &RunResult, region: Region, window_start: u64, window: u64) -> FlowReport {
    let end = window_start + window;
    let in_window = |t: u64| t >= window_start && t < end;
    let (mut entries, mut exits) = (0u64, 0u64);
    for r in &result.robots {
        let mut inside = false;
        let mut last_tick = None;
        for e in events_of(&result.trace, r.id) {
            let now = region.contains(e.state.pos);
            if now && !inside && in_window(e.tick) {
                entries += 1;
            }
            if !now && inside && in_window(e.tick) {
                exits += 1;
            }
            inside = now;
            last_tick = Some(e.tick);
        }
        if let Some(t) = last_tick {
            if inside && r.outcome != Outcome::Active && in_window(t) {
                exits += 1;
            }
        }
    }
    let seconds = window as f64 * result.dt;
    let rate = |n: u64| if seconds > 0.0 { n as f64 / seconds } else { 0.0 };
    FlowReport {
        q_in: rate(entries),
        q_out: rate(exits),
        window_start,
        window,
        correctness_violations: correctness_violations(&result.robots),
    }
}

/// Robots that were in a collision or left the junction by a side other
/// than the one they were heading for.
pub fn correctness_violations(robots: &[RobotRecord]) -> u64 {
    robots
        .iter()
        .filter(|r| r.collisions > 0 || r.correct_exit() == Some(false))
        .count() as u64
}

/// Run-level summary written next to each trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub status: crate::sim::RunStatus,
    pub ticks: u64,
    pub robots: usize,
    pub completed: usize,
    pub makespan: Makespan,
    /// Mean over finished robots.
    pub mean_distance: Option<f64>,
    /// Mean over finite LDJ values.
    #[serde(serialize_with = "serialize_ldj")]
    pub mean_ldj: Option<f64>,
    /// Robots whose LDJ was the zero-jerk sentinel (excluded from the mean).
    pub perfectly_smooth: usize,
    pub collision_episodes: usize,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub flow: Option<FlowReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Summarizes a run. For junction runs the flow is measured through the
/// central region over the ticks after the configured warm-up.
pub fn summarize(result: &RunResult, per_robot: &[RobotMetrics]) -> RunSummary {
    let flow = result.junction.map(|j| {
        let warmup = result.config.junction.warmup_ticks.min(result.ticks);
        flowrates(result, j.central_region(), warmup, result.ticks + 1 - warmup)
    });
    RunSummary {
        status: result.status,
        ticks: result.ticks,
        robots: result.robots.len(),
        completed: result.robots.iter().filter(|r| r.finish_tick.is_some()).count(),
        makespan: makespan(&result.robots, result.dt),
        mean_distance: mean(per_robot.iter().filter_map(|m| m.distance)),
        mean_ldj: mean(per_robot.iter().filter_map(|m| m.ldj).filter(|v| v.is_finite())),
        perfectly_smooth: per_robot.iter().filter(|m| m.ldj.is_some_and(f64::is_infinite)).count(),
        collision_episodes: result.collisions.len(),
        messages_sent: result.comm.sent,
        messages_dropped: result.comm.dropped,
        flow,
    }
}
