//! Acceptance suite: ten criteria, one PASS/FAIL line each.
//!
//! Criteria 1–5 are exactness and invariance properties checked against
//! independent oracles; 6–10 are scaled-down reproductions of the planner's
//! behaviour with trend-level tolerances.
//!
//! Tolerances:
//! 1. GBP means vs dense normal-equations solve: trees 1e-9 (50 graphs,
//!    ≤ 20 variables), loopy graphs 1e-6 after ≤ 500 sweeps at damping 0.4.
//! 2. Analytic vs central-difference Jacobians, 1e-5 relative, 100 points
//!    per factor kind.
//! 3. Dynamics precision × process covariance = I to 1e-9 for 100 draws.
//! 4. LDJ: scale and time-shift invariance to 1e-9; `sin(2πt)` on [0, 1]
//!    sampled at 0.01 s within 1 % of −ln((2π)³·π).
//! 5. Byte-identical traces across repeated runs and thread counts.
//! 6. Circle, 10 robots at 15 m/s: no collisions, every robot arrives,
//!    mean distance in [100, 115] m, over 5 seeds.
//! 7. Circle with obstacles, 30 robots, r_C ∈ {20, 40, 60, 80}: seed-mean
//!    makespan non-decreasing with ≥ 10 % total rise; mean distance within
//!    ±10 % of 104 m. Runs are capped at 400 ticks; a run that has not
//!    finished by then has no makespan.
//! 8. Circle, 21 robots at 10 m/s, γ ∈ {0, 0.2, 0.5, 0.8}: no collisions up
//!    to γ = 0.5 over 5 seeds; seed-mean makespan strictly increasing in γ;
//!    γ = 0 makespan within ±25 % of 19.5 s.
//! 9. Junction at 2 robots/s for 300 ticks after warm-up: outflow ≥ 0.9 ×
//!    inflow and no correctness violations.
//! 10. Head-on pair closing at 30 m/s from 60 m: separation ≥ r_A + r_B at
//!     every tick and opposite lateral swerves.
//!
//! Set `ACCEPTANCE_ONLY=6,9` to run a subset and `ACCEPTANCE_STRICT=1` to
//! make any failing criterion fail the process.

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use gbplan_core::factors::{
    dynamics_covariance, dynamics_factor, dynamics_precision, interrobot_factor, obstacle_factor, pose_factor,
    FactorDef,
};
use gbplan_core::metrics::{ldj, robot_metrics, summarize};
use gbplan_core::sdf::Bounds;
use gbplan_core::{run, FactorParams, Polygon, RobotState, RunResult, ScenarioConfig, ScenarioKind, SdfGrid};
use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn seeds() -> std::ops::Range<u64> {
    0..5
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn run_ok(cfg: &ScenarioConfig) -> RunResult {
    run(cfg).unwrap_or_else(|e| panic!("run failed: {e}"))
}

// 1 ---------------------------------------------------------------------

fn gbp_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_tree: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.gen_range(2..=20);
        let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let (edges, _) = random_tree(&mut rng, n);
        let mut p = random_problem(&mut rng, &dims, &edges, 1.0, 0.4);
        let vars = p.vars.clone();
        iterate_to_convergence(&mut p.graph, &vars, 1e-14, 2000);
        worst_tree = worst_tree.max(mean_error(&p));
    }
    let mut worst_loopy: f64 = 0.0;
    let mut most_sweeps = 0;
    for _ in 0..50 {
        let n = rng.gen_range(5..=20);
        let dims: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let (mut edges, _) = random_tree(&mut rng, n);
        let extra = n / 2 + 1;
        while edges.len() < n - 1 + extra {
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && !edges.contains(&(a, b)) && !edges.contains(&(b, a)) {
                edges.push((a, b));
            }
        }
        let mut p = random_problem(&mut rng, &dims, &edges, 0.5, 0.4);
        let vars = p.vars.clone();
        most_sweeps = most_sweeps.max(iterate_to_convergence(&mut p.graph, &vars, 1e-12, 500));
        worst_loopy = worst_loopy.max(mean_error(&p));
    }
    check(
        worst_tree < 1e-9 && worst_loopy < 1e-6,
        format!("max mean error: trees {worst_tree:.1e}, loopy {worst_loopy:.1e} (≤ {most_sweeps} sweeps)"),
    )
}

fn mean_error(p: &LinearProblem) -> f64 {
    let (mean, _) = p.solve();
    p.vars
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let (o, d) = p.block(i);
            let got = p.graph.variable(*v).unwrap().belief().mean().unwrap();
            (got - mean.rows(o, d)).amax()
        })
        .fold(0.0, f64::max)
}

// 2 ---------------------------------------------------------------------

fn jacobians() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let params = FactorParams {
        sigma_p: 1e-15,
        sigma_d: 1.0,
        sigma_o: 0.005,
        sigma_r: 0.005,
        robot_radius: 2.0,
        epsilon: 1.0,
        comm_radius: 50.0,
    };
    let wall = SdfGrid::build(
        &[Polygon::rect([-200.0, -200.0], [0.0, 200.0])],
        Bounds {
            min: [-20.0, -20.0],
            max: [20.0, 20.0],
        },
        0.25,
    );
    let obstacle = obstacle_factor(std::sync::Arc::new(wall), 2.0, 0.005);
    let error = |def: &FactorDef, x: &DVector<f64>| {
        relative_error(
            &def.model.jacobian(x),
            &numeric_jacobian(|p| def.model.measure(p), x, 1e-6),
        )
    };
    let mut worst = BTreeMap::new();
    for _ in 0..100 {
        let anchor = RobotState::from_slice(random_vector(&mut rng, 4, 50.0).as_slice());
        let e = error(&pose_factor(&anchor, 1.0), &random_vector(&mut rng, 4, 50.0));
        worst.entry("pose").and_modify(|w: &mut f64| *w = w.max(e)).or_insert(e);

        let dt = rng.gen_range(0.01..3.0);
        let e = error(&dynamics_factor(dt, 1.0), &random_vector(&mut rng, 8, 50.0));
        worst
            .entry("dynamics")
            .and_modify(|w: &mut f64| *w = w.max(e))
            .or_insert(e);

        let x = DVector::from_vec(vec![
            rng.gen_range(0.05..1.95),
            rng.gen_range(-15.0..15.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        ]);
        let e = error(&obstacle, &x);
        worst
            .entry("obstacle")
            .and_modify(|w: &mut f64| *w = w.max(e))
            .or_insert(e);

        let def = interrobot_factor(rng.gen_range(0.1..5.0), &params);
        let d = rng.gen_range(0.2..params.critical_distance() - 0.05);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut x = random_vector(&mut rng, 8, 30.0);
        x[4] = x[0] - d * angle.cos();
        x[5] = x[1] - d * angle.sin();
        let e = error(&def, &x);
        worst
            .entry("inter-robot")
            .and_modify(|w: &mut f64| *w = w.max(e))
            .or_insert(e);
    }
    let max = worst.values().copied().fold(0.0, f64::max);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(max < 1e-5, format!("max relative error: {detail}"))
}

// 3 ---------------------------------------------------------------------

fn dynamics_closed_form() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let dt = rng.gen_range(0.01..5.0);
        let sigma = rng.gen_range(0.05..5.0);
        let product = dynamics_precision(dt, sigma) * dynamics_covariance(dt, sigma);
        worst = worst.max((product - DMatrix::<f64>::identity(4, 4)).amax());
    }
    check(worst < 1e-9, format!("max |ΛΣ − I| = {worst:.1e}"))
}

// 4 ---------------------------------------------------------------------

fn ldj_properties() -> Verdict {
    let dt = 0.01;
    let sinusoid: Vec<(f64, Vector2<f64>)> = (0..=100)
        .map(|i| {
            let t = i as f64 * dt;
            (t, Vector2::new((std::f64::consts::TAU * t).sin(), 0.0))
        })
        .collect();
    let base = ldj(&sinusoid).unwrap();
    let analytic = -((std::f64::consts::TAU).powi(3) * std::f64::consts::PI).ln();
    let rel = ((base - analytic) / analytic).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let series: Vec<(f64, Vector2<f64>)> = (0..200)
            .map(|i| {
                (
                    i as f64 * 0.1,
                    Vector2::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
                )
            })
            .collect();
        let reference = ldj(&series).unwrap();
        let scale = rng.gen_range(0.1..20.0);
        let shift = rng.gen_range(-100.0..100.0);
        let scaled: Vec<_> = series.iter().map(|(t, v)| (*t, v * scale)).collect();
        let shifted: Vec<_> = series.iter().map(|(t, v)| (t + shift, *v)).collect();
        worst = worst
            .max((ldj(&scaled).unwrap() - reference).abs())
            .max((ldj(&shifted).unwrap() - reference).abs());
    }
    check(
        rel < 0.01 && worst < 1e-9,
        format!(
            "sinusoid {base:.4} vs {analytic:.4} ({:.2}%), invariance error {worst:.1e}",
            rel * 100.0
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn determinism() -> Verdict {
    let mut cfg = ScenarioConfig::default();
    cfg.robots.count = 8;
    cfg.circle.radius = 30.0;
    cfg.comm.gamma = 0.3;
    cfg.seed = 42;
    cfg.max_ticks = 60;
    let mut traces = Vec::new();
    for threads in [1, 1, 2, 4] {
        cfg.threads = threads;
        traces.push(run_ok(&cfg).trace_csv_string());
    }
    let identical = traces.windows(2).all(|w| w[0] == w[1]);
    check(
        identical,
        format!(
            "{} runs, trace size {} bytes, threads 1/1/2/4",
            traces.len(),
            traces[0].len()
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn circle_ten() -> Verdict {
    let mut collisions = 0;
    let mut incomplete = 0;
    let mut distances = Vec::new();
    for seed in seeds() {
        let mut cfg = ScenarioConfig::default();
        cfg.robots.count = 10;
        cfg.seed = seed;
        let r = run_ok(&cfg);
        let s = summarize(&r, &robot_metrics(&r));
        collisions += s.collision_episodes;
        incomplete += s.robots - s.completed;
        distances.push(s.mean_distance.unwrap_or(f64::NAN));
    }
    let d = mean(&distances);
    check(
        collisions == 0 && incomplete == 0 && (100.0..=115.0).contains(&d),
        format!("collisions {collisions}, unfinished robots {incomplete}, mean distance {d:.1} m"),
    )
}

// 7 ---------------------------------------------------------------------

const OBSTACLE_SEEDS: u64 = 3;
/// 40 s of simulated time: three times the expected makespan.
const OBSTACLE_TICKS: u64 = 400;

fn obstacle_trend() -> Verdict {
    let mut makespans = Vec::new();
    let mut distances = Vec::new();
    let mut collisions = 0;
    for rc in [20.0, 40.0, 60.0, 80.0] {
        let (mut m, mut d) = (Vec::new(), Vec::new());
        for seed in 0..OBSTACLE_SEEDS {
            let mut cfg = ScenarioConfig {
                kind: ScenarioKind::CircleWithObstacles,
                seed,
                max_ticks: OBSTACLE_TICKS,
                ..Default::default()
            };
            cfg.robots.count = 30;
            cfg.comm.radius = rc;
            let r = run_ok(&cfg);
            let s = summarize(&r, &robot_metrics(&r));
            collisions += s.collision_episodes;
            m.push(if s.makespan.complete {
                s.makespan.seconds
            } else {
                f64::NAN
            });
            d.push(s.mean_distance.unwrap_or(f64::NAN));
        }
        makespans.push(mean(&m));
        distances.push(mean(&d));
    }
    let monotone = makespans.windows(2).all(|w| w[1] >= w[0]);
    let rise = makespans[3] / makespans[0] - 1.0;
    let distance_ok = distances.iter().all(|d| (d / 104.0 - 1.0).abs() <= 0.10);
    check(
        monotone && rise >= 0.10 && distance_ok,
        format!(
            "makespan {} s (rise {:.1}%), mean distance {} m, collisions {collisions}",
            fmt_list(&makespans),
            rise * 100.0,
            fmt_list(&distances)
        ),
    )
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/")
}

// 8 ---------------------------------------------------------------------

fn failure_trend() -> Verdict {
    let gammas = [0.0, 0.2, 0.5, 0.8];
    let mut makespans = Vec::new();
    let mut collisions = Vec::new();
    for gamma in gammas {
        let (mut m, mut c) = (Vec::new(), 0);
        for seed in seeds() {
            let mut cfg = ScenarioConfig::default();
            cfg.robots.count = 21;
            cfg.robots.initial_speed = 10.0;
            cfg.comm.gamma = gamma;
            cfg.seed = seed;
            let r = run_ok(&cfg);
            let s = summarize(&r, &robot_metrics(&r));
            c += s.collision_episodes;
            m.push(if s.makespan.complete {
                s.makespan.seconds
            } else {
                f64::NAN
            });
        }
        makespans.push(mean(&m));
        collisions.push(c);
    }
    let safe = collisions[..3].iter().all(|c| *c == 0);
    let increasing = makespans.windows(2).all(|w| w[1] > w[0]);
    let base_ok = (makespans[0] / 19.5 - 1.0).abs() <= 0.25;
    check(
        safe && increasing && base_ok,
        format!(
            "makespan {} s, collisions {:?} for γ = 0/0.2/0.5/0.8",
            fmt_list(&makespans),
            collisions
        ),
    )
}

// 9 ---------------------------------------------------------------------

fn junction_flow() -> Verdict {
    let mut cfg = ScenarioConfig {
        kind: ScenarioKind::Junction,
        ..Default::default()
    };
    cfg.junction.channel_width = 16.0;
    cfg.junction.inflow_rate = 2.0;
    cfg.robots.initial_speed = 15.0;
    cfg.planner.horizon = Some(2.0);
    cfg.factors.sigma_d = 0.5;
    cfg.max_ticks = cfg.junction.warmup_ticks + 300;
    let r = run_ok(&cfg);
    let s = summarize(&r, &robot_metrics(&r));
    let flow = s.flow.expect("junction runs report flow");
    check(
        flow.q_out >= 0.9 * flow.q_in && flow.correctness_violations == 0 && flow.q_in > 0.0,
        format!(
            "Q_in {:.2}/s, Q_out {:.2}/s over {} ticks, violations {}",
            flow.q_in, flow.q_out, flow.window, flow.correctness_violations
        ),
    )
}

// 10 --------------------------------------------------------------------

fn head_on() -> Verdict {
    let cfg = ScenarioConfig::from_toml_str(include_str!("../../../scenarios/head_on.toml")).unwrap();
    let r = run_ok(&cfg);
    let radii: BTreeMap<u32, f64> = r.robots.iter().map(|rec| (rec.id, rec.radius)).collect();
    let mut min_gap = f64::INFINITY;
    let mut by_tick: BTreeMap<u64, Vec<(u32, Vector2<f64>)>> = BTreeMap::new();
    for e in &r.trace {
        by_tick.entry(e.tick).or_default().push((e.robot, e.state.pos));
    }
    for robots in by_tick.values() {
        if let [(a, pa), (b, pb)] = robots.as_slice() {
            min_gap = min_gap.min((pa - pb).norm() - radii[a] - radii[b]);
        }
    }
    // signed peak sideways excursion of each robot from its start line; the
    // robots start 5 cm off the centre line, so a swerve must exceed that
    let swerves: Vec<f64> = r
        .robots
        .iter()
        .map(|rec| {
            r.trace
                .iter()
                .filter(|e| e.robot == rec.id)
                .map(|e| e.state.pos.y - rec.start.pos.y)
                .fold(0.0, |best: f64, y| if y.abs() > best.abs() { y } else { best })
        })
        .collect();
    let opposite = swerves.len() == 2 && swerves[0] * swerves[1] < 0.0 && swerves.iter().all(|y| y.abs() > 0.5);
    check(
        min_gap >= 0.0 && opposite && r.collisions.is_empty(),
        format!(
            "min clearance {min_gap:.2} m, peak lateral offsets {:+.2}/{:+.2} m",
            swerves.first().copied().unwrap_or(f64::NAN),
            swerves.get(1).copied().unwrap_or(f64::NAN)
        ),
    )
}

/// Number, name and check of one criterion.
type Criterion = (usize, &'static str, fn() -> Verdict);

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 10] = [
        (1, "gbp exactness", gbp_exactness),
        (2, "jacobians", jacobians),
        (3, "dynamics closed form", dynamics_closed_form),
        (4, "ldj invariances", ldj_properties),
        (5, "determinism", determinism),
        (6, "circle, 10 robots", circle_ten),
        (7, "obstacle radius trend", obstacle_trend),
        (8, "failure trend", failure_trend),
        (9, "junction flow", junction_flow),
        (10, "head-on avoidance", head_on),
    ];
    let (mut ran, mut failed) = (0, 0);
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let verdict = f();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    // Verdicts are always reported; failing the process is opt-in so that
    // the workspace suite stays usable while a criterion is out of reach.
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
