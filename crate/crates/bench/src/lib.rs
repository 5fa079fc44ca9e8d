//! Fixtures shared by the benchmarks under `benches/`.

use gbplan_core::factors::{dynamics_factor, pose_factor, FactorDef};
use gbplan_core::{GbpGraph, RobotState, ScenarioConfig, TrajectorySchedule, VarSlot, VariableId, World};

/// A lone robot's trajectory graph: `k` states on the geometric schedule,
/// pose factors at both ends and a dynamics factor between neighbours.
pub fn trajectory_graph(k: usize, horizon: f64) -> (GbpGraph, Vec<VariableId>) {
    let schedule = TrajectorySchedule::geometric(k, 0.1, horizon).expect("valid schedule");
    let start = RobotState::new(-50.0, 0.0, 15.0, 0.0);
    let goal = RobotState::new(50.0, 0.0, 0.0, 0.0);
    let mut graph = GbpGraph::new(0.4);
    let vars: Vec<VariableId> = (0..k)
        .map(|i| {
            let s = start.lerp(&goal, i as f64 / (k - 1) as f64);
            graph.add_variable(s.to_vector(), None).expect("variable")
        })
        .collect();
    let mut add = |def: FactorDef, slots: Vec<VarSlot>| {
        graph
            .add_factor(def.kind, slots, def.model, def.z, def.precision, &[])
            .expect("factor");
    };
    add(pose_factor(&start, 1e-3), vec![VarSlot::Local(vars[0])]);
    add(pose_factor(&goal, 1e-3), vec![VarSlot::Local(vars[k - 1])]);
    for (i, gap) in schedule.gaps().into_iter().enumerate() {
        add(
            dynamics_factor(gap, 1.0),
            vec![VarSlot::Local(vars[i]), VarSlot::Local(vars[i + 1])],
        );
    }
    (graph, vars)
}

/// A circle-formation world advanced by `warmup` ticks so that robots are
/// connected and inter-robot factors exist.
pub fn circle_world(robots: usize, warmup: u64) -> World {
    let mut cfg = ScenarioConfig::default();
    cfg.robots.count = robots;
    cfg.seed = 1;
    cfg.threads = 1;
    let mut world = World::new(&cfg).expect("valid scenario");
    for _ in 0..warmup {
        world.step().expect("step");
    }
    world
}
