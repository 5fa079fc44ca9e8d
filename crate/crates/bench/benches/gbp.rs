use std::time::{Duration, Instant};

use criterion::{criterion_group, criterion_main, Criterion};
use gbplan_bench::{circle_world, trajectory_graph};

fn message_passing(c: &mut Criterion) {
    let mut group = c.benchmark_group("trajectory_sweep");
    for k in [8usize, 12, 20] {
        let (mut graph, _) = trajectory_graph(k, 5.0);
        group.bench_function(format!("k{k}"), |b| b.iter(|| graph.iterate(1, |_| true)));
    }
    group.finish();
}

fn simulation(c: &mut Criterion) {
    let mut group = c.benchmark_group("sim_step");
    group.sample_size(10);
    for n in [10usize, 30] {
        let warmup = 40;
        let mut world = circle_world(n, warmup);
        group.bench_function(format!("circle_n{n}"), |b| {
            b.iter_custom(|iters| {
                let mut spent = Duration::ZERO;
                for _ in 0..iters {
                    if world.all_finished() {
                        world = circle_world(n, warmup);
                    }
                    let t = Instant::now();
                    world.step().expect("step");
                    spent += t.elapsed();
                }
                spent
            })
        });
    }
    group.finish();
}

criterion_group!(benches, message_passing, simulation);
criterion_main!(benches);
