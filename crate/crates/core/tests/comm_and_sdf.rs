//! Neighbour discovery, drop sampling and the distance field against
//! brute-force references.

use std::collections::{BTreeMap, BTreeSet};

use gbplan_core::comm::{neighbors, sample_failures};
use gbplan_core::sdf::Bounds;
use gbplan_core::{Polygon, SdfGrid};
use nalgebra::Vector2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn neighbours_match_all_pairs(
        points in prop::collection::vec((-60.0f64..60.0, -60.0f64..60.0), 0..40),
        radius in 1.0f64..80.0,
    ) {
        let positions: BTreeMap<u32, Vector2<f64>> = points
            .iter()
            .enumerate()
            .map(|(i, (x, y))| (i as u32 * 3 + 1, Vector2::new(*x, *y)))
            .collect();
        let got = neighbors(&positions, radius);
        prop_assert_eq!(got.len(), positions.len());
        for (a, pa) in &positions {
            let want: BTreeSet<u32> = positions
                .iter()
                .filter(|(b, pb)| *b != a && ((pa.x - pb.x).powi(2) + (pa.y - pb.y).powi(2)).sqrt() < radius)
                .map(|(b, _)| *b)
                .collect();
            prop_assert_eq!(&got[a], &want);
        }
    }

    #[test]
    fn drop_sets_have_the_rounded_size(n in 0usize..30, gamma in 0.0f64..=1.0, seed: u64, tick in 0u64..1000) {
        let connected: BTreeSet<u32> = (0..n as u32).map(|i| i * 2).collect();
        let drops = sample_failures(7, &connected, gamma, seed, tick);
        let expected = ((gamma * n as f64) + 0.5).floor() as usize;
        prop_assert_eq!(drops.len(), expected.min(n));
        prop_assert!(drops.is_subset(&connected));
        prop_assert_eq!(drops, sample_failures(7, &connected, gamma, seed, tick));
    }
}

#[test]
fn drops_are_spread_over_peers() {
    let connected: BTreeSet<u32> = (0..10).collect();
    let mut hits = [0u32; 10];
    for tick in 0..2000 {
        for peer in sample_failures(3, &connected, 0.3, 99, tick) {
            hits[peer as usize] += 1;
        }
    }
    // 600 expected per peer
    assert!(hits.iter().all(|h| (450..750).contains(h)), "{hits:?}");
}

/// Independent reference: boundary sampled densely, sign by winding number.
fn reference_distance(polygons: &[Polygon], p: Vector2<f64>) -> f64 {
    let mut best = f64::INFINITY;
    let mut winding = 0i32;
    for poly in polygons {
        let n = poly.vertices.len();
        for i in 0..n {
            let a = Vector2::from(poly.vertices[i]);
            let b = Vector2::from(poly.vertices[(i + 1) % n]);
            for s in 0..=4000 {
                let q = a + (b - a) * (s as f64 / 4000.0);
                best = best.min((p - q).norm());
            }
            let cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
            if a.y <= p.y && b.y > p.y && cross > 0.0 {
                winding += 1;
            } else if a.y > p.y && b.y <= p.y && cross < 0.0 {
                winding -= 1;
            }
        }
    }
    if winding != 0 {
        -best
    } else {
        best
    }
}

fn layout() -> Vec<Polygon> {
    vec![
        Polygon::rect([-12.0, -4.0], [-4.0, 6.0]),
        Polygon::regular([8.0, 3.0], 5.0, 6, 0.3),
        Polygon::new(vec![[0.0, -15.0], [10.0, -12.0], [2.0, -6.0]]),
    ]
}

#[test]
fn grid_values_match_the_reference_at_cell_centres() {
    let polys = layout();
    let grid = SdfGrid::build(
        &polys,
        Bounds {
            min: [-20.0, -20.0],
            max: [20.0, 20.0],
        },
        1.0,
    );
    for j in 0..grid.height() {
        for i in 0..grid.width() {
            let c = grid.cell_center(i, j);
            let want = reference_distance(&polys, c);
            let got = grid.value(i, j);
            assert!((got - want).abs() < 5e-3, "cell ({i},{j}) at {c}: {got} vs {want}");
        }
    }
}

#[test]
fn interpolated_samples_are_within_a_cell_of_the_reference() {
    let polys = layout();
    let cell = 0.5;
    let grid = SdfGrid::build(
        &polys,
        Bounds {
            min: [-20.0, -20.0],
            max: [20.0, 20.0],
        },
        cell,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..500 {
        let p = Vector2::new(rng.gen_range(-19.0..19.0), rng.gen_range(-19.0..19.0));
        let s = grid.sample(p);
        assert!(!s.clamped);
        let want = reference_distance(&polys, p);
        assert!((s.distance - want).abs() <= cell, "{p}: {} vs {want}", s.distance);
        assert!(s.gradient.norm() <= 1.0 + 1e-12);
    }
}

#[test]
fn queries_outside_the_grid_are_flagged() {
    let grid = SdfGrid::build(
        &layout(),
        Bounds {
            min: [-20.0, -20.0],
            max: [20.0, 20.0],
        },
        1.0,
    );
    assert!(grid.sample(Vector2::new(50.0, 0.0)).clamped);
    assert!(!grid.sample(Vector2::new(19.9, 0.0)).clamped);
}
