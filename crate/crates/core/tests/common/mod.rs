//! Shared oracles for the integration tests: random linear Gaussian factor
//! graphs with a dense normal-equations solution, and finite differences.
#![allow(dead_code)]

use std::sync::Arc;

use gbplan_core::gbp::{LinearModel, MeasurementModel};
use gbplan_core::{FactorKind, GbpGraph, VarSlot, VariableId};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random symmetric matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = raw.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.gen_range(lo..hi)));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// A linear Gaussian graph together with the same problem in dense form.
pub struct LinearProblem {
    pub graph: GbpGraph,
    pub vars: Vec<VariableId>,
    pub dims: Vec<usize>,
    pub offsets: Vec<usize>,
    pub lam: DMatrix<f64>,
    pub eta: DVector<f64>,
}

impl LinearProblem {
    /// Dense MAP mean and covariance.
    pub fn solve(&self) -> (DVector<f64>, DMatrix<f64>) {
        let chol = self
            .lam
            .clone()
            .cholesky()
            .expect("joint precision is positive definite");
        (chol.solve(&self.eta), chol.inverse())
    }

    pub fn block(&self, v: usize) -> (usize, usize) {
        (self.offsets[v], self.dims[v])
    }
}

/// Builds a random problem: every variable gets a unary factor, and `edges`
/// lists the pairwise factors. `coupling` scales the pairwise precisions.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    dims: &[usize],
    edges: &[(usize, usize)],
    coupling: f64,
    damping: f64,
) -> LinearProblem {
    let mut offsets = Vec::with_capacity(dims.len());
    let mut total = 0;
    for d in dims {
        offsets.push(total);
        total += d;
    }
    let mut graph = GbpGraph::new(damping);
    let vars: Vec<VariableId> = dims
        .iter()
        .map(|&d| graph.add_variable(DVector::zeros(d), None).unwrap())
        .collect();
    let mut lam = DMatrix::zeros(total, total);
    let mut eta = DVector::zeros(total);
    let mut add = |graph: &mut GbpGraph, members: &[usize], jac: DMatrix<f64>, z: DVector<f64>, prec: DMatrix<f64>| {
        let slots = members.iter().map(|&v| VarSlot::Local(vars[v])).collect();
        let model: Arc<dyn MeasurementModel> = Arc::new(LinearModel::new(jac.clone()));
        graph
            .add_factor(FactorKind::Linear, slots, model, z.clone(), prec.clone(), &[])
            .unwrap();
        // scatter Jᵀ Λ J and Jᵀ Λ z into the dense system
        let jt_lam = jac.transpose() * &prec;
        let local_lam = &jt_lam * &jac;
        let local_eta = &jt_lam * &z;
        let mut col = 0;
        let ranges: Vec<(usize, usize, usize)> = members
            .iter()
            .map(|&v| {
                let r = (offsets[v], dims[v], col);
                col += dims[v];
                r
            })
            .collect();
        for &(oa, da, la) in &ranges {
            for i in 0..da {
                eta[oa + i] += local_eta[la + i];
            }
            for &(ob, db, lb) in &ranges {
                for i in 0..da {
                    for j in 0..db {
                        lam[(oa + i, ob + j)] += local_lam[(la + i, lb + j)];
                    }
                }
            }
        }
    };
    for (v, &d) in dims.iter().enumerate() {
        let prec = random_spd(rng, d, 1.0, 3.0);
        let z = random_vector(rng, d, 5.0);
        add(&mut graph, &[v], DMatrix::identity(d, d), z, prec);
    }
    for &(a, b) in edges {
        let m = rng.gen_range(1..=dims[a].min(dims[b]));
        let jac = DMatrix::from_fn(m, dims[a] + dims[b], |_, _| rng.gen_range(-1.0..1.0));
        let prec = random_spd(rng, m, 0.2, 1.0) * coupling;
        let z = random_vector(rng, m, 2.0);
        add(&mut graph, &[a, b], jac, z, prec);
    }
    LinearProblem {
        graph,
        vars,
        dims: dims.to_vec(),
        offsets,
        lam,
        eta,
    }
}

/// Random spanning tree over `n` nodes, returned as edges and its diameter
/// in edges.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> (Vec<(usize, usize)>, usize) {
    let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.gen_range(0..v), v)).collect();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in &edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let farthest = |start: usize| {
        let mut dist = vec![usize::MAX; n];
        dist[start] = 0;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        let (node, d) = dist.iter().enumerate().max_by_key(|(_, d)| **d).unwrap();
        (node, *d)
    };
    let (end, _) = farthest(0);
    let (_, diameter) = farthest(end);
    (edges, diameter)
}

/// Runs sweeps until no belief mean moves more than `tol`, up to `max`.
/// Returns the number of sweeps run.
pub fn iterate_to_convergence(graph: &mut GbpGraph, vars: &[VariableId], tol: f64, max: usize) -> usize {
    let means = |g: &GbpGraph| -> Vec<DVector<f64>> {
        vars.iter()
            .map(|v| {
                g.variable(*v)
                    .unwrap()
                    .belief()
                    .mean()
                    .unwrap_or_else(|_| DVector::zeros(0))
            })
            .collect()
    };
    let mut prev = means(graph);
    for sweep in 1..=max {
        graph.iterate(1, |_| true);
        let now = means(graph);
        let change = prev
            .iter()
            .zip(&now)
            .map(|(a, b)| {
                if a.len() == b.len() {
                    (a - b).amax()
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max);
        prev = now;
        if change < tol {
            return sweep;
        }
    }
    max
}

/// Central-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for j in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += step;
        lo[j] -= step;
        let col = (f(&hi) - f(&lo)) / (2.0 * step);
        jac.set_column(j, &col);
    }
    jac
}

/// `‖a − b‖_max / max(1, ‖b‖_max)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}
