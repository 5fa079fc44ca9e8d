//! Polygonal obstacles rasterized into a signed distance field.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// Distance reported everywhere when there are no obstacles.
pub const EMPTY_FIELD_DISTANCE: f64 = 1e6;

/// Simple polygon, vertices in meters, either winding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    pub fn new(vertices: Vec<[f64; 2]>) -> Self {
        Self { vertices }
    }

    /// Regular polygon with `n` vertices on a circle of `radius` around `center`.
    pub fn regular(center: [f64; 2], radius: f64, n: usize, phase: f64) -> Self {
        let vertices = (0..n)
            .map(|i| {
                let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            })
            .collect();
        Self { vertices }
    }

    pub fn rect(min: [f64; 2], max: [f64; 2]) -> Self {
        Self::new(vec![min, [max[0], min[1]], max, [min[0], max[1]]])
    }

    fn edges(&self) -> impl Iterator<Item = (Vector2<f64>, Vector2<f64>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (Vector2::new(a[0], a[1]), Vector2::new(b[0], b[1]))
        })
    }

    /// Even-odd point containment.
    pub fn contains(&self, p: Vector2<f64>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Unsigned distance from `p` to the polygon boundary.
    pub fn boundary_distance(&self, p: Vector2<f64>) -> f64 {
        self.edges()
            .map(|(a, b)| segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Exact signed distance from `p` to a set of non-overlapping polygons,
/// negative inside.
pub fn signed_distance(polygons: &[Polygon], p: Vector2<f64>) -> f64 {
    if polygons.is_empty() {
        return EMPTY_FIELD_DISTANCE;
    }
    let mut outside = f64::INFINITY;
    let mut inside: Option<f64> = None;
    for poly in polygons {
        let d = poly.boundary_distance(p);
        if poly.contains(p) {
            inside = Some(inside.map_or(d, |v: f64| v.max(d)));
        } else {
            outside = outside.min(d);
        }
    }
    match inside {
        Some(d) => -d,
        None => outside,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub distance: f64,
    pub gradient: Vector2<f64>,
    /// The query fell outside the grid and was clamped to its border.
    pub clamped: bool,
}

/// Signed distances and their gradients sampled at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    origin: Vector2<f64>,
    cell: f64,
    width: usize,
    height: usize,
    values: Vec<f64>,
    gradients: Vec<Vector2<f64>>,
}

impl SdfGrid {
    /// Rasterizes `polygons` over `bounds`. Cell `(i, j)` has its center at
    /// `origin + (i + ½, j + ½) · cell`.
    pub fn build(polygons: &[Polygon], bounds: Bounds, cell: f64) -> Self {
        assert!(cell > 0.0, "cell size must be positive");
        let origin = Vector2::new(bounds.min[0], bounds.min[1]);
        let width = (((bounds.max[0] - bounds.min[0]) / cell).ceil() as usize).max(1);
        let height = (((bounds.max[1] - bounds.min[1]) / cell).ceil() as usize).max(1);
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let p = origin + Vector2::new((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell);
                values.push(signed_distance(polygons, p));
            }
        }
        let at = |i: usize, j: usize| values[j * width + i];
        let mut gradients = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let (il, ih) = (i.saturating_sub(1), (i + 1).min(width - 1));
                let (jl, jh) = (j.saturating_sub(1), (j + 1).min(height - 1));
                let gx = if ih > il {
                    (at(ih, j) - at(il, j)) / ((ih - il) as f64 * cell)
                } else {
                    0.0
                };
                let gy = if jh > jl {
                    (at(i, jh) - at(i, jl)) / ((jh - jl) as f64 * cell)
                } else {
                    0.0
                };
                gradients.push(Vector2::new(gx, gy));
            }
        }
        Self {
            origin,
            cell,
            width,
            height,
            values,
            gradients,
        }
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Vector2<f64> {
        self.origin
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    pub fn gradient_at(&self, i: usize, j: usize) -> Vector2<f64> {
        self.gradients[j * self.width + i]
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Vector2<f64> {
        self.origin + Vector2::new((i as f64 + 0.5) * self.cell, (j as f64 + 0.5) * self.cell)
    }

    /// Bilinear interpolation of distance and gradient at `p`. Queries
    /// outside the cell-center lattice clamp to the border.
    pub fn sample(&self, p: Vector2<f64>) -> SdfSample {
        let u = (p.x - self.origin.x) / self.cell - 0.5;
        let v = (p.y - self.origin.y) / self.cell - 0.5;
        let max_u = (self.width - 1) as f64;
        let max_v = (self.height - 1) as f64;
        let clamped = !(u >= -0.5 && v >= -0.5 && u <= max_u + 0.5 && v <= max_v + 0.5);
        let u = u.clamp(0.0, max_u);
        let v = v.clamp(0.0, max_v);
        let i0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let j0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let i1 = (i0 + 1).min(self.width - 1);
        let j1 = (j0 + 1).min(self.height - 1);
        let fx = (u - i0 as f64).clamp(0.0, 1.0);
        let fy = (v - j0 as f64).clamp(0.0, 1.0);
        let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let idx = [(i0, j0), (i1, j0), (i0, j1), (i1, j1)];
        let mut distance = 0.0;
        let mut gradient = Vector2::zeros();
        for (wk, (i, j)) in w.iter().zip(idx) {
            distance += wk * self.value(i, j);
            gradient += self.gradient_at(i, j) * *wk;
        }
        let norm = gradient.norm();
        if norm > 1.0 {
            gradient /= norm;
        }
        SdfSample {
            distance,
            gradient,
            clamped,
        }
    }
}
