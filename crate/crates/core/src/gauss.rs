//! Gaussians in canonical (information) form.
//!
//! A [`CanonicalGaussian`] stores the information vector `eta = Λμ` and the
//! precision matrix `Λ`. Products of densities become sums of parameters,
//! which is what makes message passing cheap. The all-zero element is the
//! "no information" message and is a legal value everywhere.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaussError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("gaussian dimension must be at least 1")]
    EmptyDimension,
    #[error("invalid index set {keep:?} for a {dim}-dimensional gaussian")]
    InvalidIndexSet { keep: Vec<usize>, dim: usize },
    #[error(
        "singular precision block of size {dim} (eigenvalue range {min_eigenvalue:e}..{max_eigenvalue:e}, condition {condition:e})"
    )]
    Singular {
        dim: usize,
        min_eigenvalue: f64,
        max_eigenvalue: f64,
        condition: f64,
    },
    #[error("non-finite entries in gaussian parameters")]
    NonFinite,
}

/// Relative jitter added to the diagonal of a singular block before retrying.
pub const SINGULAR_JITTER: f64 = 1e-9;

/// `lam` is kept exactly symmetric: constructors symmetrize, and sums,
/// differences and convex combinations of symmetric matrices stay symmetric
/// element for element, so the arithmetic paths skip the fix-up.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalGaussian {
    eta: DVector<f64>,
    lam: DMatrix<f64>,
}

impl CanonicalGaussian {
    pub fn new(eta: DVector<f64>, lam: DMatrix<f64>) -> Result<Self, GaussError> {
        let dim = eta.len();
        if dim == 0 {
            return Err(GaussError::EmptyDimension);
        }
        if lam.nrows() != dim || lam.ncols() != dim {
            return Err(GaussError::DimensionMismatch {
                left: dim,
                right: lam.nrows().max(lam.ncols()),
            });
        }
        if eta.iter().chain(lam.iter()).any(|v| !v.is_finite()) {
            return Err(GaussError::NonFinite);
        }
        let mut g = Self { eta, lam };
        g.symmetrize();
        Ok(g)
    }

    /// The identity element of [`product`](Self::product).
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "gaussian dimension must be at least 1");
        Self {
            eta: DVector::zeros(dim),
            lam: DMatrix::zeros(dim, dim),
        }
    }

    /// Builds the canonical form of N(mean, lam⁻¹), i.e. `eta = lam * mean`.
    pub fn from_mean_precision(mean: &DVector<f64>, lam: DMatrix<f64>) -> Result<Self, GaussError> {
        let eta = &lam * mean;
        Self::new(eta, lam)
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn lam(&self) -> &DMatrix<f64> {
        &self.lam
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.eta, self.lam)
    }

    pub fn is_zero_information(&self) -> bool {
        self.eta.iter().all(|v| *v == 0.0) && self.lam.iter().all(|v| *v == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(self.lam.iter()).all(|v| v.is_finite())
    }

    pub fn product(&self, other: &Self) -> Result<Self, GaussError> {
        let mut out = self.clone();
        out.product_assign(other)?;
        Ok(out)
    }

    /// In-place product: adds `other`'s information to `self`.
    pub fn product_assign(&mut self, other: &Self) -> Result<(), GaussError> {
        self.check_dim(other)?;
        self.eta += &other.eta;
        self.lam += &other.lam;
        Ok(())
    }

    /// Removes `other`'s information from `self` (the inverse of a product).
    pub fn divide(&self, other: &Self) -> Result<Self, GaussError> {
        self.check_dim(other)?;
        Ok(Self {
            eta: &self.eta - &other.eta,
            lam: &self.lam - &other.lam,
        })
    }

    /// Overwrites `self` with `a / b` without reallocating when the
    /// dimensions already match.
    pub fn assign_quotient(&mut self, a: &Self, b: &Self) -> Result<(), GaussError> {
        a.check_dim(b)?;
        if self.dim() != a.dim() {
            *self = a.divide(b)?;
            return Ok(());
        }
        self.eta.copy_from(&a.eta);
        self.eta -= &b.eta;
        self.lam.copy_from(&a.lam);
        self.lam -= &b.lam;
        Ok(())
    }

    /// Overwrites `self` with `other`, reusing storage when dimensions match.
    pub fn assign(&mut self, other: &Self) {
        if self.dim() == other.dim() {
            self.eta.copy_from(&other.eta);
            self.lam.copy_from(&other.lam);
        } else {
            *self = other.clone();
        }
    }

    /// Resets to the zero-information element of the same dimension.
    pub fn clear(&mut self) {
        self.eta.fill(0.0);
        self.lam.fill(0.0);
    }

    /// In-place form of [`damped`](Self::damped).
    pub fn damp_assign(&mut self, previous: &Self, beta: f64) -> Result<(), GaussError> {
        self.check_dim(previous)?;
        if beta == 0.0 {
            return Ok(());
        }
        for (a, b) in self.eta.iter_mut().zip(previous.eta.iter()) {
            *a = (1.0 - beta) * *a + beta * b;
        }
        for (a, b) in self.lam.iter_mut().zip(previous.lam.iter()) {
            *a = (1.0 - beta) * *a + beta * b;
        }
        Ok(())
    }

    /// Convex combination `(1 - beta) * self + beta * previous` of the
    /// parameters, used for message damping.
    pub fn damped(&self, previous: &Self, beta: f64) -> Result<Self, GaussError> {
        self.check_dim(previous)?;
        if beta == 0.0 {
            return Ok(self.clone());
        }
        Ok(Self {
            eta: &self.eta * (1.0 - beta) + &previous.eta * beta,
            lam: &self.lam * (1.0 - beta) + &previous.lam * beta,
        })
    }

    /// Adds `block` onto the sub-block starting at `offset`.
    pub fn add_block(&mut self, offset: usize, block: &Self) -> Result<(), GaussError> {
        let d = block.dim();
        if offset + d > self.dim() {
            return Err(GaussError::DimensionMismatch {
                left: self.dim(),
                right: offset + d,
            });
        }
        for i in 0..d {
            self.eta[offset + i] += block.eta[i];
            for j in 0..d {
                self.lam[(offset + i, offset + j)] += block.lam[(i, j)];
            }
        }
        Ok(())
    }

    /// Marginal over the dimensions in `keep` (Schur complement in information form).
    ///
    /// `keep` must be strictly increasing. A singular eliminated block is
    /// retried once with diagonal jitter `SINGULAR_JITTER * trace / dim`.
    pub fn marginalize(&self, keep: &[usize]) -> Result<Self, GaussError> {
        let dim = self.dim();
        let valid = !keep.is_empty() && keep.windows(2).all(|w| w[0] < w[1]) && keep.last().is_some_and(|&k| k < dim);
        if !valid {
            return Err(GaussError::InvalidIndexSet {
                keep: keep.to_vec(),
                dim,
            });
        }
        if keep.len() == dim {
            return Ok(self.clone());
        }
        if dim <= SMALL {
            if let Some(out) = self.marginalize_small(keep) {
                return out;
            }
        }
        let drop: Vec<usize> = (0..dim).filter(|i| keep.binary_search(i).is_err()).collect();
        let (na, nb) = (keep.len(), drop.len());

        let eta_a = DVector::from_fn(na, |i, _| self.eta[keep[i]]);
        let eta_b = DVector::from_fn(nb, |i, _| self.eta[drop[i]]);
        let lam_aa = DMatrix::from_fn(na, na, |i, j| self.lam[(keep[i], keep[j])]);
        let lam_ab = DMatrix::from_fn(na, nb, |i, j| self.lam[(keep[i], drop[j])]);
        let lam_bb = DMatrix::from_fn(nb, nb, |i, j| self.lam[(drop[i], drop[j])]);

        // A flat eliminated block that is decoupled from the kept one
        // integrates out without touching the kept parameters.
        if lam_ab.iter().all(|v| *v == 0.0) && lam_bb.iter().all(|v| *v == 0.0) {
            return Self::new(eta_a, lam_aa);
        }

        let chol = factor_with_jitter(&lam_bb)?;
        // Λ_bb⁻¹ Λ_ba and Λ_bb⁻¹ η_b
        let solved_ba = chol.solve(&lam_ab.transpose());
        let solved_b = chol.solve(&eta_b);
        let eta = eta_a - &lam_ab * solved_b;
        let lam = lam_aa - &lam_ab * solved_ba;
        if eta.iter().chain(lam.iter()).any(|v| !v.is_finite()) {
            return Err(GaussError::NonFinite);
        }
        let mut out = Self { eta, lam };
        out.symmetrize();
        Ok(out)
    }

    /// Stack-allocated Schur complement for small dimensions. Returns `None`
    /// when the eliminated block is singular even after jitter, leaving the
    /// general path to produce the diagnostic.
    fn marginalize_small(&self, keep: &[usize]) -> Option<Result<Self, GaussError>> {
        let n = self.dim();
        let mut eta = [0.0; SMALL];
        let mut lam = [0.0; SMALL * SMALL];
        eta[..n].copy_from_slice(self.eta.as_slice());
        // Column-major storage of a symmetric matrix reads the same row-major.
        lam[..n * n].copy_from_slice(self.lam.as_slice());
        let mut mask = [false; SMALL];
        for &k in keep {
            mask[k] = true;
        }
        schur_small(&eta, &lam, n, &mask)
    }

    /// Marginal onto `offset..offset + dim` of the small joint whose
    /// parameters are given row-major in `eta` and `lam` (size `n ≤ 8`).
    /// Used by message computations that assemble the joint on the stack.
    pub fn marginal_of_small_joint(
        eta: &[f64; SMALL],
        lam: &[f64; SMALL * SMALL],
        n: usize,
        offset: usize,
        dim: usize,
    ) -> Result<Self, GaussError> {
        assert!(n <= SMALL && offset + dim <= n, "small joint bounds");
        let mut mask = [false; SMALL];
        for m in mask.iter_mut().skip(offset).take(dim) {
            *m = true;
        }
        if let Some(out) = schur_small(eta, lam, n, &mask) {
            return out;
        }
        let full = Self {
            eta: DVector::from_column_slice(&eta[..n]),
            lam: DMatrix::from_row_slice(n, n, &lam[..n * n]),
        };
        let keep: Vec<usize> = (offset..offset + dim).collect();
        full.marginalize(&keep)
    }

    /// Recovers the mean by solving `Λμ = η`.
    pub fn mean(&self) -> Result<DVector<f64>, GaussError> {
        let n = self.dim();
        if n <= SMALL {
            let mut l = [0.0; SMALL * SMALL];
            l[..n * n].copy_from_slice(self.lam.as_slice());
            if small_cholesky(&mut l, n) {
                let mut mu = [0.0; SMALL];
                mu[..n].copy_from_slice(self.eta.as_slice());
                small_solve(&l, n, &mut mu);
                if mu[..n].iter().all(|v| v.is_finite()) {
                    return Ok(DVector::from_column_slice(&mu[..n]));
                }
                return Err(GaussError::NonFinite);
            }
            return Err(singular_diagnostics(&self.lam));
        }
        match Cholesky::new(self.lam.clone()) {
            Some(chol) => {
                let mu = chol.solve(&self.eta);
                if mu.iter().all(|v| v.is_finite()) {
                    Ok(mu)
                } else {
                    Err(GaussError::NonFinite)
                }
            }
            None => Err(singular_diagnostics(&self.lam)),
        }
    }

    /// Whether `lam` is positive semi-definite up to a relative tolerance.
    ///
    /// Detected by factorizing `lam + δI` with δ tied to the largest diagonal
    /// entry, so a zero-information or rank-deficient precision passes while
    /// a clearly negative direction fails.
    pub fn is_psd(&self) -> bool {
        let scale = self.lam.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return self.lam.iter().all(|v| *v == 0.0);
        }
        let n = self.dim();
        if n <= SMALL {
            let mut l = [0.0; SMALL * SMALL];
            l[..n * n].copy_from_slice(self.lam.as_slice());
            for i in 0..n {
                l[i * n + i] += 1e-9 * scale;
            }
            return small_cholesky(&mut l, n);
        }
        let mut shifted = self.lam.clone();
        for i in 0..n {
            shifted[(i, i)] += 1e-9 * scale;
        }
        Cholesky::new(shifted).is_some()
    }

    fn check_dim(&self, other: &Self) -> Result<(), GaussError> {
        if self.dim() != other.dim() {
            return Err(GaussError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    fn symmetrize(&mut self) {
        let n = self.dim();
        let data = self.lam.as_mut_slice();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (data[i * n + j] + data[j * n + i]);
                data[i * n + j] = avg;
                data[j * n + i] = avg;
            }
        }
    }
}

/// Largest dimension handled by the stack-allocated kernels.
pub const SMALL: usize = 8;

/// Schur complement keeping the dimensions flagged in `keep`. `None` means
/// the eliminated block stayed singular after the jitter retry.
fn schur_small(
    eta: &[f64; SMALL],
    lam: &[f64; SMALL * SMALL],
    n: usize,
    keep: &[bool; SMALL],
) -> Option<Result<CanonicalGaussian, GaussError>> {
    let mut ka = [0usize; SMALL];
    let mut kb = [0usize; SMALL];
    let (mut na, mut nb) = (0, 0);
    for (i, &kept) in keep.iter().enumerate().take(n) {
        if kept {
            ka[na] = i;
            na += 1;
        } else {
            kb[nb] = i;
            nb += 1;
        }
    }
    let (ka, kb) = (&ka[..na], &kb[..nb]);
    let at = |i: usize, j: usize| lam[i * n + j];

    let mut out_eta = DVector::from_fn(na, |i, _| eta[ka[i]]);
    let mut out_lam = DMatrix::from_fn(na, na, |i, j| at(ka[i], ka[j]));
    if nb == 0 {
        return Some(CanonicalGaussian::new(out_eta, out_lam));
    }
    let coupled = ka.iter().any(|&i| kb.iter().any(|&j| at(i, j) != 0.0));
    let flat = kb.iter().all(|&i| kb.iter().all(|&j| at(i, j) == 0.0));
    if !coupled && flat {
        return Some(CanonicalGaussian::new(out_eta, out_lam));
    }

    let mut bb = [0.0; SMALL * SMALL];
    for i in 0..nb {
        for j in 0..nb {
            bb[i * nb + j] = at(kb[i], kb[j]);
        }
    }
    let original = bb;
    if !small_cholesky(&mut bb, nb) {
        let trace: f64 = (0..nb).map(|i| original[i * nb + i]).sum();
        let jitter = SINGULAR_JITTER * trace / nb as f64;
        if !(jitter > 0.0 && jitter.is_finite()) {
            return None;
        }
        bb = original;
        for i in 0..nb {
            bb[i * nb + i] += jitter;
        }
        if !small_cholesky(&mut bb, nb) {
            return None;
        }
    }

    // eta_a -= Λ_ab Λ_bb⁻¹ η_b ; Λ_aa -= Λ_ab Λ_bb⁻¹ Λ_ba
    let mut col = [0.0; SMALL];
    for j in 0..nb {
        col[j] = eta[kb[j]];
    }
    small_solve(&bb, nb, &mut col);
    for i in 0..na {
        out_eta[i] -= (0..nb).map(|j| at(ka[i], kb[j]) * col[j]).sum::<f64>();
    }
    for k in 0..na {
        for j in 0..nb {
            col[j] = at(kb[j], ka[k]);
        }
        small_solve(&bb, nb, &mut col);
        for i in 0..na {
            out_lam[(i, k)] -= (0..nb).map(|j| at(ka[i], kb[j]) * col[j]).sum::<f64>();
        }
    }
    if out_eta.iter().chain(out_lam.iter()).any(|v| !v.is_finite()) {
        return Some(Err(GaussError::NonFinite));
    }
    Some(CanonicalGaussian::new(out_eta, out_lam))
}

/// In-place lower Cholesky factor of the row-major `n × n` matrix in `a`.
/// Returns false if the matrix is not numerically positive definite.
fn small_cholesky(a: &mut [f64; SMALL * SMALL], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if d.is_nan() || d <= 0.0 {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
    true
}

/// Solves `L Lᵀ x = b` in place given the factor from [`small_cholesky`].
fn small_solve(l: &[f64; SMALL * SMALL], n: usize, b: &mut [f64; SMALL]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

fn factor_with_jitter(block: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>, GaussError> {
    if let Some(chol) = Cholesky::new(block.clone()) {
        return Ok(chol);
    }
    let n = block.nrows();
    let jitter = SINGULAR_JITTER * block.trace() / n as f64;
    if jitter > 0.0 && jitter.is_finite() {
        let mut regularized = block.clone();
        for i in 0..n {
            regularized[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(regularized) {
            return Ok(chol);
        }
    }
    Err(singular_diagnostics(block))
}

fn singular_diagnostics(block: &DMatrix<f64>) -> GaussError {
    let dim = block.nrows();
    if block.iter().any(|v| !v.is_finite()) {
        return GaussError::NonFinite;
    }
    let eig = SymmetricEigen::new(block.clone()).eigenvalues;
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let smallest_abs = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let largest_abs = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    GaussError::Singular {
        dim,
        min_eigenvalue: min,
        max_eigenvalue: max,
        condition: if smallest_abs > 0.0 {
            largest_abs / smallest_abs
        } else {
            f64::INFINITY
        },
    }
}
