//! Synthetic instances with known ground-truth precision matrices, and
//! reference solvers used as independent test oracles.
//!
//! Random streams: every generator seeds a ChaCha20 generator from the
//! 64-bit seed and gives column `k` its own stream (`set_stream(k)`);
//! observation draws for GLM families use stream `m + k`. Rows are drawn in
//! order within each stream, so a column's values do not depend on `m`'s
//! other columns' draws.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::sigmoid;

/// Recorded in simulation manifests.
pub const GENERATOR_ID: &str = "chacha20/stream-per-column/rand_distr-0.4";

const MIN_EIGENVALUE: f64 = 0.1;
const POISSON_THETA_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PatternKind {
    Chain,
    /// Each off-diagonal pair is an edge with probability `sparsity`.
    Random {
        sparsity: f64,
    },
    /// Node 0 connected to every other node.
    Hub,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphPattern {
    pub kind: PatternKind,
    pub m: usize,
    pub edge_weight: f64,
    pub diagonal_boost: f64,
}

impl GraphPattern {
    pub fn new(kind: PatternKind, m: usize) -> Self {
        GraphPattern {
            kind,
            m,
            edge_weight: -0.4,
            diagonal_boost: 0.0,
        }
    }

    pub fn chain(m: usize) -> Self {
        GraphPattern::new(PatternKind::Chain, m)
    }

    pub fn hub(m: usize) -> Self {
        GraphPattern::new(PatternKind::Hub, m)
    }

    pub fn random(m: usize, sparsity: f64) -> Self {
        GraphPattern::new(PatternKind::Random { sparsity }, m)
    }

    pub fn edge_weight(mut self, w: f64) -> Self {
        self.edge_weight = w;
        self
    }

    pub fn diagonal_boost(mut self, b: f64) -> Self {
        self.diagonal_boost = b;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidParameter(format!(
                "need m >= 2, got {}",
                self.m
            )));
        }
        if !self.edge_weight.is_finite() || !self.diagonal_boost.is_finite() {
            return Err(Error::InvalidParameter("non-finite pattern weights".into()));
        }
        if let PatternKind::Random { sparsity } = self.kind {
            if !(0.0..=1.0).contains(&sparsity) {
                return Err(Error::InvalidParameter(format!(
                    "sparsity must lie in [0, 1], got {sparsity}"
                )));
            }
        }
        Ok(())
    }
}

/// Ground-truth precision matrix. The diagonal is `1 + diagonal_boost`, then
/// shifted up if needed so that the smallest eigenvalue is at least `0.1`.
pub fn make_precision(pattern: &GraphPattern, seed: u64) -> Result<DMatrix<f64>> {
    pattern.validate()?;
    let m = pattern.m;
    let mut w = DMatrix::identity(m, m) * (1.0 + pattern.diagonal_boost);
    let weight = pattern.edge_weight;
    match pattern.kind {
        PatternKind::Chain => {
            for i in 0..m - 1 {
                w[(i, i + 1)] = weight;
                w[(i + 1, i)] = weight;
            }
        }
        PatternKind::Hub => {
            for i in 1..m {
                w[(0, i)] = weight;
                w[(i, 0)] = weight;
            }
        }
        PatternKind::Random { sparsity } => {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for i in 0..m {
                for j in (i + 1)..m {
                    if rng.gen::<f64>() < sparsity {
                        w[(i, j)] = weight;
                        w[(j, i)] = weight;
                    }
                }
            }
        }
    }
    let min_eig = SymmetricEigen::new(w.clone()).eigenvalues.min();
    if min_eig < MIN_EIGENVALUE {
        let shift = MIN_EIGENVALUE - min_eig;
        for i in 0..m {
            w[(i, i)] += shift;
        }
    }
    Ok(w)
}

/// `n` iid rows from `N(mu, W^{-1})`.
pub fn sample_gaussian(n: usize, w: &DMatrix<f64>, mu: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    let factor = covariance_factor(w, mu)?;
    let m = w.nrows();
    let mut z = DMatrix::<f64>::zeros(n, m);
    for k in 0..m {
        let mut rng = column_rng(seed, k as u64);
        for i in 0..n {
            z[(i, k)] = rng.sample(StandardNormal);
        }
    }
    // Rows y = mu + L z with Sigma = L L^T.
    let mut y = z * factor.transpose();
    for k in 0..m {
        for i in 0..n {
            y[(i, k)] += mu[k];
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlmFamily {
    Bernoulli,
    Poisson,
}

#[derive(Debug, Clone)]
pub struct GlmSample {
    pub y: DMatrix<f64>,
    pub latent: DMatrix<f64>,
    /// Number of Poisson log-means clipped at 30.
    pub clipped: usize,
}

/// Latent `theta ~ N(mu, W^{-1})` per row, then `y | theta` from the family
/// with its canonical link.
pub fn sample_glm(
    n: usize,
    w: &DMatrix<f64>,
    family: GlmFamily,
    mu: &[f64],
    seed: u64,
) -> Result<GlmSample> {
    let latent = sample_gaussian(n, w, mu, seed)?;
    let m = w.nrows();
    let mut y = DMatrix::zeros(n, m);
    let mut clipped = 0;
    for k in 0..m {
        let mut rng = column_rng(seed, (m + k) as u64);
        for i in 0..n {
            let theta = latent[(i, k)];
            y[(i, k)] = match family {
                GlmFamily::Bernoulli => (rng.gen::<f64>() < sigmoid(theta)) as u8 as f64,
                GlmFamily::Poisson => {
                    let t = if theta > POISSON_THETA_CAP {
                        clipped += 1;
                        POISSON_THETA_CAP
                    } else {
                        theta
                    };
                    let rate = t.exp();
                    if rate > 0.0 {
                        Poisson::new(rate).expect("positive rate").sample(&mut rng)
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    if clipped > 0 {
        log::warn!("clipped {clipped} poisson log-means at {POISSON_THETA_CAP}");
    }
    Ok(GlmSample { y, latent, clipped })
}

fn column_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn covariance_factor(w: &DMatrix<f64>, mu: &[f64]) -> Result<DMatrix<f64>> {
    if !w.is_square() || w.nrows() != mu.len() {
        return Err(Error::Dimension(format!(
            "W is {:?}, mu has length {}",
            w.shape(),
            mu.len()
        )));
    }
    let sigma = crate::linalg::inverse_pd(w)?;
    let chol = nalgebra::Cholesky::new(sigma).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.l())
}

/// Closed-form solution of the 2x2 problem: soft-threshold the off-diagonal
/// covariance by `lambda` (and add `lambda` to the diagonal when penalized),
/// then invert.
pub fn oracle_ggl_2x2(
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<DMatrix<f64>> {
    if s.shape() != (2, 2) {
        return Err(Error::Dimension(format!("2x2 oracle got {:?}", s.shape())));
    }
    let d = if penalize_diagonal { lambda } else { 0.0 };
    let s12 = s[(0, 1)];
    let off = s12.signum() * (s12.abs() - lambda).max(0.0);
    let a = s[(0, 0)] + d;
    let c = s[(1, 1)] + d;
    let det = a * c - off * off;
    if !(det > 0.0) || !(a > 0.0) {
        return Err(Error::Domain("thresholded covariance is singular".into()));
    }
    Ok(DMatrix::from_row_slice(
        2,
        2,
        &[c / det, -off / det, -off / det, a / det],
    ))
}

/// Settings for [`oracle_ggl_dense_with`].
#[derive(Debug, Clone, Copy)]
pub struct DenseOracleOptions {
    pub step: f64,
    pub max_iter: usize,
    /// Stop early once the KKT residual drops below this.
    pub target: f64,
    /// Failure threshold on exit.
    pub accept: f64,
}

impl Default for DenseOracleOptions {
    fn default() -> Self {
        DenseOracleOptions {
            step: 1e-4,
            max_iter: 1_000_000,
            target: 1e-10,
            accept: 1e-5,
        }
    }
}

/// Reference solver for small instances (`m <= 6`): proximal gradient
/// iterations `W <- soft(W - t (S - W^{-1}), t lambda)` with eigenvalue
/// flooring at `1e-6` whenever an iterate leaves the PD cone.
pub fn oracle_ggl_dense(
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<DMatrix<f64>> {
    oracle_ggl_dense_with(s, lambda, penalize_diagonal, DenseOracleOptions::default())
}

pub fn oracle_ggl_dense_with(
    s: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
    opts: DenseOracleOptions,
) -> Result<DMatrix<f64>> {
    let m = s.nrows();
    if !s.is_square() || m > 6 {
        return Err(Error::Dimension(format!(
            "dense oracle supports m <= 6, got {:?}",
            s.shape()
        )));
    }
    let d = if penalize_diagonal { lambda } else { 0.0 };
    let mut w = DMatrix::from_fn(
        m,
        m,
        |i, j| if i == j { 1.0 / (s[(i, i)] + d) } else { 0.0 },
    );
    let t = opts.step;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iter {
        let inv = w
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Oracle("singular iterate".into()))?;
        if it % 100 == 0 {
            residual = oracle_kkt(s, &w, &inv, lambda, penalize_diagonal);
            if residual <= opts.target {
                return Ok(w);
            }
        }
        let mut next = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let g = s[(i, j)] - 0.5 * (inv[(i, j)] + inv[(j, i)]);
                let v = w[(i, j)] - t * g;
                next[(i, j)] = if i != j || penalize_diagonal {
                    v.signum() * (v.abs() - t * lambda).max(0.0)
                } else {
                    v
                };
            }
        }
        if nalgebra::Cholesky::new(next.clone()).is_none() {
            let eig = SymmetricEigen::new(next);
            let floored = eig.eigenvalues.map(|v| v.max(1e-6));
            next =
                &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
        }
        w = next;
    }
    let inv = w
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Oracle("singular iterate".into()))?;
    residual = residual.min(oracle_kkt(s, &w, &inv, lambda, penalize_diagonal));
    if residual <= opts.accept {
        Ok(w)
    } else {
        Err(Error::Oracle(format!(
            "KKT residual {residual:e} above {:e}",
            opts.accept
        )))
    }
}

fn oracle_kkt(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    inv: &DMatrix<f64>,
    lambda: f64,
    pd: bool,
) -> f64 {
    let m = s.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            let g = s[(i, j)] - inv[(i, j)];
            let r = if i == j && !pd {
                g.abs()
            } else if w[(i, j)] == 0.0 {
                (g.abs() - lambda).max(0.0)
            } else {
                (g + lambda * w[(i, j)].signum()).abs()
            };
            worst = worst.max(r);
        }
    }
    worst
}

/// Strictly-upper-triangular entries with `|w_ij| > eps`.
pub fn support(w: &DMatrix<f64>, eps: f64) -> Vec<(usize, usize)> {
    let m = w.nrows();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            if w[(i, j)].abs() > eps {
                edges.push((i, j));
            }
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cross_product, inverse_pd, is_pd, max_abs_diff};

    #[test]
    fn chain_example() {
        let w = make_precision(&GraphPattern::chain(3), 0).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -0.4, 0.0, -0.4, 1.0, -0.4, 0.0, -0.4, 1.0]);
        assert_eq!(w, expected);
        let min = SymmetricEigen::new(w).eigenvalues.min();
        // 1 - 0.4 * sqrt(2)
        assert!((min - (1.0 - 0.4 * 2f64.sqrt())).abs() < 1e-12);
        assert!((min - 0.434).abs() < 1e-3);
    }

    #[test]
    fn edge_counts() {
        let w = make_precision(&GraphPattern::random(2, 0.0), 9).unwrap();
        assert!(support(&w, 1e-8).is_empty());
        let hub = make_precision(&GraphPattern::hub(4), 0).unwrap();
        assert_eq!(support(&hub, 1e-8).len(), 3);
        for m in [2, 5, 17, 40] {
            for pattern in [GraphPattern::chain(m), GraphPattern::hub(m)] {
                let w = make_precision(&pattern, 1).unwrap();
                assert!(is_pd(&w));
                assert_eq!(support(&w, 1e-8).len(), m - 1);
                assert!(SymmetricEigen::new(w).eigenvalues.min() >= MIN_EIGENVALUE - 1e-12);
            }
        }
        let dense = make_precision(&GraphPattern::random(30, 0.9).edge_weight(0.5), 4).unwrap();
        assert!(SymmetricEigen::new(dense).eigenvalues.min() >= MIN_EIGENVALUE - 1e-9);
    }

    #[test]
    fn generators_are_deterministic() {
        let p = GraphPattern::random(12, 0.3);
        assert_eq!(
            make_precision(&p, 5).unwrap(),
            make_precision(&p, 5).unwrap()
        );
        let w = make_precision(&GraphPattern::chain(4), 0).unwrap();
        let a = sample_gaussian(50, &w, &[0.0; 4], 17).unwrap();
        let b = sample_gaussian(50, &w, &[0.0; 4], 17).unwrap();
        assert_eq!(a, b);
        let c = sample_glm(50, &w, GlmFamily::Poisson, &[0.5; 4], 3).unwrap();
        let d = sample_glm(50, &w, GlmFamily::Poisson, &[0.5; 4], 3).unwrap();
        assert_eq!(c.y, d.y);
        assert_ne!(a, sample_gaussian(50, &w, &[0.0; 4], 18).unwrap());
    }

    #[test]
    fn gaussian_sample_covariance_concentrates() {
        let w = DMatrix::identity(2, 2);
        let y = sample_gaussian(100_000, &w, &[0.0, 0.0], 42).unwrap();
        let s = cross_product(&y);
        assert!(max_abs_diff(&s, &DMatrix::identity(2, 2)) < 0.02);
    }

    #[test]
    fn gaussian_sample_means_follow_mu() {
        let w = make_precision(&GraphPattern::chain(3), 0).unwrap();
        let sigma = inverse_pd(&w).unwrap();
        let n = 20_000;
        let mu = [1.0, -2.0, 0.5];
        let y = sample_gaussian(n, &w, &mu, 8).unwrap();
        for k in 0..3 {
            let mean = y.column(k).mean();
            let bound = 3.0 * sigma[(k, k)].sqrt() / (n as f64).sqrt();
            assert!((mean - mu[k]).abs() < bound, "column {k}: {mean}");
        }
    }

    #[test]
    fn glm_marginals() {
        let n = 40_000;
        let w = DMatrix::identity(3, 3);
        let b = sample_glm(n, &w, GlmFamily::Bernoulli, &[0.0; 3], 1).unwrap();
        for k in 0..3 {
            assert!((b.y.column(k).mean() - 0.5).abs() < 3.0 / (2.0 * (n as f64).sqrt()));
        }
        let tight = DMatrix::identity(3, 3) * 1e6;
        let p = sample_glm(n, &tight, GlmFamily::Poisson, &[2f64.ln(); 3], 2).unwrap();
        for k in 0..3 {
            // sd of Poisson(2) is sqrt 2
            assert!((p.y.column(k).mean() - 2.0).abs() < 4.0 * 2f64.sqrt() / (n as f64).sqrt());
        }
        assert!(p.y.iter().all(|v| *v >= 0.0 && v.fract() == 0.0));
    }

    #[test]
    fn poisson_overflow_is_clipped() {
        let w = DMatrix::identity(2, 2) * 1e6;
        let p = sample_glm(5, &w, GlmFamily::Poisson, &[40.0, 0.0], 0).unwrap();
        assert_eq!(p.clipped, 5);
    }

    #[test]
    fn oracle_2x2_examples() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let w = oracle_ggl_2x2(&s, 0.5, false).unwrap();
        assert!(max_abs_diff(&w, &DMatrix::identity(2, 2)) < 1e-15);
        let w0 = oracle_ggl_2x2(&s, 0.0, false).unwrap();
        assert!(max_abs_diff(&w0, &inverse_pd(&s).unwrap()) < 1e-14);
        let w2 = oracle_ggl_2x2(&s, 0.2, false).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0]) / 0.91;
        assert!(max_abs_diff(&w2, &expected) < 1e-14);
    }

    #[test]
    fn dense_oracle_agrees_with_closed_form() {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        for trial in 0..50 {
            let a: f64 = rng.gen_range(0.5..2.0);
            let c = rng.gen_range(0.5..2.0);
            let b = rng.gen_range(-0.9..0.9) * (a * c).sqrt();
            let s = DMatrix::from_row_slice(2, 2, &[a, b, b, c]);
            let lambda = rng.gen_range(0.0..0.6);
            let pd = trial % 2 == 1;
            let closed = oracle_ggl_2x2(&s, lambda, pd).unwrap();
            let opts = DenseOracleOptions {
                step: 2e-2,
                ..Default::default()
            };
            let dense = oracle_ggl_dense_with(&s, lambda, pd, opts).unwrap();
            assert!(max_abs_diff(&closed, &dense) < 1e-5, "trial {trial}");
        }
    }

    #[test]
    fn dense_oracle_limits() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.1, 0.3, 1.2, -0.2, 0.1, -0.2, 0.9]);
        let opts = DenseOracleOptions {
            step: 5e-2,
            ..Default::default()
        };
        let w = oracle_ggl_dense_with(&s, 0.0, false, opts).unwrap();
        assert!(max_abs_diff(&w, &inverse_pd(&s).unwrap()) < 1e-5);
        let w = oracle_ggl_dense_with(&s, 10.0, false, opts).unwrap();
        assert!(support(&w, 0.0).is_empty());
        assert!(oracle_ggl_dense(&DMatrix::identity(7, 7), 0.1, false).is_err());
    }
}
