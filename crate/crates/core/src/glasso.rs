//! Penalized Gaussian graph learning:
//!
//! `min_{W > 0} Tr(S W) - log det W + lambda * ||W||_1`
//!
//! where the l1 norm runs over off-diagonal entries (and the diagonal when
//! `penalize_diagonal` is set). Solved by block coordinate descent on the
//! rows/columns of `W` itself: every block update minimizes the objective
//! exactly over one row/column given the rest, via a coordinate-descent lasso
//! on the off-diagonal part and a closed form for the diagonal. Each block
//! update can only lower the objective, so a warm start is never worsened.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, NeumaierSum};

pub use crate::linalg::log_det_pd;

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 500;

const INNER_MAX_SWEEPS: usize = 2_000;
const INNER_TOL: f64 = 1e-13;

/// One instance of the penalized Gaussian graph learning problem.
#[derive(Debug, Clone)]
pub struct GglInstance {
    s: DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
    tol: f64,
    max_iter: usize,
}

impl GglInstance {
    pub fn new(s: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !s.is_square() || s.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "S must be square, got {:?}",
                s.shape()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("S has non-finite entries".into()));
        }
        let asym = linalg::max_asymmetry(&s);
        let scale = s.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
        if asym > 1e-12 * scale {
            return Err(Error::Domain(format!(
                "S is not symmetric (max asymmetry {asym:e})"
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let mut s = s;
        linalg::symmetrize(&mut s);
        Ok(GglInstance {
            s,
            lambda,
            penalize_diagonal: false,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        })
    }

    pub fn penalize_diagonal(mut self, yes: bool) -> Self {
        self.penalize_diagonal = yes;
        self
    }

    pub fn tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_diagonal_penalized(&self) -> bool {
        self.penalize_diagonal
    }

    fn diag_penalty(&self) -> f64 {
        if self.penalize_diagonal {
            self.lambda
        } else {
            0.0
        }
    }

    /// `diag(1 / (s_ii + lambda [penalize_diagonal]))`.
    pub fn default_start(&self) -> DMatrix<f64> {
        let d = self.diag_penalty();
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                1.0 / (self.s[(i, i)] + d)
            } else {
                0.0
            }
        })
    }

    pub fn objective(&self, w: &DMatrix<f64>) -> Result<f64> {
        ggl_objective(&self.s, w, self.lambda, self.penalize_diagonal)
    }
}

#[derive(Debug, Clone)]
pub struct PrecisionEstimate {
    pub w: DMatrix<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// Full sweeps over all columns.
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start and after every sweep.
    pub objective_trace: Vec<f64>,
}

/// `Tr(S W) - log det W + lambda ||W||_1`.
pub fn ggl_objective(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    check_same_shape(s, w)?;
    let log_det = log_det_pd(w)?;
    Ok(linalg::trace_of_product(s, w) - log_det + lambda * l1_norm(w, penalize_diagonal))
}

/// Sum of `|w_ij|` over all off-diagonal entries (both triangles), plus the
/// diagonal when requested.
pub fn l1_norm(w: &DMatrix<f64>, penalize_diagonal: bool) -> f64 {
    let mut acc = NeumaierSum::default();
    for j in 0..w.ncols() {
        for i in 0..w.nrows() {
            if i != j || penalize_diagonal {
                acc.add(w[(i, j)].abs());
            }
        }
    }
    acc.total()
}

/// Max-norm of the minimum-norm element of `S - W^{-1} + lambda * d||W||_1`.
pub fn kkt_residual(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> Result<f64> {
    check_same_shape(s, w)?;
    let sigma = linalg::inverse_pd(w)?;
    Ok(kkt_from_inverse(s, w, &sigma, lambda, penalize_diagonal))
}

fn kkt_from_inverse(
    s: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    lambda: f64,
    penalize_diagonal: bool,
) -> f64 {
    let m = s.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..m {
        for i in 0..m {
            let g = s[(i, j)] - sigma[(i, j)];
            let r = if i == j && !penalize_diagonal {
                g.abs()
            } else if w[(i, j)] != 0.0 {
                (g + lambda * w[(i, j)].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            worst = worst.max(r);
        }
    }
    worst
}

fn check_same_shape(s: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<()> {
    if s.shape() != w.shape() || !s.is_square() {
        return Err(Error::Dimension(format!(
            "S is {:?}, W is {:?}",
            s.shape(),
            w.shape()
        )));
    }
    Ok(())
}

/// Solves the instance to the KKT tolerance, starting from `w_init` or
/// [`GglInstance::default_start`].
///
/// Exceeding `max_iter` is not an error: the last iterate is returned with
/// `converged = false`.
pub fn solve_ggl(inst: &GglInstance, w_init: Option<&DMatrix<f64>>) -> Result<PrecisionEstimate> {
    let m = inst.dim();
    let lambda = inst.lambda;
    let d_pen = inst.diag_penalty();
    for i in 0..m {
        if !(inst.s[(i, i)] + d_pen > 0.0) {
            return Err(Error::Domain(format!(
                "S has nonpositive diagonal entry {} at {i}",
                inst.s[(i, i)]
            )));
        }
    }
    if lambda == 0.0 && !linalg::is_pd(&inst.s) {
        return Err(Error::Domain("lambda = 0 requires a nonsingular S".into()));
    }

    let mut w = match w_init {
        Some(w0) => {
            check_same_shape(&inst.s, w0)?;
            let mut w0 = w0.clone();
            linalg::symmetrize(&mut w0);
            w0
        }
        None => inst.default_start(),
    };
    let mut sigma = linalg::inverse_pd(&w)?;
    let mut objective = inst.objective(&w)?;
    let mut kkt = kkt_from_inverse(&inst.s, &w, &sigma, lambda, inst.penalize_diagonal);
    let mut trace = vec![objective];
    if kkt <= inst.tol {
        return Ok(PrecisionEstimate {
            w,
            objective,
            kkt_residual: kkt,
            iterations: 0,
            converged: true,
            objective_trace: trace,
        });
    }

    let mut ws = BlockWorkspace::new(m);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < inst.max_iter {
        iterations += 1;
        for j in 0..m {
            ws.update_block(inst, &mut w, &mut sigma, j);
        }
        // Refresh the inverse from scratch; rank-one updates drift.
        sigma = linalg::inverse_pd(&w).map_err(|_| {
            Error::Numerical(format!(
                "iterate lost positive definiteness at sweep {iterations}"
            ))
        })?;
        objective = inst.objective(&w)?;
        trace.push(objective);
        kkt = kkt_from_inverse(&inst.s, &w, &sigma, lambda, inst.penalize_diagonal);
        if kkt <= inst.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("graph learning stopped after {iterations} sweeps with KKT residual {kkt:e}");
    }
    Ok(PrecisionEstimate {
        w,
        objective,
        kkt_residual: kkt,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Scratch space for one row/column update.
struct BlockWorkspace {
    others: Vec<usize>,
    /// Inverse of `W` with row/column `j` removed, dense `(m-1)^2`.
    a: Vec<f64>,
    w: Vec<f64>,
    /// `A w`.
    aw: Vec<f64>,
}

impl BlockWorkspace {
    fn new(m: usize) -> Self {
        BlockWorkspace {
            others: Vec::with_capacity(m),
            a: vec![0.0; m * m],
            w: vec![0.0; m],
            aw: vec![0.0; m],
        }
    }

    /// Minimizes the objective over row/column `j` of `W` and keeps `sigma`
    /// equal to `W^{-1}`.
    ///
    /// With `W = [[W11, w], [w^T, w22]]`, `A = W11^{-1}` and
    /// `gamma = w22 - w^T A w`, the objective in `(w, gamma)` separates into
    /// `(s22 + d) gamma - log gamma` and
    /// `(s22 + d) w^T A w + 2 s12^T w + 2 lambda ||w||_1`.
    fn update_block(
        &mut self,
        inst: &GglInstance,
        w_mat: &mut DMatrix<f64>,
        sigma: &mut DMatrix<f64>,
        j: usize,
    ) {
        let m = inst.dim();
        let p = m - 1;
        let s = &inst.s;
        let lambda = inst.lambda;
        let s22 = s[(j, j)] + inst.diag_penalty();

        self.others.clear();
        self.others.extend((0..m).filter(|&k| k != j));
        let sig22 = sigma[(j, j)];
        // A = Sigma11 - sigma12 sigma12^T / sigma22.
        for (bi, &i) in self.others.iter().enumerate() {
            for (bk, &k) in self.others.iter().enumerate() {
                self.a[bi * p + bk] = sigma[(i, k)] - sigma[(i, j)] * sigma[(k, j)] / sig22;
            }
        }
        for (bi, &i) in self.others.iter().enumerate() {
            self.w[bi] = w_mat[(i, j)];
        }

        // Coordinate descent on 0.5 w^T Q w + b^T w + lambda ||w||_1 with
        // Q = s22 A, b = s12. Maintains aw = A w.
        for bi in 0..p {
            let row = &self.a[bi * p..(bi + 1) * p];
            self.aw[bi] = row.iter().zip(&self.w[..p]).map(|(x, y)| x * y).sum();
        }
        let scale = 1.0 + self.w[..p].iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let mut active_only = false;
        for _ in 0..INNER_MAX_SWEEPS {
            let mut max_change: f64 = 0.0;
            for bi in 0..p {
                let old = self.w[bi];
                if active_only && old == 0.0 {
                    continue;
                }
                let q_ii = s22 * self.a[bi * p + bi];
                let z = s[(self.others[bi], j)] + s22 * self.aw[bi] - q_ii * old;
                let new = -soft_threshold(z, lambda) / q_ii;
                if new != old {
                    let delta = new - old;
                    self.w[bi] = new;
                    let col = &self.a[bi * p..(bi + 1) * p];
                    for (awk, ak) in self.aw[..p].iter_mut().zip(col) {
                        *awk += ak * delta;
                    }
                    max_change = max_change.max(delta.abs() * q_ii.sqrt());
                }
            }
            if max_change <= INNER_TOL * scale {
                if active_only {
                    active_only = false;
                    continue;
                }
                break;
            }
            active_only = true;
        }

        // Recompute A w exactly before using it in the diagonal update.
        for bi in 0..p {
            let row = &self.a[bi * p..(bi + 1) * p];
            self.aw[bi] = row.iter().zip(&self.w[..p]).map(|(x, y)| x * y).sum();
        }
        let gamma = 1.0 / s22;
        let quad: f64 = self.w[..p]
            .iter()
            .zip(&self.aw[..p])
            .map(|(x, y)| x * y)
            .sum();

        for (bi, &i) in self.others.iter().enumerate() {
            w_mat[(i, j)] = self.w[bi];
            w_mat[(j, i)] = self.w[bi];
        }
        w_mat[(j, j)] = gamma + quad;

        // Block inverse: sigma22 = 1/gamma, sigma12 = -A w / gamma,
        // Sigma11 = A + (A w)(A w)^T / gamma.
        let inv_gamma = 1.0 / gamma;
        for (bi, &i) in self.others.iter().enumerate() {
            for (bk, &k) in self.others.iter().enumerate() {
                sigma[(i, k)] = self.a[bi * p + bk] + self.aw[bi] * self.aw[bk] * inv_gamma;
            }
            let v = -self.aw[bi] * inv_gamma;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
        sigma[(j, j)] = inv_gamma;
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::oracle_ggl_2x2;
    use rand::{Rng, SeedableRng};

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn random_s(rng: &mut impl Rng, m: usize) -> DMatrix<f64> {
        let n = 3 * m + 10;
        let x = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.7..1.7));
        linalg::cross_product(&x)
    }

    #[test]
    fn unpenalized_examples() {
        let est = solve_ggl(
            &GglInstance::new(DMatrix::identity(2, 2), 0.0).unwrap(),
            None,
        )
        .unwrap();
        assert!(linalg::max_abs_diff(&est.w, &DMatrix::identity(2, 2)) < 1e-12);
        let s = m2(2.0, 0.0, 0.0, 4.0);
        let est = solve_ggl(&GglInstance::new(s, 0.0).unwrap(), None).unwrap();
        assert!(linalg::max_abs_diff(&est.w, &m2(0.5, 0.0, 0.0, 0.25)) < 1e-12);
    }

    #[test]
    fn two_by_two_matches_closed_form() {
        let s = m2(1.0, 0.5, 0.5, 1.0);
        let est = solve_ggl(&GglInstance::new(s.clone(), 0.2).unwrap(), None).unwrap();
        let expected = m2(1.0, -0.3, -0.3, 1.0) / 0.91;
        assert!(linalg::max_abs_diff(&est.w, &expected) < 1e-6);
        assert!(est.kkt_residual <= DEFAULT_TOL);
        let oracle = oracle_ggl_2x2(&s, 0.2, false).unwrap();
        assert!(kkt_residual(&s, &oracle, 0.2, false).unwrap() <= 1e-8);
    }

    #[test]
    fn objective_examples() {
        let i2 = DMatrix::identity(2, 2);
        assert!((ggl_objective(&i2, &i2, 0.0, false).unwrap() - 2.0).abs() < 1e-15);
        let w = &i2 * 2.0;
        let expected = 4.0 - 2.0 * 2f64.ln();
        assert!((ggl_objective(&i2, &w, 0.0, false).unwrap() - expected).abs() < 1e-14);
        assert!((ggl_objective(&i2, &i2, 1.0, true).unwrap() - 4.0).abs() < 1e-15);
        let bad = m2(1.0, 2.0, 2.0, 1.0);
        assert!(matches!(
            ggl_objective(&i2, &bad, 0.0, false),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn kkt_examples() {
        let s = m2(2.0, 0.3, 0.3, 1.0);
        let w = linalg::inverse_pd(&s).unwrap();
        assert!(kkt_residual(&s, &w, 0.0, false).unwrap() < 1e-14);
        let s = m2(2.0, 0.0, 0.0, 2.0);
        let r = kkt_residual(&s, &DMatrix::identity(2, 2), 0.0, false).unwrap();
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_instances() {
        assert!(GglInstance::new(m2(1.0, 0.5, 0.4, 1.0), 0.1).is_err());
        assert!(GglInstance::new(DMatrix::identity(2, 2), -1.0).is_err());
        let singular = m2(1.0, 1.0, 1.0, 1.0);
        let inst = GglInstance::new(singular, 0.0).unwrap();
        assert!(matches!(solve_ggl(&inst, None), Err(Error::Domain(_))));
    }

    #[test]
    fn large_lambda_gives_diagonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for pd in [false, true] {
            let s = random_s(&mut rng, 6);
            let lmax = (0..6)
                .flat_map(|i| (0..6).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| s[(i, j)].abs())
                .fold(0.0, f64::max);
            let inst = GglInstance::new(s.clone(), lmax)
                .unwrap()
                .penalize_diagonal(pd);
            let est = solve_ggl(&inst, None).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    let expected = if i == j {
                        1.0 / (s[(i, i)] + if pd { lmax } else { 0.0 })
                    } else {
                        0.0
                    };
                    assert_eq!(est.w[(i, j)], expected);
                }
            }
        }
    }

    #[test]
    fn objective_is_monotone_across_sweeps() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for trial in 0..10 {
            let m = 3 + trial % 6;
            let s = random_s(&mut rng, m);
            let lambda = rng.gen_range(0.0..0.3);
            let inst = GglInstance::new(s, lambda).unwrap().tol(1e-10);
            let est = solve_ggl(&inst, None).unwrap();
            assert!(est.converged);
            for pair in est.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10, "{pair:?}");
            }
        }
    }

    #[test]
    fn warm_start_never_increases_objective() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let s1 = random_s(&mut rng, 5);
            let s2 = random_s(&mut rng, 5);
            let w1 = solve_ggl(&GglInstance::new(s1, 0.1).unwrap(), None)
                .unwrap()
                .w;
            let inst2 = GglInstance::new(s2, 0.1).unwrap();
            let start = inst2.objective(&w1).unwrap();
            let est = solve_ggl(&inst2, Some(&w1)).unwrap();
            assert!(est.objective <= start + 1e-12);
        }
    }

    #[test]
    fn midpoint_convexity_along_random_segments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let m = 4;
            let s = random_s(&mut rng, m);
            let w1 = random_s(&mut rng, m) + DMatrix::identity(m, m) * 0.1;
            let w2 = random_s(&mut rng, m) + DMatrix::identity(m, m) * 0.1;
            let lambda = rng.gen_range(0.0..0.5);
            for pd in [false, true] {
                let f1 = ggl_objective(&s, &w1, lambda, pd).unwrap();
                let f2 = ggl_objective(&s, &w2, lambda, pd).unwrap();
                let mid = (&w1 + &w2) * 0.5;
                let fm = ggl_objective(&s, &mid, lambda, pd).unwrap();
                assert!(fm <= 0.5 * (f1 + f2) + 1e-10);
            }
        }
    }

    #[test]
    fn max_iter_exhaustion_is_flagged_not_an_error() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let s = random_s(&mut rng, 8);
        let inst = GglInstance::new(s, 0.01).unwrap().max_iter(1).tol(1e-15);
        let est = solve_ggl(&inst, None).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 1);
        assert!(linalg::is_pd(&est.w));
    }
}
