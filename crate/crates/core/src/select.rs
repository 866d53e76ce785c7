//! Regularization paths, BIC selection and recovery metrics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::iggl::{FitProblem, FitResult};
use crate::linalg;

pub const DEFAULT_GRID_POINTS: usize = 30;
pub const DEFAULT_GRID_RATIO: f64 = 0.01;
pub const EDGE_EPS: f64 = 1e-8;

/// Log-spaced grid from `max_{i != j} |s_ij|` down to that times `ratio`.
///
/// Returns `{0}` and a warning when `s` has no off-diagonal mass.
pub fn lambda_grid(
    s: &DMatrix<f64>,
    n_points: usize,
    ratio: f64,
) -> Result<(Vec<f64>, Option<String>)> {
    if !s.is_square() {
        return Err(Error::Dimension(format!(
            "S is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if n_points == 0 {
        return Err(Error::InvalidParameter(
            "grid needs at least one point".into(),
        ));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "grid ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let m = s.nrows();
    let mut lambda_max = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                lambda_max = lambda_max.max(s[(i, j)].abs());
            }
        }
    }
    if lambda_max == 0.0 {
        return Ok((
            vec![0.0],
            Some("S has no off-diagonal entries; lambda grid is {0}".into()),
        ));
    }
    if n_points == 1 {
        return Ok((vec![lambda_max], None));
    }
    let step = ratio.ln() / (n_points - 1) as f64;
    let grid = (0..n_points)
        .map(|i| lambda_max * (step * i as f64).exp())
        .collect();
    Ok((grid, None))
}

/// Number of free parameters: the diagonal plus the upper-triangle entries
/// with `|w| > 1e-8`.
pub fn degrees_of_freedom(w: &DMatrix<f64>) -> usize {
    let m = w.nrows();
    let mut df = m;
    for j in 0..m {
        for i in 0..j {
            if w[(i, j)].abs() > EDGE_EPS {
                df += 1;
            }
        }
    }
    df
}

/// `n [Tr(S W) - log det W] + ln(n) df` with `S` from the final pseudo-data.
pub fn bic(s: &DMatrix<f64>, w: &DMatrix<f64>, n: usize) -> Result<f64> {
    check_bic_inputs(s, w, n)?;
    bic_with_df(s, w, n, degrees_of_freedom(w))
}

/// [`bic`] with the likelihood term evaluated at the unpenalized maximum
/// likelihood estimate restricted to the support of `w`. The degrees of
/// freedom are those of `w`.
pub fn refitted_bic(s: &DMatrix<f64>, w: &DMatrix<f64>, n: usize) -> Result<f64> {
    check_bic_inputs(s, w, n)?;
    linalg::log_det_pd(w).map_err(|_| Error::Domain("W is not positive definite".into()))?;
    let refit = refit_on_support(s, w, EDGE_EPS)?;
    bic_with_df(s, &refit, n, degrees_of_freedom(w))
}

fn check_bic_inputs(s: &DMatrix<f64>, w: &DMatrix<f64>, n: usize) -> Result<()> {
    if s.shape() != w.shape() || !w.is_square() {
        return Err(Error::Dimension(format!(
            "S {:?}, W {:?}",
            s.shape(),
            w.shape()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    Ok(())
}

fn bic_with_df(s: &DMatrix<f64>, w: &DMatrix<f64>, n: usize, df: usize) -> Result<f64> {
    let log_det =
        linalg::log_det_pd(w).map_err(|_| Error::Domain("W is not positive definite".into()))?;
    let nf = n as f64;
    Ok(nf * (linalg::trace_of_product(s, w) - log_det) + nf.ln() * df as f64)
}

const REFIT_MAX_SWEEPS: usize = 1000;
const REFIT_TOL: f64 = 1e-12;

/// Gaussian maximum likelihood precision whose zero pattern is that of
/// `pattern` (entries with `|w| <= eps`), by cyclic constrained regressions
/// on the covariance estimate.
pub fn refit_on_support(
    s: &DMatrix<f64>,
    pattern: &DMatrix<f64>,
    eps: f64,
) -> Result<DMatrix<f64>> {
    if s.shape() != pattern.shape() || !s.is_square() {
        return Err(Error::Dimension(format!(
            "S {:?}, pattern {:?}",
            s.shape(),
            pattern.shape()
        )));
    }
    let m = s.nrows();
    if (0..m).any(|i| !(s[(i, i)] > 0.0)) {
        return Err(Error::Domain("S needs a positive diagonal".into()));
    }
    let neighbours: Vec<Vec<usize>> = (0..m)
        .map(|j| {
            (0..m)
                .filter(|&i| i != j && pattern[(i, j)].abs() > eps)
                .collect()
        })
        .collect();
    let mut sigma = s.clone();
    let scale = s.diagonal().amax();
    let mut converged = false;
    for _ in 0..REFIT_MAX_SWEEPS {
        let mut change = 0.0f64;
        for j in 0..m {
            let nb = &neighbours[j];
            let others: Vec<usize> = (0..m).filter(|&i| i != j).collect();
            let mut col = vec![0.0; m];
            if !nb.is_empty() {
                let a = DMatrix::from_fn(nb.len(), nb.len(), |p, q| sigma[(nb[p], nb[q])]);
                let b = nalgebra::DVector::from_iterator(nb.len(), nb.iter().map(|&i| s[(i, j)]));
                let beta = a
                    .cholesky()
                    .ok_or_else(|| {
                        Error::Numerical("support refit lost positive definiteness".into())
                    })?
                    .solve(&b);
                for &i in &others {
                    col[i] = nb
                        .iter()
                        .zip(beta.iter())
                        .map(|(&k, bk)| sigma[(i, k)] * bk)
                        .sum();
                }
            }
            for &i in &others {
                change = change.max((sigma[(i, j)] - col[i]).abs());
                sigma[(i, j)] = col[i];
                sigma[(j, i)] = col[i];
            }
        }
        if change <= REFIT_TOL * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("support refit did not converge".into()));
    }
    let mut w = linalg::inverse_pd(&sigma)?;
    for i in 0..m {
        for j in 0..m {
            if i != j && pattern[(i, j)].abs() <= eps {
                w[(i, j)] = 0.0;
            }
        }
    }
    linalg::symmetrize(&mut w);
    Ok(w)
}

/// How the path scores each fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BicKind {
    /// Likelihood at the support-restricted refit.
    #[default]
    Refitted,
    /// Likelihood at the penalized estimate itself.
    PlugIn,
}

/// BIC of a finished fit.
pub fn fit_bic(fit: &FitResult, n: usize, kind: BicKind) -> Result<f64> {
    match kind {
        BicKind::Refitted => refitted_bic(&fit.s_final, fit.w(), n),
        BicKind::PlugIn => bic(&fit.s_final, fit.w(), n),
    }
}

#[derive(Debug)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub fits: Vec<Result<FitResult>>,
    /// `NaN` where the fit failed.
    pub bic: Vec<f64>,
    /// Minimum BIC among successful fits; ties go to the larger lambda.
    pub selected_index: Option<usize>,
    pub bic_kind: BicKind,
    /// Support-restricted refit of the selected fit, under [`BicKind::Refitted`].
    pub selected_refit: Option<DMatrix<f64>>,
}

impl PathResult {
    /// The selected penalized fit.
    pub fn selected(&self) -> Option<&FitResult> {
        self.selected_index.and_then(|i| self.fits[i].as_ref().ok())
    }

    /// The model BIC scored: the refit under [`BicKind::Refitted`], the
    /// penalized estimate under [`BicKind::PlugIn`].
    pub fn selected_precision(&self) -> Option<&DMatrix<f64>> {
        match self.bic_kind {
            BicKind::Refitted => self.selected_refit.as_ref(),
            BicKind::PlugIn => self.selected().map(|f| f.w()),
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMode {
    /// Sequential, each fit seeded with the previous precision.
    WarmStart,
    /// Independent cold-started fits spread across threads.
    Parallel,
}

/// Fits every lambda of a strictly descending grid and selects by refitted BIC.
pub fn fit_path(problem: &FitProblem, lambdas: &[f64], mode: PathMode) -> Result<PathResult> {
    fit_path_with(problem, lambdas, mode, BicKind::default())
}

pub fn fit_path_with(
    problem: &FitProblem,
    lambdas: &[f64],
    mode: PathMode,
    kind: BicKind,
) -> Result<PathResult> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParameter("empty lambda grid".into()));
    }
    if lambdas.windows(2).any(|p| !(p[0] > p[1])) {
        return Err(Error::InvalidParameter(
            "lambdas must be strictly descending".into(),
        ));
    }
    if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParameter(
            "lambdas must be finite and nonnegative".into(),
        ));
    }
    let prepared = problem.prepare()?;
    let fits: Vec<Result<FitResult>> = match mode {
        PathMode::WarmStart => {
            let mut out = Vec::with_capacity(lambdas.len());
            let mut prev: Option<DMatrix<f64>> = None;
            for &lambda in lambdas {
                let res = problem
                    .with_lambda(lambda)
                    .and_then(|p| p.fit_prepared(&prepared, prev.as_ref()));
                if let Ok(fit) = &res {
                    prev = Some(fit.w().clone());
                }
                out.push(res);
            }
            out
        }
        PathMode::Parallel => {
            let workers = std::thread::available_parallelism()
                .map_or(1, |n| n.get())
                .min(lambdas.len());
            let mut slots: Vec<Option<Result<FitResult>>> =
                (0..lambdas.len()).map(|_| None).collect();
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|t| {
                        let prepared = &prepared;
                        scope.spawn(move || {
                            (t..lambdas.len())
                                .step_by(workers)
                                .map(|i| {
                                    let res = problem
                                        .with_lambda(lambdas[i])
                                        .and_then(|p| p.fit_prepared(prepared, None));
                                    (i, res)
                                })
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (i, res) in h.join().expect("path worker panicked") {
                        slots[i] = Some(res);
                    }
                }
            });
            slots
                .into_iter()
                .map(|s| s.expect("every lambda fitted"))
                .collect()
        }
    };

    let n = problem.n();
    let bic: Vec<f64> = fits
        .iter()
        .map(|f| {
            f.as_ref()
                .ok()
                .and_then(|f| fit_bic(f, n, kind).ok())
                .unwrap_or(f64::NAN)
        })
        .collect();
    let mut selected_index = None;
    for (i, b) in bic.iter().enumerate() {
        if b.is_nan() {
            continue;
        }
        match selected_index {
            Some(j) if bic[j] <= *b => {}
            _ => selected_index = Some(i),
        }
    }
    let mut path = PathResult {
        lambdas: lambdas.to_vec(),
        fits,
        bic,
        selected_index,
        bic_kind: kind,
        selected_refit: None,
    };
    if kind == BicKind::Refitted {
        if let Some(fit) = path.selected() {
            path.selected_refit = Some(refit_on_support(&fit.s_final, fit.w(), EDGE_EPS)?);
        }
    }
    Ok(path)
}

/// Bregman divergence of `-log det`:
/// `D(W1, W2) = -log det W1 + log det W2 + <W2^{-1}, W1 - W2>`.
pub fn bregman(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<f64> {
    if w1.shape() != w2.shape() || !w1.is_square() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            w1.shape(),
            w2.shape()
        )));
    }
    let pd = |e: Error| match e {
        Error::NotPositiveDefinite => Error::Domain("argument is not positive definite".into()),
        other => other,
    };
    let ld1 = linalg::log_det_pd(w1).map_err(pd)?;
    let ld2 = linalg::log_det_pd(w2).map_err(pd)?;
    let inv2 = linalg::inverse_pd(w2).map_err(pd)?;
    let diff = w1 - w2;
    Ok(-ld1 + ld2 + linalg::trace_of_product(&inv2, &diff))
}

/// `(D(W1, W2) + D(W2, W1)) / 2`, which simplifies to
/// `(<W2^{-1}, W1> + <W1^{-1}, W2>) / 2 - m`.
pub fn bregman_sym(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<f64> {
    Ok(0.5 * (bregman(w1, w2)? + bregman(w2, w1)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Nonzero entries of the true precision, diagonal included.
    pub true_support_size: usize,
}

/// Support recovery over upper-triangle edges with `|w| > eps`.
///
/// An empty estimated edge set has precision 1, an empty true edge set has
/// recall 1.
pub fn edge_metrics(w_hat: &DMatrix<f64>, w_true: &DMatrix<f64>, eps: f64) -> Result<EdgeMetrics> {
    if w_hat.shape() != w_true.shape() || !w_hat.is_square() {
        return Err(Error::Dimension(format!(
            "{:?} vs {:?}",
            w_hat.shape(),
            w_true.shape()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let m = w_hat.nrows();
    let (mut tp, mut est, mut truth) = (0usize, 0usize, 0usize);
    for j in 0..m {
        for i in 0..j {
            let e = w_hat[(i, j)].abs() > eps;
            let t = w_true[(i, j)].abs() > eps;
            est += e as usize;
            truth += t as usize;
            tp += (e && t) as usize;
        }
    }
    let precision = if est == 0 {
        1.0
    } else {
        tp as f64 / est as f64
    };
    let recall = if truth == 0 {
        1.0
    } else {
        tp as f64 / truth as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let true_support_size = w_true.iter().filter(|v| v.abs() > eps).count();
    Ok(EdgeMetrics {
        precision,
        recall,
        f1,
        true_support_size,
    })
}
