//! Iterative Gaussian graph learning.
//!
//! The criterion couples arbitrary marginal losses through an additive
//! over-parameterization of the mean, `Theta = M + C (I - phi W)^{1/2}`, with a
//! ridge penalty `Tr(C W C^T) / 2`:
//!
//! ```text
//! F = l(Theta; Y) / phi + Tr(C W C^T) / 2 - (n/2) log det W + (n/2) lambda ||W||_1
//! ```
//!
//! Linearizing the loss at the current `Theta` with a unit step turns each
//! update into an ordinary penalized Gaussian problem on the pseudo-data
//! `Xi = Theta - grad l(Theta)`:
//!
//! 1. `Xi <- Theta - grad l(Theta)`
//! 2. `S <- (Xi - M)^T (Xi - M) / n`
//! 3. `W <- argmin Tr(S W) - log det W + lambda ||W||_1`
//! 4. `Theta <- Xi + phi (M - Xi) W`
//!
//! `C` is never formed: `Tr(C W C^T) = Tr((Xi - M)(I - phi W) W (Xi - M)^T)`.
//! With every loss gradient 1-Lipschitz the objective is non-increasing.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glasso::{self, GglInstance, PrecisionEstimate};
use crate::linalg::{self, NeumaierSum};
use crate::losses::{poisson_total, robust_scale, ColumnLoss, LossColumnMap, LossKind, LossSpec};

pub const DEFAULT_PHI_C: f64 = 1e-3;
pub const DEFAULT_OUTER_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_OUTER: usize = 200;

const MIN_VARIANCE: f64 = 1e-12;
const FEASIBILITY_SLACK: f64 = 1e-12;
const LINE_SEARCH_HALVINGS: usize = 30;
const CURVATURE_STEP: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum MeanModel {
    Given(DMatrix<f64>),
    /// `M = 1 alpha^T`, with `alpha` estimated once per column before the loop.
    InterceptOnly,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    /// `phi = phi_c / ||W0||_2`.
    pub phi_c: f64,
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Divide each loss by its curvature at the intercept.
    pub calibrate: bool,
    /// Rescale every loss to Lipschitz constant exactly one (also scales up).
    pub equalize_lipschitz: bool,
    /// Backtrack on `Theta` when the objective would increase. Needed only
    /// for losses without a certified Lipschitz bound of one.
    pub line_search: bool,
    pub penalize_diagonal: bool,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            phi_c: DEFAULT_PHI_C,
            outer_tol: DEFAULT_OUTER_TOL,
            max_outer: DEFAULT_MAX_OUTER,
            calibrate: false,
            equalize_lipschitz: false,
            line_search: false,
            penalize_diagonal: false,
            inner_tol: glasso::DEFAULT_TOL,
            inner_max_iter: glasso::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitProblem {
    y: DMatrix<f64>,
    mean: MeanModel,
    losses: LossColumnMap,
    lambda: f64,
    options: FitOptions,
}

impl FitProblem {
    pub fn new(
        y: DMatrix<f64>,
        mean: MeanModel,
        losses: LossColumnMap,
        lambda: f64,
    ) -> Result<Self> {
        let (n, m) = y.shape();
        if n < 2 || m < 2 {
            return Err(Error::Dimension(format!(
                "need n >= 2 and m >= 2, got {n}x{m}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("observations must be finite".into()));
        }
        if let MeanModel::Given(mm) = &mean {
            if mm.shape() != y.shape() {
                return Err(Error::Dimension(format!(
                    "M is {:?}, Y is {:?}",
                    mm.shape(),
                    y.shape()
                )));
            }
            if mm.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain("M must be finite".into()));
            }
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        losses.check_data(&y)?;
        for k in 0..m {
            let var = column_variance(y.column(k).as_slice());
            if !(var >= MIN_VARIANCE) {
                return Err(Error::DegenerateInput(format!(
                    "column {k} has variance {var:e}"
                )));
            }
        }
        Ok(FitProblem {
            y,
            mean,
            losses,
            lambda,
            options: FitOptions::default(),
        })
    }

    /// Resolves one [`LossSpec`] per column against the data.
    pub fn from_specs(
        y: DMatrix<f64>,
        mean: MeanModel,
        specs: &[LossSpec],
        lambda: f64,
    ) -> Result<Self> {
        if specs.len() != y.ncols() {
            return Err(Error::Dimension(format!(
                "{} loss specs for {} columns",
                specs.len(),
                y.ncols()
            )));
        }
        let mut losses = Vec::with_capacity(specs.len());
        for (k, spec) in specs.iter().enumerate() {
            let loss = spec
                .resolve(y.column(k).as_slice())
                .map_err(|e| annotate(e, k))?;
            losses.push(loss);
        }
        FitProblem::new(y, mean, LossColumnMap::new(losses), lambda)
    }

    pub fn with_options(mut self, options: FitOptions) -> Self {
        self.options = options;
        self
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        let mut p = self.clone();
        p.lambda = lambda;
        Ok(p)
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn mean(&self) -> &MeanModel {
        &self.mean
    }

    pub fn losses(&self) -> &LossColumnMap {
        &self.losses
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn options(&self) -> &FitOptions {
        &self.options
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    /// Everything that is fixed before the first outer iteration.
    pub fn prepare(&self) -> Result<Prepared> {
        let opts = &self.options;
        let (n, m) = self.y.shape();
        let mut warnings = Vec::new();

        let poisson: Vec<Option<PoissonColumn>> = (0..m)
            .map(|k| match self.losses.get(k).kind() {
                LossKind::PoissonReparam { .. } => poisson_column(self.y.column(k).as_slice())
                    .map(|(pc, _)| Some(pc))
                    .map_err(|e| annotate(e, k)),
                _ => Ok(None),
            })
            .collect::<Result<_>>()?;

        let intercepts = estimate_intercepts(&self.y, &self.losses)?;
        for (k, clipped) in intercepts.clipped.iter().enumerate() {
            if *clipped {
                warnings.push(format!(
                    "column {k}: intercept hit the clipped search range"
                ));
            }
        }
        let mean = match &self.mean {
            MeanModel::Given(mm) => mm.clone(),
            MeanModel::InterceptOnly => DMatrix::from_fn(n, m, |_, k| intercepts.alpha[k]),
        };

        let mut losses = self.losses.clone();
        if opts.calibrate {
            losses = calibrate_losses(&losses, &intercepts.alpha, &self.y)?;
        }
        if opts.equalize_lipschitz {
            losses = losses.map(|l| l.equalize_lipschitz());
        }
        if !opts.line_search && losses.max_lipschitz() > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "loss gradient Lipschitz bound {} exceeds 1; rescale the losses or enable line search",
                losses.max_lipschitz()
            )));
        }

        let xi0 = initial_pseudo_data(&self.y, &losses);
        let mut w0 = DMatrix::zeros(m, m);
        for k in 0..m {
            let var = column_variance(xi0.column(k).as_slice());
            if !(var >= MIN_VARIANCE) {
                return Err(Error::DegenerateInput(format!(
                    "column {k} has variance {var:e}"
                )));
            }
            w0[(k, k)] = 1.0 / var;
        }
        let phi = choose_phi(&w0, opts.phi_c)?;
        let theta0 = theta_update(&xi0, &mean, &w0, phi)?;

        Ok(Prepared {
            mean,
            losses,
            alpha: intercepts.alpha,
            poisson,
            xi0,
            w0,
            phi,
            theta0,
            warnings,
        })
    }

    /// `S` of the first outer iteration, used to anchor the lambda grid.
    pub fn first_iteration_s(&self, prepared: &Prepared) -> Result<DMatrix<f64>> {
        let xi = xi_update(&prepared.theta0, &self.y, &prepared.losses)?;
        Ok(linalg::cross_product(&(xi - &prepared.mean)))
    }

    pub fn fit(&self) -> Result<FitResult> {
        let prepared = self.prepare()?;
        self.fit_prepared(&prepared, None)
    }

    /// Runs the outer loop. `warm_start` seeds only the first inner solve.
    pub fn fit_prepared(
        &self,
        prepared: &Prepared,
        warm_start: Option<&DMatrix<f64>>,
    ) -> Result<FitResult> {
        let opts = &self.options;
        let y = &self.y;
        let mean = &prepared.mean;
        let losses = &prepared.losses;
        let phi = prepared.phi;
        let lambda = self.lambda;
        let pd = opts.penalize_diagonal;

        let mut xi = prepared.xi0.clone();
        let mut w = prepared.w0.clone();
        let mut theta = prepared.theta0.clone();
        let mut f_prev = aos_objective(&xi, &theta, &w, mean, phi, lambda, y, losses, pd)?;
        let mut state = IterState {
            theta: theta.clone(),
            xi: xi.clone(),
            w: w.clone(),
            phi,
            f_trace: vec![f_prev],
            k: 0,
            inner_iterations: Vec::new(),
        };
        let mut warnings = prepared.warnings.clone();
        let mut last_estimate: Option<PrecisionEstimate> = None;
        let mut s = DMatrix::zeros(self.m(), self.m());
        let mut converged = false;
        let mut inner_failures = 0;

        for k in 1..=opts.max_outer {
            let xi_new = xi_update(&theta, y, losses)?;
            s = linalg::cross_product(&(&xi_new - mean));
            let inst = GglInstance::new(s.clone(), lambda)?
                .penalize_diagonal(pd)
                .tol(opts.inner_tol)
                .max_iter(opts.inner_max_iter);
            let init = if k == 1 { warm_start } else { Some(&w) };
            let mut est = glasso::solve_ggl(&inst, init)?;
            if init.is_none_or(|i| !std::ptr::eq(i, &w)) && est.objective > inst.objective(&w)? {
                // A cold or foreign start must not undo the descent guarantee.
                est = glasso::solve_ggl(&inst, Some(&w))?;
            }
            if !est.converged {
                inner_failures += 1;
            }
            let w_new = est.w.clone();
            let feas = phi * linalg::spectral_norm(&w_new);
            if feas > 1.0 + FEASIBILITY_SLACK {
                return Err(Error::Infeasible {
                    iteration: k,
                    value: feas,
                });
            }
            let theta_new = theta_update(&xi_new, mean, &w_new, phi)?;
            let mut f = aos_objective(
                &xi_new, &theta_new, &w_new, mean, phi, lambda, y, losses, pd,
            )?;
            let (mut theta_acc, mut xi_acc) = (theta_new, xi_new);
            if opts.line_search && f > f_prev {
                match backtrack(
                    &theta, &theta_acc, &w_new, mean, phi, lambda, y, losses, pd, f_prev,
                )? {
                    Some((t, x, fv)) => {
                        theta_acc = t;
                        xi_acc = x;
                        f = fv;
                    }
                    None => {
                        warnings.push(format!("iteration {k}: line search found no decrease"));
                        state.inner_iterations.push(est.iterations);
                        last_estimate = Some(est);
                        break;
                    }
                }
            }
            theta = theta_acc;
            xi = xi_acc;
            w = w_new;
            state.inner_iterations.push(est.iterations);
            state.f_trace.push(f);
            state.k = k;
            last_estimate = Some(est);
            let rel = (f - f_prev).abs() / (1.0 + f_prev.abs());
            f_prev = f;
            if rel < opts.outer_tol {
                converged = true;
                break;
            }
        }
        if inner_failures > 0 {
            warnings.push(format!(
                "{inner_failures} inner solves hit their iteration limit"
            ));
        }
        state.theta = theta;
        state.xi = xi;
        state.w = w;

        let precision = last_estimate
            .ok_or_else(|| Error::InvalidParameter("max_outer must be >= 1".into()))?;
        Ok(FitResult {
            precision,
            state,
            converged,
            s_final: s,
            lambda,
            alpha: prepared.alpha.clone(),
            poisson: prepared.poisson.clone(),
            losses: losses.clone(),
            warnings,
        })
    }
}

/// Quantities fixed before the outer loop starts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mean: DMatrix<f64>,
    pub losses: LossColumnMap,
    pub alpha: DVector<f64>,
    pub poisson: Vec<Option<PoissonColumn>>,
    pub xi0: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub phi: f64,
    pub theta0: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Loop variables of the outer iteration.
#[derive(Debug, Clone)]
pub struct IterState {
    pub theta: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub phi: f64,
    /// Objective before the first iteration and after each one.
    pub f_trace: Vec<f64>,
    pub k: usize,
    /// Inner sweeps spent by each outer iteration; zero means the previous
    /// `W` already satisfied the KKT tolerance.
    pub inner_iterations: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// The last inner solve; `precision.w` is the returned estimate.
    pub precision: PrecisionEstimate,
    pub state: IterState,
    pub converged: bool,
    /// `S` built from the final pseudo-data.
    pub s_final: DMatrix<f64>,
    pub lambda: f64,
    pub alpha: DVector<f64>,
    pub poisson: Vec<Option<PoissonColumn>>,
    /// Losses as actually used (after scaling and calibration).
    pub losses: LossColumnMap,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn w(&self) -> &DMatrix<f64> {
        &self.precision.w
    }

    pub fn objective(&self) -> f64 {
        *self.state.f_trace.last().expect("trace starts with F0")
    }

    pub fn iterations(&self) -> usize {
        self.state.k
    }
}

/// Eliminated intercept of a reparameterized Poisson column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonColumn {
    /// `log c_k`.
    pub a: f64,
    /// `c_k`, the column total.
    pub total: f64,
    /// `2 / c_k`.
    pub scale: f64,
}

/// Reparameterization of one count column: `a_k = log c_k` and the column
/// loss `-<y, t> + c_k log <1, exp(t)>` scaled by `2 / c_k`.
pub fn poisson_column(column: &[f64]) -> Result<(PoissonColumn, ColumnLoss)> {
    let total = poisson_total(column)?;
    let loss = crate::losses::poisson_column_loss(column)?;
    Ok((
        PoissonColumn {
            a: total.ln(),
            total,
            scale: 2.0 / total,
        },
        loss,
    ))
}

/// [`poisson_column`] for a set of columns of `y`.
pub fn poisson_preprocess(
    y: &DMatrix<f64>,
    columns: &[usize],
) -> Result<Vec<(PoissonColumn, ColumnLoss)>> {
    columns
        .iter()
        .map(|&k| {
            if k >= y.ncols() {
                return Err(Error::Dimension(format!("column {k} out of range")));
            }
            poisson_column(y.column(k).as_slice()).map_err(|e| annotate(e, k))
        })
        .collect()
}

/// `Theta - grad l(Theta)`.
pub fn xi_update(
    theta: &DMatrix<f64>,
    y: &DMatrix<f64>,
    losses: &LossColumnMap,
) -> Result<DMatrix<f64>> {
    let g = losses.batch_grad(theta, y)?;
    Ok(theta - g)
}

/// `M W phi + Xi (I - phi W)`, computed as `Xi + phi (M - Xi) W`.
pub fn theta_update(
    xi: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    w: &DMatrix<f64>,
    phi: f64,
) -> Result<DMatrix<f64>> {
    if xi.shape() != mean.shape() || w.nrows() != xi.ncols() || !w.is_square() {
        return Err(Error::Dimension(format!(
            "Xi {:?}, M {:?}, W {:?}",
            xi.shape(),
            mean.shape(),
            w.shape()
        )));
    }
    let feas = phi * linalg::spectral_norm(w);
    if feas > 1.0 + FEASIBILITY_SLACK {
        return Err(Error::Infeasible {
            iteration: 0,
            value: feas,
        });
    }
    Ok(xi + (mean - xi) * w * phi)
}

/// Objective of the over-parameterized criterion, evaluated without `C`:
///
/// `l(Theta; Y)/phi + Tr((Xi-M)(I-phi W) W (Xi-M)^T)/2 - (n/2) log det W + (n/2) lambda ||W||_1`.
#[allow(clippy::too_many_arguments)]
pub fn aos_objective(
    xi: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    phi: f64,
    lambda: f64,
    y: &DMatrix<f64>,
    losses: &LossColumnMap,
    penalize_diagonal: bool,
) -> Result<f64> {
    let n = y.nrows() as f64;
    let m = w.nrows();
    let log_det = linalg::log_det_pd(w)?;
    let loss = losses.batch_value(theta, y)?;
    let r = xi - mean;
    // (I - phi W) W = W - phi W^2
    let zw = w - (w * w) * phi;
    let rzw = &r * zw;
    let mut ridge = NeumaierSum::default();
    for k in 0..m {
        for i in 0..r.nrows() {
            ridge.add(rzw[(i, k)] * r[(i, k)]);
        }
    }
    let mut total = NeumaierSum::default();
    total.add(loss / phi);
    total.add(0.5 * ridge.total());
    total.add(-0.5 * n * log_det);
    total.add(0.5 * n * lambda * glasso::l1_norm(w, penalize_diagonal));
    Ok(total.total())
}

/// Per-column intercepts and whether each hit the edge of its search range.
#[derive(Debug, Clone)]
pub struct Intercepts {
    pub alpha: DVector<f64>,
    pub clipped: Vec<bool>,
}

/// Minimizes `sum_i l_k(alpha; y_ik)` per column: the mean for quadratic
/// columns, a grid scan refined by golden-section search otherwise.
/// Reparameterized Poisson columns are shift-invariant and get zero.
pub fn estimate_intercepts(y: &DMatrix<f64>, losses: &LossColumnMap) -> Result<Intercepts> {
    if losses.len() != y.ncols() {
        return Err(Error::Dimension(format!(
            "{} losses for {} columns",
            losses.len(),
            y.ncols()
        )));
    }
    let m = y.ncols();
    let mut alpha = DVector::zeros(m);
    let mut clipped = vec![false; m];
    for k in 0..m {
        let col = y.column(k);
        let col = col.as_slice();
        let loss = losses.get(k);
        match loss.kind() {
            LossKind::Quadratic => alpha[k] = col.iter().sum::<f64>() / col.len() as f64,
            LossKind::PoissonReparam { .. } => alpha[k] = 0.0,
            kind => {
                let (lo, hi, clip_range) = if kind.is_residual_based() {
                    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (lo, hi, false)
                } else {
                    let s = robust_scale(col).unwrap_or(1.0);
                    (-20.0 * s, 20.0 * s, true)
                };
                let f = |a: f64| {
                    col.iter()
                        .map(|&v| loss.value(a, v).expect("labels validated"))
                        .collect::<NeumaierSum>()
                        .total()
                };
                let a = minimize_1d(f, lo, hi);
                let edge = 1e-6 * (hi - lo);
                if clip_range && (a - lo < edge || hi - a < edge) {
                    log::warn!("column {k}: intercept {a} at the edge of [{lo}, {hi}]");
                    clipped[k] = true;
                }
                alpha[k] = a;
            }
        }
    }
    Ok(Intercepts { alpha, clipped })
}

/// Grid scan on 201 points then golden-section search to `1e-10` around the
/// best grid point.
fn minimize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    if !(hi > lo) {
        return lo;
    }
    let points = 200;
    let step = (hi - lo) / points as f64;
    let mut best = (lo, f(lo));
    for i in 1..=points {
        let x = lo + step * i as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let mut a = (best.0 - step).max(lo);
    let mut b = (best.0 + step).min(hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-10 * (1.0 + a.abs().max(b.abs())) {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    if f(x) <= best.1 {
        x
    } else {
        best.0
    }
}

/// `phi = c / ||W0||_2`, so that `phi ||W0||_2 = c < 1`.
pub fn choose_phi(w0: &DMatrix<f64>, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "phi constant must lie in (0, 1), got {c}"
        )));
    }
    let norm = linalg::spectral_norm(w0);
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Domain("W0 must be positive definite".into()));
    }
    Ok(c / norm)
}

/// Divides each loss by its average curvature at the intercept,
/// `mean_i l_k''(alpha_k; y_ik)`, from central second differences. Losses
/// whose bound then exceeds one are scaled back to one.
///
/// Reparameterized Poisson columns are already normalized and are skipped;
/// their loss is flat along the intercept direction.
pub fn calibrate_losses(
    losses: &LossColumnMap,
    alpha: &DVector<f64>,
    y: &DMatrix<f64>,
) -> Result<LossColumnMap> {
    if losses.len() != y.ncols() || alpha.len() != y.ncols() {
        return Err(Error::Dimension(
            "calibration inputs disagree in width".into(),
        ));
    }
    let mut out = Vec::with_capacity(losses.len());
    for (k, loss) in losses.iter().enumerate() {
        if loss.kind().is_column_level() {
            out.push(*loss);
            continue;
        }
        let curvature = mean_curvature(loss, alpha[k], y.column(k).as_slice())?;
        if !(curvature > 1e-8) || !curvature.is_finite() {
            return Err(Error::Calibration {
                column: k,
                curvature,
            });
        }
        out.push(loss.scaled(1.0 / curvature)?.scale_to_unit_lipschitz());
    }
    Ok(LossColumnMap::new(out))
}

fn mean_curvature(loss: &ColumnLoss, alpha: f64, col: &[f64]) -> Result<f64> {
    let h = CURVATURE_STEP;
    let mut acc = NeumaierSum::default();
    for &v in col {
        let d2 = (loss.value(alpha + h, v)? - 2.0 * loss.value(alpha, v)?
            + loss.value(alpha - h, v)?)
            / (h * h);
        acc.add(d2);
    }
    Ok(acc.total() / col.len() as f64)
}

/// Accepted line-search step: `(Theta, Xi, F)`.
type Accepted = (DMatrix<f64>, DMatrix<f64>, f64);

/// Halves the step from `theta_old` towards `theta_new` with `W` held at the
/// new iterate until the objective drops below `f_prev`.
#[allow(clippy::too_many_arguments)]
fn backtrack(
    theta_old: &DMatrix<f64>,
    theta_new: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mean: &DMatrix<f64>,
    phi: f64,
    lambda: f64,
    y: &DMatrix<f64>,
    losses: &LossColumnMap,
    pd: bool,
    f_prev: f64,
) -> Result<Option<Accepted>> {
    let m = w.nrows();
    // Xi - M = (Theta - M) (I - phi W)^{-1} keeps C consistent with Theta.
    let z = DMatrix::identity(m, m) - w * phi;
    let z_chol = nalgebra::Cholesky::new(z).ok_or(Error::NotPositiveDefinite)?;
    let mut t = 1.0;
    for _ in 0..LINE_SEARCH_HALVINGS {
        t *= 0.5;
        let theta = theta_old + (theta_new - theta_old) * t;
        let centered = &theta - mean;
        let xi = z_chol.solve(&centered.transpose()).transpose() + mean;
        let f = aos_objective(&xi, &theta, w, mean, phi, lambda, y, losses, pd)?;
        if f <= f_prev {
            return Ok(Some((theta, xi, f)));
        }
    }
    Ok(None)
}

/// Starting pseudo-data: the observations, except for reparameterized Poisson
/// columns which start at the centered `log(y + 1/2)`.
fn initial_pseudo_data(y: &DMatrix<f64>, losses: &LossColumnMap) -> DMatrix<f64> {
    let mut xi = y.clone();
    for (k, loss) in losses.iter().enumerate() {
        if loss.kind().is_column_level() {
            let mut col = xi.column_mut(k);
            col.apply(|v| *v = (*v + 0.5).ln());
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
    }
    xi
}

fn column_variance(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

fn annotate(e: Error, k: usize) -> Error {
    match e {
        Error::Domain(msg) => Error::Domain(format!("column {k}: {msg}")),
        Error::DegenerateInput(msg) => Error::DegenerateInput(format!("column {k}: {msg}")),
        Error::DegenerateScale(msg) => Error::DegenerateScale(format!("column {k}: {msg}")),
        other => other,
    }
}
