//! Marginal losses for single variables.
//!
//! Every loss exposes its value, its derivative in the natural parameter
//! `theta`, and a certified bound on the Lipschitz constant of that
//! derivative. The outer iteration takes unit gradient steps, so losses whose
//! bound exceeds one are rescaled before use (see
//! [`ColumnLoss::scale_to_unit_lipschitz`]).
//!
//! Robust losses (`huber`, `tukey`, `hampel`) are defined through their
//! psi-function: `l(theta, y) = integral_0^{|theta - y|} psi(t) dt`.
//! Margin losses (`huberized_hinge`, `lorenz`) take labels in `{-1, +1}`,
//! `bernoulli` takes labels in `{0, 1}`.
//!
//! `poisson_reparam` is a column-level loss: it couples all rows of a column
//! through a log-sum-exp and has no entrywise form.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::NeumaierSum;

/// Consistency constant that turns the median absolute deviation into a
/// standard-deviation estimate under normality.
pub const MAD_TO_SIGMA: f64 = 1.4826;

pub const HUBER_DEFAULT_C: f64 = 1.345;
pub const TUKEY_DEFAULT_C: f64 = 4.685;
pub const HAMPEL_DEFAULT_ABC: (f64, f64, f64) = (2.0, 4.0, 8.0);

/// A loss family together with its (absolute) tuning constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Quadratic,
    Bernoulli,
    Huber {
        c: f64,
    },
    Tukey {
        c: f64,
    },
    Hampel {
        a: f64,
        b: f64,
        c: f64,
    },
    HuberizedHinge {
        c: f64,
    },
    Lorenz,
    /// Reparameterized Poisson loss of a column with count total `total`.
    PoissonReparam {
        total: f64,
    },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Quadratic => "quadratic",
            LossKind::Bernoulli => "bernoulli",
            LossKind::Huber { .. } => "huber",
            LossKind::Tukey { .. } => "tukey",
            LossKind::Hampel { .. } => "hampel",
            LossKind::HuberizedHinge { .. } => "huberized_hinge",
            LossKind::Lorenz => "lorenz",
            LossKind::PoissonReparam { .. } => "poisson_reparam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{}: {name} must be positive and finite, got {v}",
                    self.name()
                )))
            }
        };
        match *self {
            LossKind::Quadratic | LossKind::Bernoulli | LossKind::Lorenz => Ok(()),
            LossKind::Huber { c } | LossKind::Tukey { c } | LossKind::HuberizedHinge { c } => {
                positive("c", c)
            }
            LossKind::Hampel { a, b, c } => {
                positive("a", a)?;
                if !(a <= b && b < c) || !c.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "hampel: need 0 < a <= b < c, got a={a}, b={b}, c={c}"
                    )));
                }
                Ok(())
            }
            LossKind::PoissonReparam { total } => positive("total", total),
        }
    }

    /// Upper bound on the Lipschitz constant of the derivative of the
    /// unscaled loss.
    pub fn default_lipschitz(&self) -> f64 {
        match *self {
            LossKind::Quadratic => 1.0,
            LossKind::Bernoulli => 0.25,
            LossKind::Lorenz => 2.0,
            LossKind::Huber { .. } => 1.0,
            LossKind::HuberizedHinge { c } => 1.0 / c,
            LossKind::Hampel { a, b, c } => f64::max(1.0, a / (c - b)),
            LossKind::Tukey { .. } => 1.0,
            // Hessian of -<y, t> + c log <1, exp(t)> is bounded by c/2.
            LossKind::PoissonReparam { total } => total / 2.0,
        }
    }

    /// Whether the derivative is a function of `theta - y` only.
    pub fn is_residual_based(&self) -> bool {
        matches!(
            self,
            LossKind::Quadratic
                | LossKind::Huber { .. }
                | LossKind::Tukey { .. }
                | LossKind::Hampel { .. }
        )
    }

    pub fn is_column_level(&self) -> bool {
        matches!(self, LossKind::PoissonReparam { .. })
    }

    /// Checks that `y` lies in the label domain of the loss.
    pub fn check_label(&self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::Domain(format!(
                "{}: non-finite observation {y}",
                self.name()
            )));
        }
        match self {
            LossKind::Bernoulli if y != 0.0 && y != 1.0 => Err(Error::Domain(format!(
                "bernoulli expects labels in {{0, 1}}, got {y}"
            ))),
            LossKind::HuberizedHinge { .. } | LossKind::Lorenz if y != -1.0 && y != 1.0 => {
                Err(Error::Domain(format!(
                    "{} expects labels in {{-1, +1}}, got {y}",
                    self.name()
                )))
            }
            LossKind::PoissonReparam { .. } if y < 0.0 || y.fract() != 0.0 => Err(Error::Domain(
                format!("poisson expects nonnegative integer counts, got {y}"),
            )),
            _ => Ok(()),
        }
    }

    fn raw_value(&self, theta: f64, y: f64) -> f64 {
        match *self {
            LossKind::Quadratic => {
                let r = theta - y;
                0.5 * r * r
            }
            LossKind::Bernoulli => softplus(theta) - y * theta,
            LossKind::Huber { c } => {
                let r = (theta - y).abs();
                if r <= c {
                    0.5 * r * r
                } else {
                    c * r - 0.5 * c * c
                }
            }
            LossKind::Tukey { c } => {
                let r = (theta - y).abs();
                let cap = c * c / 6.0;
                if r <= c {
                    let v = 1.0 - (r / c).powi(2);
                    cap * (1.0 - v * v * v)
                } else {
                    cap
                }
            }
            LossKind::Hampel { a, b, c } => {
                let r = (theta - y).abs();
                let plateau = a * b - 0.5 * a * a;
                if r <= a {
                    0.5 * r * r
                } else if r <= b {
                    a * r - 0.5 * a * a
                } else if r <= c {
                    plateau + a * ((c - b).powi(2) - (c - r).powi(2)) / (2.0 * (c - b))
                } else {
                    plateau + 0.5 * a * (c - b)
                }
            }
            LossKind::HuberizedHinge { c } => {
                let z = y * theta;
                if z <= 1.0 - c {
                    1.0 - 0.5 * c - z
                } else if z <= 1.0 {
                    (1.0 - z).powi(2) / (2.0 * c)
                } else {
                    0.0
                }
            }
            LossKind::Lorenz => {
                let z = y * theta;
                if z <= 1.0 {
                    (z - 1.0).powi(2).ln_1p()
                } else {
                    0.0
                }
            }
            LossKind::PoissonReparam { .. } => unreachable!("column-level loss"),
        }
    }

    fn raw_grad(&self, theta: f64, y: f64) -> f64 {
        match *self {
            LossKind::Quadratic => theta - y,
            LossKind::Bernoulli => sigmoid(theta) - y,
            LossKind::Huber { c } => {
                let r = theta - y;
                if r.abs() <= c {
                    r
                } else {
                    c * r.signum()
                }
            }
            LossKind::Tukey { c } => {
                let r = theta - y;
                if r.abs() <= c {
                    let v = 1.0 - (r / c).powi(2);
                    r * v * v
                } else {
                    0.0
                }
            }
            LossKind::Hampel { a, b, c } => {
                let r = theta - y;
                let t = r.abs();
                if t <= a {
                    r
                } else if t <= b {
                    a * r.signum()
                } else if t <= c {
                    a * r.signum() * (c - t) / (c - b)
                } else {
                    0.0
                }
            }
            LossKind::HuberizedHinge { c } => {
                let z = y * theta;
                if z <= 1.0 - c {
                    -y
                } else if z <= 1.0 {
                    -y * (1.0 - z) / c
                } else {
                    0.0
                }
            }
            LossKind::Lorenz => {
                let z = y * theta;
                if z <= 1.0 {
                    let u = z - 1.0;
                    y * 2.0 * u / (1.0 + u * u)
                } else {
                    0.0
                }
            }
            LossKind::PoissonReparam { .. } => unreachable!("column-level loss"),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A marginal loss for one variable: a [`LossKind`] times a positive scale.
///
/// `lipschitz` always refers to the scaled loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnLoss {
    kind: LossKind,
    scale_factor: f64,
    lipschitz: f64,
}

impl ColumnLoss {
    pub fn new(kind: LossKind) -> Result<Self> {
        kind.validate()?;
        Ok(ColumnLoss {
            kind,
            scale_factor: 1.0,
            lipschitz: kind.default_lipschitz(),
        })
    }

    pub fn quadratic() -> Self {
        ColumnLoss::new(LossKind::Quadratic).expect("quadratic has no parameters")
    }

    /// Multiplies the loss by `factor > 0`; the Lipschitz bound scales along.
    pub fn scaled(self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive and finite, got {factor}"
            )));
        }
        Ok(ColumnLoss {
            kind: self.kind,
            scale_factor: self.scale_factor * factor,
            lipschitz: self.lipschitz * factor,
        })
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Divides the loss by its Lipschitz bound when that bound exceeds one.
    /// Losses that are already at or below one are left untouched.
    pub fn scale_to_unit_lipschitz(self) -> Self {
        if self.lipschitz > 1.0 {
            ColumnLoss {
                kind: self.kind,
                scale_factor: self.scale_factor / self.lipschitz,
                lipschitz: 1.0,
            }
        } else {
            self
        }
    }

    /// Rescales to a Lipschitz bound of exactly one in both directions.
    pub fn equalize_lipschitz(self) -> Self {
        ColumnLoss {
            kind: self.kind,
            scale_factor: self.scale_factor / self.lipschitz,
            lipschitz: 1.0,
        }
    }

    pub fn value(&self, theta: f64, y: f64) -> Result<f64> {
        self.entrywise_guard()?;
        self.kind.check_label(y)?;
        Ok(self.scale_factor * self.kind.raw_value(theta, y))
    }

    pub fn grad(&self, theta: f64, y: f64) -> Result<f64> {
        self.entrywise_guard()?;
        self.kind.check_label(y)?;
        Ok(self.scale_factor * self.kind.raw_grad(theta, y))
    }

    /// Loss summed over one column.
    pub fn column_value(&self, theta: &[f64], y: &[f64]) -> Result<f64> {
        same_len(theta, y)?;
        if let LossKind::PoissonReparam { .. } = self.kind {
            let total = poisson_total(y)?;
            let lse = log_sum_exp(theta);
            let inner: NeumaierSum = theta.iter().zip(y).map(|(t, c)| -c * t).collect();
            return Ok(self.scale_factor * (inner.total() + total * lse));
        }
        let mut acc = NeumaierSum::default();
        for (&t, &v) in theta.iter().zip(y) {
            self.kind.check_label(v)?;
            acc.add(self.kind.raw_value(t, v));
        }
        Ok(self.scale_factor * acc.total())
    }

    /// Gradient of [`ColumnLoss::column_value`] with respect to `theta`.
    pub fn column_grad(&self, theta: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        same_len(theta, y)?;
        same_len(theta, out)?;
        if let LossKind::PoissonReparam { .. } = self.kind {
            let total = poisson_total(y)?;
            let lse = log_sum_exp(theta);
            for ((o, &t), &c) in out.iter_mut().zip(theta).zip(y) {
                *o = self.scale_factor * (-c + total * (t - lse).exp());
            }
            return Ok(());
        }
        for ((o, &t), &v) in out.iter_mut().zip(theta).zip(y) {
            self.kind.check_label(v)?;
            *o = self.scale_factor * self.kind.raw_grad(t, v);
        }
        Ok(())
    }

    fn entrywise_guard(&self) -> Result<()> {
        if self.kind.is_column_level() {
            Err(Error::Domain(
                "poisson_reparam is a column-level loss; use column_value/column_grad".into(),
            ))
        } else {
            Ok(())
        }
    }
}

/// One [`ColumnLoss`] per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct LossColumnMap {
    losses: Vec<ColumnLoss>,
}

impl LossColumnMap {
    pub fn new(losses: Vec<ColumnLoss>) -> Self {
        LossColumnMap { losses }
    }

    pub fn uniform(loss: ColumnLoss, m: usize) -> Self {
        LossColumnMap {
            losses: vec![loss; m],
        }
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn get(&self, k: usize) -> &ColumnLoss {
        &self.losses[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ColumnLoss> {
        self.losses.iter()
    }

    pub fn as_slice(&self) -> &[ColumnLoss] {
        &self.losses
    }

    pub fn map(&self, f: impl FnMut(&ColumnLoss) -> ColumnLoss) -> Self {
        LossColumnMap {
            losses: self.losses.iter().map(f).collect(),
        }
    }

    pub fn max_lipschitz(&self) -> f64 {
        self.losses
            .iter()
            .map(|l| l.lipschitz())
            .fold(0.0, f64::max)
    }

    /// Validates every observation against its column's label domain.
    pub fn check_data(&self, y: &DMatrix<f64>) -> Result<()> {
        self.check_width(y.ncols())?;
        for (k, loss) in self.losses.iter().enumerate() {
            for v in y.column(k).iter() {
                loss.kind.check_label(*v).map_err(|e| match e {
                    Error::Domain(msg) => Error::Domain(format!("column {k}: {msg}")),
                    other => other,
                })?;
            }
        }
        Ok(())
    }

    /// `sum_k l_k(theta_k, y_k)`.
    pub fn batch_value(&self, theta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        self.check_shapes(theta, y)?;
        let mut acc = NeumaierSum::default();
        for (k, loss) in self.losses.iter().enumerate() {
            let t = theta.column(k);
            let v = y.column(k);
            acc.add(loss.column_value(t.as_slice(), v.as_slice())?);
        }
        Ok(acc.total())
    }

    /// Gradient of [`LossColumnMap::batch_value`] in `theta`.
    pub fn batch_grad(&self, theta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_shapes(theta, y)?;
        let mut out = DMatrix::zeros(theta.nrows(), theta.ncols());
        for (k, loss) in self.losses.iter().enumerate() {
            let t = theta.column(k);
            let v = y.column(k);
            let mut g = out.column_mut(k);
            loss.column_grad(t.as_slice(), v.as_slice(), g.as_mut_slice())?;
        }
        Ok(out)
    }

    fn check_width(&self, m: usize) -> Result<()> {
        if self.losses.len() != m {
            return Err(Error::Dimension(format!(
                "loss map has {} columns, data has {m}",
                self.losses.len()
            )));
        }
        Ok(())
    }

    fn check_shapes(&self, theta: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
        if theta.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "theta is {:?}, y is {:?}",
                theta.shape(),
                y.shape()
            )));
        }
        self.check_width(y.ncols())
    }
}

impl FromIterator<ColumnLoss> for LossColumnMap {
    fn from_iter<I: IntoIterator<Item = ColumnLoss>>(iter: I) -> Self {
        LossColumnMap {
            losses: iter.into_iter().collect(),
        }
    }
}

/// Loss choice before data-dependent constants are resolved. Robust tuning
/// constants are given as multiples of a robust scale estimate of the column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Quadratic,
    Bernoulli,
    Huber {
        c_mult: f64,
    },
    Tukey {
        c_mult: f64,
    },
    Hampel {
        a_mult: f64,
        b_mult: f64,
        c_mult: f64,
    },
    HuberizedHinge {
        c: f64,
    },
    Lorenz,
    Poisson,
}

impl LossSpec {
    pub const NAMES: [&'static str; 8] = [
        "quadratic",
        "bernoulli",
        "huber",
        "tukey",
        "hampel",
        "huberized_hinge",
        "lorenz",
        "poisson_reparam",
    ];

    /// Default parameters for a lowercase loss name.
    pub fn from_name(name: &str) -> Option<Self> {
        let (a, b, c) = HAMPEL_DEFAULT_ABC;
        Some(match name {
            "quadratic" | "gaussian" => LossSpec::Quadratic,
            "bernoulli" => LossSpec::Bernoulli,
            "huber" => LossSpec::Huber {
                c_mult: HUBER_DEFAULT_C,
            },
            "tukey" => LossSpec::Tukey {
                c_mult: TUKEY_DEFAULT_C,
            },
            "hampel" => LossSpec::Hampel {
                a_mult: a,
                b_mult: b,
                c_mult: c,
            },
            "huberized_hinge" => LossSpec::HuberizedHinge { c: 1.0 },
            "lorenz" => LossSpec::Lorenz,
            "poisson_reparam" | "poisson" => LossSpec::Poisson,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Quadratic => "quadratic",
            LossSpec::Bernoulli => "bernoulli",
            LossSpec::Huber { .. } => "huber",
            LossSpec::Tukey { .. } => "tukey",
            LossSpec::Hampel { .. } => "hampel",
            LossSpec::HuberizedHinge { .. } => "huberized_hinge",
            LossSpec::Lorenz => "lorenz",
            LossSpec::Poisson => "poisson_reparam",
        }
    }

    pub fn is_margin(&self) -> bool {
        matches!(self, LossSpec::HuberizedHinge { .. } | LossSpec::Lorenz)
    }

    /// Resolves the data-dependent constants against one column.
    ///
    /// Robust losses take `sigma` from the MAD of the column about its median
    /// (the intercept-only least-absolute-deviation fit). Poisson columns are
    /// resolved to the reparameterized column loss scaled by `2 / c_k`.
    pub fn resolve(&self, column: &[f64]) -> Result<ColumnLoss> {
        let robust = || robust_scale(column);
        match *self {
            LossSpec::Quadratic => Ok(ColumnLoss::quadratic()),
            LossSpec::Bernoulli => ColumnLoss::new(LossKind::Bernoulli),
            LossSpec::Lorenz => ColumnLoss::new(LossKind::Lorenz),
            LossSpec::HuberizedHinge { c } => ColumnLoss::new(LossKind::HuberizedHinge { c }),
            LossSpec::Huber { c_mult } => ColumnLoss::new(LossKind::Huber {
                c: c_mult * robust()?,
            }),
            LossSpec::Tukey { c_mult } => ColumnLoss::new(LossKind::Tukey {
                c: c_mult * robust()?,
            }),
            LossSpec::Hampel {
                a_mult,
                b_mult,
                c_mult,
            } => {
                let s = robust()?;
                ColumnLoss::new(LossKind::Hampel {
                    a: a_mult * s,
                    b: b_mult * s,
                    c: c_mult * s,
                })
            }
            LossSpec::Poisson => poisson_column_loss(column),
        }
        .map(ColumnLoss::scale_to_unit_lipschitz)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Reparameterized Poisson loss for a count column, scaled by `2 / c_k` so
/// that its Hessian is bounded by the identity.
pub fn poisson_column_loss(column: &[f64]) -> Result<ColumnLoss> {
    let total = poisson_total(column)?;
    let loss = ColumnLoss::new(LossKind::PoissonReparam { total })?;
    Ok(ColumnLoss {
        kind: loss.kind,
        scale_factor: 2.0 / total,
        lipschitz: 1.0,
    })
}

/// `1.4826 * median(|r - median(r)|)`.
pub fn robust_scale(residuals: &[f64]) -> Result<f64> {
    if residuals.len() < 2 {
        return Err(Error::DegenerateScale(format!(
            "need at least two residuals, got {}",
            residuals.len()
        )));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::Domain("non-finite residual".into()));
    }
    let center = median(residuals);
    let deviations: Vec<f64> = residuals.iter().map(|r| (r - center).abs()).collect();
    let mad = median(&deviations);
    let sigma = MAD_TO_SIGMA * mad;
    if sigma > 0.0 {
        Ok(sigma)
    } else {
        Err(Error::DegenerateScale(
            "median absolute deviation is zero".into(),
        ))
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub(crate) fn poisson_total(column: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &v in column {
        if !(v >= 0.0) || v.fract() != 0.0 || !v.is_finite() {
            return Err(Error::Domain(format!(
                "poisson expects nonnegative integer counts, got {v}"
            )));
        }
        total += v;
    }
    if total > 0.0 {
        Ok(total)
    } else {
        Err(Error::DegenerateInput(
            "poisson column has zero total count".into(),
        ))
    }
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "lengths {} and {}",
            a.len(),
            b.len()
        )))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return top;
    }
    let s: NeumaierSum = x.iter().map(|v| (v - top).exp()).collect();
    top + s.total().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    fn all_entrywise() -> Vec<ColumnLoss> {
        [
            LossKind::Quadratic,
            LossKind::Bernoulli,
            LossKind::Huber { c: 1.345 },
            LossKind::Tukey { c: 4.685 },
            LossKind::Hampel {
                a: 2.0,
                b: 4.0,
                c: 8.0,
            },
            LossKind::HuberizedHinge { c: 1.0 },
            LossKind::HuberizedHinge { c: 0.5 },
            LossKind::Lorenz,
        ]
        .into_iter()
        .map(|k| ColumnLoss::new(k).unwrap())
        .collect()
    }

    fn label_for(kind: LossKind, u: f64) -> f64 {
        match kind {
            LossKind::Bernoulli => (u > 0.0) as i32 as f64,
            LossKind::HuberizedHinge { .. } | LossKind::Lorenz => u.signum(),
            _ => 3.0 * u,
        }
    }

    #[test]
    fn value_examples() {
        let bern = ColumnLoss::new(LossKind::Bernoulli).unwrap();
        assert!((bern.value(0.0, 1.0).unwrap() - LN_2).abs() < 1e-15);
        let huber = ColumnLoss::new(LossKind::Huber { c: 1.345 }).unwrap();
        assert_eq!(huber.value(0.7, 0.7).unwrap(), 0.0);
        let lorenz = ColumnLoss::new(LossKind::Lorenz).unwrap();
        assert!((lorenz.value(0.0, 1.0).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn grad_examples() {
        let huber = ColumnLoss::new(LossKind::Huber { c: 1.345 }).unwrap();
        assert_eq!(huber.grad(2.0, 0.0).unwrap(), 1.345);
        assert_eq!(huber.grad(0.5, 0.0).unwrap(), 0.5);
        let tukey = ColumnLoss::new(LossKind::Tukey { c: 4.685 }).unwrap();
        assert_eq!(tukey.grad(1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn label_domains_are_enforced() {
        let bern = ColumnLoss::new(LossKind::Bernoulli).unwrap();
        assert!(matches!(bern.value(0.0, 2.0), Err(Error::Domain(_))));
        let hinge = ColumnLoss::new(LossKind::HuberizedHinge { c: 1.0 }).unwrap();
        assert!(matches!(hinge.grad(0.0, 0.0), Err(Error::Domain(_))));
        let pois = poisson_column_loss(&[1.0, 2.0]).unwrap();
        assert!(matches!(pois.value(0.0, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(ColumnLoss::new(LossKind::Huber { c: 0.0 }).is_err());
        assert!(ColumnLoss::new(LossKind::Hampel {
            a: 2.0,
            b: 8.0,
            c: 4.0
        })
        .is_err());
        assert!(ColumnLoss::new(LossKind::Tukey { c: f64::NAN }).is_err());
    }

    #[test]
    fn default_lipschitz_values() {
        assert_eq!(LossKind::Bernoulli.default_lipschitz(), 0.25);
        assert_eq!(LossKind::Lorenz.default_lipschitz(), 2.0);
        assert_eq!(LossKind::Quadratic.default_lipschitz(), 1.0);
        assert_eq!(LossKind::HuberizedHinge { c: 0.5 }.default_lipschitz(), 2.0);
        assert_eq!(
            LossKind::Hampel {
                a: 2.0,
                b: 4.0,
                c: 6.0
            }
            .default_lipschitz(),
            1.0
        );
        assert_eq!(
            LossKind::Hampel {
                a: 3.0,
                b: 4.0,
                c: 5.0
            }
            .default_lipschitz(),
            3.0
        );
    }

    /// Grid oracle for Tukey: sup |psi'| over [-2c, 2c] from finite
    /// differences of the gradient on 1e5 points.
    #[test]
    fn tukey_lipschitz_grid_oracle() {
        for c in [0.5, 1.0, 4.685, 10.0] {
            let loss = ColumnLoss::new(LossKind::Tukey { c }).unwrap();
            let points = 100_000;
            let h = 1e-7 * c;
            let mut sup: f64 = 0.0;
            for i in 0..=points {
                let t = -2.0 * c + 4.0 * c * i as f64 / points as f64;
                let d =
                    (loss.grad(t + h, 0.0).unwrap() - loss.grad(t - h, 0.0).unwrap()) / (2.0 * h);
                sup = sup.max(d.abs());
            }
            assert!((sup - 1.0).abs() < 1e-6, "c = {c}: sup = {sup}");
            assert_eq!(loss.lipschitz(), 1.0);
        }
    }

    #[test]
    fn unit_scaling_examples() {
        let lorenz = ColumnLoss::new(LossKind::Lorenz)
            .unwrap()
            .scale_to_unit_lipschitz();
        assert_eq!(lorenz.scale_factor(), 0.5);
        assert_eq!(lorenz.lipschitz(), 1.0);
        let quad = ColumnLoss::quadratic();
        assert_eq!(quad.scale_to_unit_lipschitz(), quad);
        let bern = ColumnLoss::new(LossKind::Bernoulli)
            .unwrap()
            .scale_to_unit_lipschitz();
        assert_eq!(bern.scale_factor(), 1.0);
        assert_eq!(bern.lipschitz(), 0.25);
        let eq = bern.equalize_lipschitz();
        assert_eq!(eq.scale_factor(), 4.0);
        assert_eq!(eq.lipschitz(), 1.0);
    }

    #[test]
    fn unit_scaling_is_idempotent() {
        for loss in all_entrywise() {
            let once = loss.scale_to_unit_lipschitz();
            assert_eq!(once.scale_to_unit_lipschitz(), once);
            assert!(once.lipschitz() <= 1.0);
        }
    }

    #[test]
    fn robust_scale_examples() {
        assert!((robust_scale(&[-1.0, 0.0, 1.0]).unwrap() - 1.4826).abs() < 1e-15);
        assert!(matches!(
            robust_scale(&[5.0, 5.0, 5.0]),
            Err(Error::DegenerateScale(_))
        ));
        assert!(matches!(
            robust_scale(&[0.0, 0.0, 0.0, 10.0]),
            Err(Error::DegenerateScale(_))
        ));
        assert!(robust_scale(&[1.0]).is_err());
    }

    #[test]
    fn batch_grad_examples() {
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let theta = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let quad = LossColumnMap::uniform(ColumnLoss::quadratic(), 2);
        assert_eq!(quad.batch_grad(&theta, &y).unwrap(), &theta - &y);

        let tukey = LossColumnMap::uniform(ColumnLoss::new(LossKind::Tukey { c: 2.0 }).unwrap(), 2);
        assert_eq!(tukey.batch_grad(&y, &y).unwrap(), DMatrix::zeros(2, 2));

        let bern = LossColumnMap::uniform(ColumnLoss::new(LossKind::Bernoulli).unwrap(), 2);
        let g = bern.batch_grad(&DMatrix::zeros(2, 2), &y).unwrap();
        assert_eq!(g, y.map(|v| 0.5 - v));

        assert!(matches!(
            quad.batch_grad(&DMatrix::zeros(3, 2), &y),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn redescending_losses_vanish_beyond_cutoff() {
        let tukey = ColumnLoss::new(LossKind::Tukey { c: 3.0 }).unwrap();
        let hampel = ColumnLoss::new(LossKind::Hampel {
            a: 1.0,
            b: 2.0,
            c: 4.0,
        })
        .unwrap();
        for r in [3.0 + 1e-12, 5.0, 100.0, -3.5, -1e6] {
            assert_eq!(tukey.grad(r, 0.0).unwrap(), 0.0);
        }
        for r in [4.0 + 1e-12, 7.0, -4.5] {
            assert_eq!(hampel.grad(r, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn loss_values_are_continuous_at_breakpoints() {
        let hampel = ColumnLoss::new(LossKind::Hampel {
            a: 1.0,
            b: 2.0,
            c: 4.0,
        })
        .unwrap();
        let hinge = ColumnLoss::new(LossKind::HuberizedHinge { c: 0.5 }).unwrap();
        let eps = 1e-9;
        for r in [1.0, 2.0, 4.0] {
            let l = hampel.value(r - eps, 0.0).unwrap();
            let u = hampel.value(r + eps, 0.0).unwrap();
            assert!((l - u).abs() < 1e-8);
        }
        for z in [0.5, 1.0] {
            let l = hinge.value(z - eps, 1.0).unwrap();
            let u = hinge.value(z + eps, 1.0).unwrap();
            assert!((l - u).abs() < 1e-8);
        }
    }

    #[test]
    fn spec_resolution_uses_mad() {
        let col = [-1.0, 0.0, 1.0, 0.5, -0.5];
        let sigma = robust_scale(&col).unwrap();
        let huber = LossSpec::Huber { c_mult: 1.345 }.resolve(&col).unwrap();
        assert_eq!(huber.kind(), LossKind::Huber { c: 1.345 * sigma });
        let lorenz = LossSpec::Lorenz.resolve(&[1.0, -1.0]).unwrap();
        assert_eq!(lorenz.scale_factor(), 0.5);
        let pois = LossSpec::Poisson.resolve(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(pois.kind(), LossKind::PoissonReparam { total: 6.0 });
        assert!((pois.scale_factor() - 1.0 / 3.0).abs() < 1e-16);
        assert!(LossSpec::Tukey { c_mult: 4.685 }
            .resolve(&[2.0, 2.0, 2.0])
            .is_err());
        assert!(LossSpec::from_name("ising").is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_central_difference(theta in -6.0f64..6.0, u in -2.0f64..2.0) {
            for loss in all_entrywise() {
                let y = label_for(loss.kind(), u);
                let h = 1e-6;
                let g = loss.grad(theta, y).unwrap();
                let fd = (loss.value(theta + h, y).unwrap() - loss.value(theta - h, y).unwrap()) / (2.0 * h);
                // Central differences straddling a kink of psi carry O(h) error.
                let kink = kinks(loss.kind(), theta, y).iter().any(|k| (theta - k).abs() < 2.0 * h);
                if !kink {
                    prop_assert!((g - fd).abs() <= 1e-5 * (1.0 + g.abs()), "{} at ({theta}, {y}): {g} vs {fd}", loss.kind());
                }
            }
        }

        #[test]
        fn psi_gradients_are_odd(r in -20.0f64..20.0, y in -5.0f64..5.0) {
            for loss in all_entrywise().into_iter().filter(|l| l.kind().is_residual_based()) {
                let plus = loss.grad(y + r, y).unwrap();
                let minus = loss.grad(y - r, y).unwrap();
                prop_assert!((plus + minus).abs() <= 1e-12 * (1.0 + plus.abs()));
            }
        }

        #[test]
        fn robust_and_margin_losses_are_nonnegative(theta in -10.0f64..10.0, u in -2.0f64..2.0) {
            for loss in all_entrywise().into_iter().filter(|l| l.kind() != LossKind::Bernoulli) {
                let y = label_for(loss.kind(), u);
                prop_assert!(loss.value(theta, y).unwrap() >= 0.0);
            }
        }
    }

    fn kinks(kind: LossKind, _theta: f64, y: f64) -> Vec<f64> {
        match kind {
            LossKind::Huber { c } | LossKind::Tukey { c } => vec![y - c, y + c],
            LossKind::Hampel { a, b, c } => vec![y - a, y + a, y - b, y + b, y - c, y + c],
            LossKind::HuberizedHinge { c } => vec![y * (1.0 - c), y],
            LossKind::Lorenz => vec![y],
            _ => vec![],
        }
    }

    #[test]
    fn lipschitz_bound_holds_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for loss in all_entrywise() {
            let mut worst: f64 = 0.0;
            for _ in 0..10_000 {
                let y = label_for(loss.kind(), rng.gen_range(-2.0..2.0));
                let t1: f64 = rng.gen_range(-12.0..12.0);
                let t2: f64 = t1 + rng.gen_range(-3.0..3.0);
                if t1 == t2 {
                    continue;
                }
                let q =
                    (loss.grad(t1, y).unwrap() - loss.grad(t2, y).unwrap()).abs() / (t1 - t2).abs();
                worst = worst.max(q);
            }
            let bound = loss.kind().default_lipschitz() * loss.scale_factor() + 1e-8;
            assert!(worst <= bound, "{}: {worst} > {bound}", loss.kind());
        }
    }

    #[test]
    fn poisson_column_gradient_at_zero_is_uniform() {
        let y = [1.0, 2.0, 3.0];
        let loss = poisson_column_loss(&y).unwrap();
        let mut g = [0.0; 3];
        loss.column_grad(&[0.0; 3], &y, &mut g).unwrap();
        for (gi, yi) in g.iter().zip(y) {
            let expected = (2.0 / 6.0) * (-yi + 6.0 / 3.0);
            assert!((gi - expected).abs() < 1e-15);
        }
        assert!(matches!(
            poisson_column_loss(&[0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            poisson_column_loss(&[1.0, -1.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            poisson_column_loss(&[1.5, 1.0]),
            Err(Error::Domain(_))
        ));
    }
}
