//! File-based batch interface: `fit`, `path`, `simulate` and `metrics`.
//!
//! Exit codes are 0 on success, 1 on input or configuration errors and 2 when
//! the reported fit did not converge (outputs are still written).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::datagen::{self, GlmFamily, GraphPattern, PatternKind};
use crate::error::Error;
use crate::iggl::{FitOptions, FitProblem, FitResult, MeanModel};
use crate::losses::LossSpec;
use crate::select::{self, BicKind, PathMode, EDGE_EPS};

pub const FORMAT_VERSION: u64 = 1;
pub const SEED_ENV: &str = "IGGL_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Fit(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_INPUT
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq)]
pub enum MeanMode {
    Intercept,
    Zero,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaChoice {
    Value(f64),
    /// Log-spaced grid anchored at the first-iteration `S`, selected by BIC.
    Grid {
        n_points: usize,
        ratio: f64,
    },
    /// Explicit grid, selected by BIC.
    Values(Vec<f64>),
}

impl LambdaChoice {
    pub fn auto() -> Self {
        LambdaChoice::Grid {
            n_points: select::DEFAULT_GRID_POINTS,
            ratio: select::DEFAULT_GRID_RATIO,
        }
    }
}

/// Per-column loss assignment: explicit names win over index ranges, which
/// win over the default. A column may be named by at most one rule.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossAssignment {
    pub default: Option<LossSpec>,
    pub by_name: Vec<(String, LossSpec)>,
    pub ranges: Vec<(Range<usize>, LossSpec)>,
}

impl LossAssignment {
    pub fn uniform(spec: LossSpec) -> Self {
        LossAssignment {
            default: Some(spec),
            ..Default::default()
        }
    }

    pub fn resolve(&self, names: &[String]) -> CliResult<Vec<LossSpec>> {
        let m = names.len();
        let mut out: Vec<Option<LossSpec>> = vec![None; m];
        for (range, spec) in &self.ranges {
            if range.end > m {
                return Err(CliError::Config(format!(
                    "loss range {}..{} exceeds the {m} data columns",
                    range.start, range.end
                )));
            }
            for slot in &mut out[range.clone()] {
                *slot = Some(*spec);
            }
        }
        for (name, spec) in &self.by_name {
            let k = names.iter().position(|n| n == name).ok_or_else(|| {
                CliError::Config(format!("loss assigned to unknown column \"{name}\""))
            })?;
            if out[k].is_some() {
                return Err(CliError::Config(format!(
                    "column \"{name}\" is assigned a loss by both name and range"
                )));
            }
            out[k] = Some(*spec);
        }
        out.into_iter()
            .enumerate()
            .map(|(k, s)| {
                s.or(self.default)
                    .ok_or_else(|| CliError::Config(format!("column \"{}\" has no loss", names[k])))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputPaths {
    pub json: Option<PathBuf>,
    pub dot: Option<PathBuf>,
    pub path_csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input_path: PathBuf,
    pub mean_mode: MeanMode,
    pub losses: LossAssignment,
    pub lambda: LambdaChoice,
    pub options: FitOptions,
    pub bic: BicKind,
    pub edge_eps: f64,
    pub drop_isolated: bool,
    pub output: OutputPaths,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    input: PathBuf,
    #[serde(default)]
    mean: Option<RawMean>,
    #[serde(default)]
    losses: Option<RawLosses>,
    #[serde(default)]
    lambda: Option<RawLambda>,
    phi_c: Option<f64>,
    outer_tol: Option<f64>,
    max_outer: Option<usize>,
    inner_tol: Option<f64>,
    inner_max_iter: Option<usize>,
    #[serde(default)]
    calibrate: bool,
    #[serde(default)]
    equalize_lipschitz: bool,
    #[serde(default)]
    line_search: bool,
    #[serde(default)]
    penalize_diagonal: bool,
    bic: Option<String>,
    edge_eps: Option<f64>,
    #[serde(default)]
    drop_isolated: bool,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMean {
    Mode(String),
    File { file: PathBuf },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLosses {
    Uniform(RawLoss),
    Detailed(RawLossTable),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLossTable {
    default: Option<RawLoss>,
    #[serde(default)]
    columns: BTreeMap<String, RawLoss>,
    #[serde(default)]
    ranges: Vec<RawRange>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRange {
    start: usize,
    end: usize,
    loss: RawLoss,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLoss {
    Name(String),
    Params(RawLossParams),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLossParams {
    name: String,
    a: Option<f64>,
    b: Option<f64>,
    c: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawLambda {
    Value(f64),
    Auto(String),
    Values {
        values: Vec<f64>,
    },
    Grid {
        n_points: Option<usize>,
        ratio: Option<f64>,
    },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    json: Option<PathBuf>,
    dot: Option<PathBuf>,
    path_csv: Option<PathBuf>,
}

fn parse_loss(raw: &RawLoss) -> CliResult<LossSpec> {
    let (name, a, b, c) = match raw {
        RawLoss::Name(n) => (n.as_str(), None, None, None),
        RawLoss::Params(p) => (p.name.as_str(), p.a, p.b, p.c),
    };
    let spec = LossSpec::from_name(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown loss \"{name}\"; expected one of {}",
            LossSpec::NAMES.join(", ")
        ))
    })?;
    let unused =
        |what: &str| CliError::Config(format!("loss \"{name}\" takes no parameter {what}"));
    Ok(match spec {
        LossSpec::Huber { c_mult } | LossSpec::Tukey { c_mult } => {
            if a.is_some() {
                return Err(unused("a"));
            }
            if b.is_some() {
                return Err(unused("b"));
            }
            let c = c.unwrap_or(c_mult);
            if matches!(spec, LossSpec::Huber { .. }) {
                LossSpec::Huber { c_mult: c }
            } else {
                LossSpec::Tukey { c_mult: c }
            }
        }
        LossSpec::Hampel {
            a_mult,
            b_mult,
            c_mult,
        } => LossSpec::Hampel {
            a_mult: a.unwrap_or(a_mult),
            b_mult: b.unwrap_or(b_mult),
            c_mult: c.unwrap_or(c_mult),
        },
        LossSpec::HuberizedHinge { c: c0 } => {
            if a.is_some() {
                return Err(unused("a"));
            }
            if b.is_some() {
                return Err(unused("b"));
            }
            LossSpec::HuberizedHinge { c: c.unwrap_or(c0) }
        }
        other => {
            if a.is_some() || b.is_some() || c.is_some() {
                return Err(CliError::Config(format!(
                    "loss \"{name}\" takes no parameters"
                )));
            }
            other
        }
    })
}

impl RunConfig {
    pub fn from_path(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::from_json_str(&text, base)
    }

    /// Parses a config document; relative paths resolve against `base`.
    pub fn from_json_str(text: &str, base: &Path) -> CliResult<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mean_mode = match raw.mean {
            None => MeanMode::Intercept,
            Some(RawMean::Mode(s)) => match s.as_str() {
                "intercept" => MeanMode::Intercept,
                "zero" => MeanMode::Zero,
                other => return Err(CliError::Config(format!("unknown mean mode \"{other}\""))),
            },
            Some(RawMean::File { file }) => MeanMode::File(rel(file)),
        };

        let losses = match raw.losses {
            None => LossAssignment::uniform(LossSpec::Quadratic),
            Some(RawLosses::Uniform(l)) => LossAssignment::uniform(parse_loss(&l)?),
            Some(RawLosses::Detailed(t)) => {
                let default = t.default.as_ref().map(parse_loss).transpose()?;
                let by_name = t
                    .columns
                    .iter()
                    .map(|(k, v)| Ok((k.clone(), parse_loss(v)?)))
                    .collect::<CliResult<Vec<_>>>()?;
                let mut ranges = Vec::new();
                for r in &t.ranges {
                    if r.start >= r.end {
                        return Err(CliError::Config(format!(
                            "empty loss range {}..{}",
                            r.start, r.end
                        )));
                    }
                    ranges.push((r.start..r.end, parse_loss(&r.loss)?));
                }
                let mut sorted: Vec<_> = ranges.iter().map(|(r, _)| r.clone()).collect();
                sorted.sort_by_key(|r| r.start);
                for p in sorted.windows(2) {
                    if p[1].start < p[0].end {
                        return Err(CliError::Config(format!(
                            "loss ranges {}..{} and {}..{} overlap",
                            p[0].start, p[0].end, p[1].start, p[1].end
                        )));
                    }
                }
                LossAssignment {
                    default,
                    by_name,
                    ranges,
                }
            }
        };

        let lambda = match raw.lambda {
            None => LambdaChoice::auto(),
            Some(RawLambda::Value(v)) => {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(CliError::Config(format!("lambda must be >= 0, got {v}")));
                }
                LambdaChoice::Value(v)
            }
            Some(RawLambda::Auto(s)) if s == "auto" => LambdaChoice::auto(),
            Some(RawLambda::Auto(s)) => {
                return Err(CliError::Config(format!("unknown lambda \"{s}\"")))
            }
            Some(RawLambda::Values { mut values }) => {
                if values.is_empty() || values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(CliError::Config(
                        "lambda values must be nonempty and >= 0".into(),
                    ));
                }
                values.sort_by(|a, b| b.total_cmp(a));
                values.dedup();
                LambdaChoice::Values(values)
            }
            Some(RawLambda::Grid { n_points, ratio }) => {
                let n_points = n_points.unwrap_or(select::DEFAULT_GRID_POINTS);
                let ratio = ratio.unwrap_or(select::DEFAULT_GRID_RATIO);
                if n_points == 0 || !(ratio > 0.0 && ratio < 1.0) {
                    return Err(CliError::Config(
                        "grid needs n_points >= 1 and ratio in (0, 1)".into(),
                    ));
                }
                LambdaChoice::Grid { n_points, ratio }
            }
        };

        let defaults = FitOptions::default();
        let options = FitOptions {
            phi_c: raw.phi_c.unwrap_or(defaults.phi_c),
            outer_tol: raw.outer_tol.unwrap_or(defaults.outer_tol),
            max_outer: raw.max_outer.unwrap_or(defaults.max_outer),
            inner_tol: raw.inner_tol.unwrap_or(defaults.inner_tol),
            inner_max_iter: raw.inner_max_iter.unwrap_or(defaults.inner_max_iter),
            calibrate: raw.calibrate,
            equalize_lipschitz: raw.equalize_lipschitz,
            line_search: raw.line_search,
            penalize_diagonal: raw.penalize_diagonal,
        };
        if !(options.phi_c > 0.0 && options.phi_c < 1.0) {
            return Err(CliError::Config(format!(
                "phi_c must lie in (0, 1), got {}",
                options.phi_c
            )));
        }
        if options.max_outer == 0 || options.inner_max_iter == 0 {
            return Err(CliError::Config("iteration limits must be positive".into()));
        }
        let bic = match raw.bic.as_deref() {
            None | Some("refitted") => BicKind::Refitted,
            Some("plugin") => BicKind::PlugIn,
            Some(other) => {
                return Err(CliError::Config(format!(
                    "unknown bic \"{other}\"; expected refitted or plugin"
                )))
            }
        };
        let edge_eps = raw.edge_eps.unwrap_or(EDGE_EPS);
        if !(edge_eps > 0.0) {
            return Err(CliError::Config(format!(
                "edge_eps must be positive, got {edge_eps}"
            )));
        }

        Ok(RunConfig {
            input_path: rel(raw.input),
            mean_mode,
            losses,
            lambda,
            options,
            bic,
            edge_eps,
            drop_isolated: raw.drop_isolated,
            output: OutputPaths {
                json: raw.output.json.map(rel),
                dot: raw.output.dot.map(rel),
                path_csv: raw.output.path_csv.map(rel),
            },
        })
    }
}

// ---------------------------------------------------------------- CSV

/// Numeric table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_csv(path: &Path) -> CliResult<DataTable> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_csv(file, &path.display().to_string())
}

/// RFC-4180 input, first row names the columns. Empty or non-numeric fields
/// are rejected with their line and column.
pub fn parse_csv<R: std::io::Read>(reader: R, label: &str) -> CliResult<DataTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{label}: {e}")))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || (names.len() == 1 && names[0].is_empty()) {
        return Err(CliError::Input(format!("{label}: missing header row")));
    }
    let mut seen = std::collections::HashSet::new();
    for n in &names {
        if !seen.insert(n) {
            return Err(CliError::Input(format!(
                "{label}: duplicate column name \"{n}\""
            )));
        }
    }
    let m = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Input(format!("{label}: {e}")))?;
        let line = rec.position().map_or(0, |p| p.line());
        for (k, field) in rec.iter().enumerate() {
            let field = field.trim();
            let at = || format!("{label}: line {line}, column {} (\"{}\")", k + 1, names[k]);
            if field.is_empty() {
                return Err(CliError::Input(format!("{}: missing value", at())));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!("{}: cannot parse \"{field}\" as a number", at()))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "{}: non-finite value \"{field}\"",
                    at()
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Input(format!("{label}: no data rows")));
    }
    Ok(DataTable {
        names,
        values: DMatrix::from_row_slice(rows, m, &data),
    })
}

pub fn write_csv(path: &Path, table: &DataTable) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let wrap = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    w.write_record(&table.names).map_err(wrap)?;
    for i in 0..table.values.nrows() {
        w.write_record(table.values.row(i).iter().map(|v| v.to_string()))
            .map_err(wrap)?;
    }
    w.flush().map_err(io_err(path))
}

// ---------------------------------------------------------------- outputs

fn matrix_json(w: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..w.nrows())
            .map(|i| Value::from(w.row(i).iter().copied().collect::<Vec<_>>()))
            .collect(),
    )
}

/// Upper-triangle entries with `|w| > eps`, in row-major order.
pub fn edge_list(w: &DMatrix<f64>, eps: f64) -> Vec<(usize, usize, f64)> {
    datagen::support(w, eps)
        .into_iter()
        .map(|(i, j)| (i, j, w[(i, j)]))
        .collect()
}

/// Canonical JSON text: sorted keys, shortest round-trip floats, trailing newline.
pub fn to_canonical_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// How a path picked the reported model.
#[derive(Debug, Clone)]
pub struct Selection {
    pub summary: Value,
    /// Replaces the penalized estimate in the report when present.
    pub refit: Option<DMatrix<f64>>,
}

/// Result document for a fit. With a refitted selection, `precision` holds
/// the refit and `penalized_precision` the penalized estimate.
pub fn result_json(
    fit: &FitResult,
    names: &[String],
    eps: f64,
    selection: Option<&Selection>,
) -> Value {
    let w = selection.and_then(|s| s.refit.as_ref()).unwrap_or(fit.w());
    let edges: Vec<Value> = edge_list(w, eps)
        .into_iter()
        .map(|(i, j, v)| json!({"source": names[i], "target": names[j], "weight": v}))
        .collect();
    let poisson: Vec<Value> = fit
        .poisson
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.map(|p| json!({"column": names[k], "a": p.a, "total": p.total})))
        .collect();
    let mut doc = json!({
        "format": FORMAT_VERSION,
        "nodes": names,
        "precision": matrix_json(w),
        "edges": edges,
        "lambda": fit.lambda,
        "phi": fit.state.phi,
        "iterations": fit.iterations(),
        "inner_iterations": fit.state.inner_iterations,
        "converged": fit.converged,
        "objective": fit.objective(),
        "f_trace": fit.state.f_trace,
        "alpha": fit.alpha.iter().copied().collect::<Vec<_>>(),
        "losses": fit.losses.iter().map(|l| l.kind().name()).collect::<Vec<_>>(),
        "poisson": poisson,
        "warnings": fit.warnings,
    });
    doc["estimate"] = Value::from("penalized");
    if let Some(sel) = selection {
        doc["selection"] = sel.summary.clone();
        if sel.refit.is_some() {
            doc["estimate"] = Value::from("refitted");
            doc["penalized_precision"] = matrix_json(fit.w());
        }
    }
    doc
}

/// Reads a precision matrix from a result document (`precision` key) or a
/// bare array of rows. Returns node names when present.
pub fn read_matrix_json(path: &Path) -> CliResult<(DMatrix<f64>, Option<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let bad = |why: &str| CliError::Input(format!("{}: {why}", path.display()));
    let (rows, names) = match &v {
        Value::Array(_) => (&v, None),
        Value::Object(o) => {
            let rows = o
                .get("precision")
                .ok_or_else(|| bad("no \"precision\" matrix"))?;
            let names = o
                .get("nodes")
                .and_then(|n| serde_json::from_value::<Vec<String>>(n.clone()).ok());
            (rows, names)
        }
        _ => return Err(bad("expected an object or an array of rows")),
    };
    let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone())
        .map_err(|_| bad("precision must be an array of numeric rows"))?;
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(bad("precision must be a nonempty square matrix"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok((DMatrix::from_row_slice(m, m, &flat), names))
}

fn dot_id(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

/// Undirected Graphviz graph, each edge once with its `weight`.
pub fn dot_graph(w: &DMatrix<f64>, names: &[String], eps: f64, drop_isolated: bool) -> String {
    let edges = edge_list(w, eps);
    let mut connected = vec![false; names.len()];
    for &(i, j, _) in &edges {
        connected[i] = true;
        connected[j] = true;
    }
    let mut out = String::from("graph iggl {\n");
    for (k, name) in names.iter().enumerate() {
        if !drop_isolated || connected[k] {
            let _ = writeln!(out, "  {};", dot_id(name));
        }
    }
    for (i, j, v) in edges {
        let _ = writeln!(
            out,
            "  {} -- {} [weight=\"{v}\"];",
            dot_id(&names[i]),
            dot_id(&names[j])
        );
    }
    out.push_str("}\n");
    out
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(path, contents).map_err(io_err(path))
}

// ---------------------------------------------------------------- commands

/// Loads data and builds the problem described by a config.
pub fn load_problem(cfg: &RunConfig) -> CliResult<(Vec<String>, FitProblem)> {
    let table = read_csv(&cfg.input_path)?;
    let specs = cfg.losses.resolve(&table.names)?;
    let mut y = table.values;
    for (k, spec) in specs.iter().enumerate() {
        if spec.is_margin() && y.column(k).iter().all(|v| *v == 0.0 || *v == 1.0) {
            y.column_mut(k).apply(|v| *v = 2.0 * *v - 1.0);
        }
    }
    let mean = match &cfg.mean_mode {
        MeanMode::Intercept => MeanModel::InterceptOnly,
        MeanMode::Zero => MeanModel::Given(DMatrix::zeros(y.nrows(), y.ncols())),
        MeanMode::File(p) => {
            let mt = read_csv(p)?;
            if mt.values.shape() != y.shape() {
                return Err(CliError::Input(format!(
                    "{}: mean is {:?}, data is {:?}",
                    p.display(),
                    mt.values.shape(),
                    y.shape()
                )));
            }
            MeanModel::Given(mt.values)
        }
    };
    let name_err = |e: Error| -> CliError {
        let msg = e.to_string();
        let named = (0..table.names.len()).rev().fold(msg, |m, k| {
            m.replace(
                &format!("column {k}"),
                &format!("column \"{}\"", table.names[k]),
            )
        });
        CliError::Input(named)
    };
    let lambda = match cfg.lambda {
        LambdaChoice::Value(v) => v,
        _ => 0.0,
    };
    let problem = FitProblem::from_specs(y, mean, &specs, lambda).map_err(name_err)?;
    let problem = problem.with_options(cfg.options.clone());
    problem.prepare().map_err(name_err)?;
    Ok((table.names, problem))
}

fn grid_for(cfg: &RunConfig, problem: &FitProblem) -> CliResult<Vec<f64>> {
    Ok(match &cfg.lambda {
        LambdaChoice::Value(v) => vec![*v],
        LambdaChoice::Values(v) => v.clone(),
        LambdaChoice::Grid { n_points, ratio } => {
            let prepared = problem.prepare()?;
            let s1 = problem.first_iteration_s(&prepared)?;
            let (grid, warning) = select::lambda_grid(&s1, *n_points, *ratio)?;
            if let Some(w) = warning {
                log::warn!("{w}");
            }
            grid
        }
    })
}

struct PathOutcome {
    path: select::PathResult,
    selection: Selection,
}

fn run_path(cfg: &RunConfig, problem: &FitProblem, mode: PathMode) -> CliResult<PathOutcome> {
    let grid = grid_for(cfg, problem)?;
    let path = select::fit_path_with(problem, &grid, mode, cfg.bic)?;
    let summary = json!({
        "lambdas": path.lambdas,
        "bic": path.bic.iter().map(|b| if b.is_finite() { Value::from(*b) } else { Value::Null }).collect::<Vec<_>>(),
        "selected_index": path.selected_index,
        "mode": match mode { PathMode::WarmStart => "warm", PathMode::Parallel => "parallel" },
        "bic": match cfg.bic { BicKind::Refitted => "refitted", BicKind::PlugIn => "plugin" },
    });
    let refit = path.selected_refit.clone();
    Ok(PathOutcome {
        path,
        selection: Selection { summary, refit },
    })
}

fn write_fit_outputs(
    cfg: &RunConfig,
    fit: &FitResult,
    names: &[String],
    selection: Option<&Selection>,
) -> CliResult<()> {
    let json_path = cfg
        .output
        .json
        .clone()
        .unwrap_or_else(|| PathBuf::from("result.json"));
    write_file(
        &json_path,
        &to_canonical_json(&result_json(fit, names, cfg.edge_eps, selection)),
    )?;
    if let Some(dot) = &cfg.output.dot {
        let w = selection.and_then(|s| s.refit.as_ref()).unwrap_or(fit.w());
        write_file(dot, &dot_graph(w, names, cfg.edge_eps, cfg.drop_isolated))?;
    }
    Ok(())
}

fn convergence_code(fit: &FitResult) -> i32 {
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    if fit.converged {
        EXIT_OK
    } else {
        log::warn!(
            "fit did not converge within {} outer iterations",
            fit.iterations()
        );
        EXIT_NOT_CONVERGED
    }
}

/// Fits at a fixed lambda, or selects one by BIC when the config gives a grid.
pub fn cmd_fit(cfg: &RunConfig) -> CliResult<i32> {
    let (names, problem) = load_problem(cfg)?;
    match cfg.lambda {
        LambdaChoice::Value(_) => {
            let fit = problem.fit()?;
            write_fit_outputs(cfg, &fit, &names, None)?;
            Ok(convergence_code(&fit))
        }
        _ => {
            let out = run_path(cfg, &problem, PathMode::WarmStart)?;
            let fit = out
                .path
                .selected()
                .ok_or_else(|| CliError::Input("every fit on the lambda grid failed".into()))?;
            write_fit_outputs(cfg, fit, &names, Some(&out.selection))?;
            Ok(convergence_code(fit))
        }
    }
}

/// Fits the whole grid, writes the per-lambda table and the selected model.
pub fn cmd_path(cfg: &RunConfig, parallel: bool) -> CliResult<i32> {
    let (names, problem) = load_problem(cfg)?;
    let mode = if parallel {
        PathMode::Parallel
    } else {
        PathMode::WarmStart
    };
    let out = run_path(cfg, &problem, mode)?;
    let table_path = cfg
        .output
        .path_csv
        .clone()
        .unwrap_or_else(|| PathBuf::from("path.csv"));
    let mut table = String::from("lambda,objective,df,bic,converged\n");
    for (i, res) in out.path.fits.iter().enumerate() {
        let lambda = out.path.lambdas[i];
        match res {
            Ok(fit) => {
                let _ = writeln!(
                    table,
                    "{lambda},{},{},{},{}",
                    fit.objective(),
                    select::degrees_of_freedom(fit.w()),
                    out.path.bic[i],
                    fit.converged
                );
            }
            Err(e) => {
                log::warn!("lambda {lambda}: {e}");
                let _ = writeln!(table, "{lambda},,,,false");
            }
        }
    }
    write_file(&table_path, &table)?;
    let fit = out
        .path
        .selected()
        .ok_or_else(|| CliError::Input("every fit on the lambda grid failed".into()))?;
    write_fit_outputs(cfg, fit, &names, Some(&out.selection))?;
    Ok(convergence_code(fit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    Chain,
    Hub,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Bernoulli,
    Poisson,
    /// Column thirds: gaussian, poisson, bernoulli.
    Mixed,
}

impl FamilyArg {
    fn name(self) -> &'static str {
        match self {
            FamilyArg::Gaussian => "gaussian",
            FamilyArg::Bernoulli => "bernoulli",
            FamilyArg::Poisson => "poisson",
            FamilyArg::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub pattern: PatternArg,
    pub m: usize,
    pub n: usize,
    pub family: FamilyArg,
    pub seed: u64,
    pub sparsity: f64,
    pub edge_weight: f64,
    /// Latent mean of count columns.
    pub poisson_mu: f64,
    pub out: PathBuf,
}

/// `--seed` if given, else `IGGL_SEED`, else 0.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::Config(format!("{SEED_ENV}=\"{v}\" is not an unsigned integer"))
        }),
        Err(_) => Ok(0),
    }
}

/// Column families of a simulated data set.
pub fn family_layout(family: FamilyArg, m: usize) -> Vec<&'static str> {
    (0..m)
        .map(|k| match family {
            FamilyArg::Mixed => ["gaussian", "poisson", "bernoulli"][(3 * k / m).min(2)],
            f => f.name(),
        })
        .collect()
}

/// Writes `Y.csv`, `Wtrue.json` and `manifest.json` into `args.out`.
pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<i32> {
    let kind = match args.pattern {
        PatternArg::Chain => PatternKind::Chain,
        PatternArg::Hub => PatternKind::Hub,
        PatternArg::Random => PatternKind::Random {
            sparsity: args.sparsity,
        },
    };
    if args.n < 2 {
        return Err(CliError::Config(format!("need n >= 2, got {}", args.n)));
    }
    let pattern = GraphPattern::new(kind, args.m).edge_weight(args.edge_weight);
    let w = datagen::make_precision(&pattern, args.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let m = args.m;
    let layout = family_layout(args.family, m);
    let mu: Vec<f64> = layout
        .iter()
        .map(|f| {
            if *f == "poisson" {
                args.poisson_mu
            } else {
                0.0
            }
        })
        .collect();
    let y = match args.family {
        FamilyArg::Gaussian => datagen::sample_gaussian(args.n, &w, &mu, args.seed)?,
        FamilyArg::Bernoulli => {
            datagen::sample_glm(args.n, &w, GlmFamily::Bernoulli, &mu, args.seed)?.y
        }
        FamilyArg::Poisson => {
            datagen::sample_glm(args.n, &w, GlmFamily::Poisson, &mu, args.seed)?.y
        }
        FamilyArg::Mixed => {
            // Both samples share the latent draw; only the observation streams differ.
            let bern = datagen::sample_glm(args.n, &w, GlmFamily::Bernoulli, &mu, args.seed)?;
            let pois = datagen::sample_glm(args.n, &w, GlmFamily::Poisson, &mu, args.seed)?;
            DMatrix::from_fn(args.n, m, |i, k| match layout[k] {
                "gaussian" => bern.latent[(i, k)],
                "poisson" => pois.y[(i, k)],
                _ => bern.y[(i, k)],
            })
        }
    };
    let names: Vec<String> = (1..=m).map(|k| format!("x{k}")).collect();
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    write_csv(
        &args.out.join("Y.csv"),
        &DataTable {
            names: names.clone(),
            values: y,
        },
    )?;
    let wtrue = json!({
        "format": FORMAT_VERSION,
        "nodes": names,
        "precision": matrix_json(&w),
        "edges": edge_list(&w, EDGE_EPS)
            .into_iter()
            .map(|(i, j, v)| json!({"source": names[i], "target": names[j], "weight": v}))
            .collect::<Vec<_>>(),
    });
    write_file(&args.out.join("Wtrue.json"), &to_canonical_json(&wtrue))?;
    let pattern_json = match kind {
        PatternKind::Chain => json!({"kind": "chain"}),
        PatternKind::Hub => json!({"kind": "hub"}),
        PatternKind::Random { sparsity } => json!({"kind": "random", "sparsity": sparsity}),
    };
    let manifest = json!({
        "format": FORMAT_VERSION,
        "generator": datagen::GENERATOR_ID,
        "seed": args.seed,
        "n": args.n,
        "m": m,
        "family": args.family.name(),
        "columns": layout,
        "pattern": pattern_json,
        "edge_weight": args.edge_weight,
        "poisson_mu": args.poisson_mu,
        "files": {"data": "Y.csv", "precision": "Wtrue.json"},
    });
    write_file(
        &args.out.join("manifest.json"),
        &to_canonical_json(&manifest),
    )?;
    Ok(EXIT_OK)
}

/// Recovery metrics of an estimate against the truth, as a JSON document.
pub fn cmd_metrics(estimate: &Path, truth: &Path, eps: f64) -> CliResult<Value> {
    let (w_hat, _) = read_matrix_json(estimate)?;
    let (w_true, _) = read_matrix_json(truth)?;
    if w_hat.shape() != w_true.shape() {
        return Err(CliError::Input(format!(
            "estimate is {}x{}, truth is {}x{}",
            w_hat.nrows(),
            w_hat.ncols(),
            w_true.nrows(),
            w_true.ncols()
        )));
    }
    let d = select::bregman_sym(&w_hat, &w_true).map_err(|e| CliError::Input(e.to_string()))?;
    let em = select::edge_metrics(&w_hat, &w_true, eps)?;
    Ok(json!({
        "bregman_sym": d,
        "precision": em.precision,
        "recall": em.recall,
        "f1": em.f1,
        "J*": em.true_support_size,
    }))
}

// ---------------------------------------------------------------- entry point

#[derive(Debug, Parser)]
#[command(
    name = "iggl",
    version,
    about = "Sparse association graphs from arbitrary marginal losses"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model (or BIC-select over a grid) from a JSON config.
    Fit {
        config: PathBuf,
        /// Drop nodes without edges from the DOT export.
        #[arg(long)]
        drop_isolated: bool,
    },
    /// Fit a lambda grid and write the per-lambda table.
    Path {
        config: PathBuf,
        /// Cold-started fits across threads instead of a warm-started sweep.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        drop_isolated: bool,
    },
    /// Generate a synthetic data set with a known precision matrix.
    Simulate {
        #[arg(long, value_enum, default_value = "chain")]
        pattern: PatternArg,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "gaussian")]
        family: FamilyArg,
        /// Overrides IGGL_SEED.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0.1)]
        sparsity: f64,
        #[arg(long, default_value_t = -0.4, allow_hyphen_values = true)]
        edge_weight: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        poisson_mu: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare an estimated precision matrix with the truth.
    Metrics {
        estimate: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value_t = EDGE_EPS)]
        eps: f64,
    },
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<i32> {
    match command {
        Command::Fit {
            config,
            drop_isolated,
        } => {
            let mut cfg = RunConfig::from_path(&config)?;
            cfg.drop_isolated |= drop_isolated;
            cmd_fit(&cfg)
        }
        Command::Path {
            config,
            parallel,
            drop_isolated,
        } => {
            let mut cfg = RunConfig::from_path(&config)?;
            cfg.drop_isolated |= drop_isolated;
            cmd_path(&cfg, parallel)
        }
        Command::Simulate {
            pattern,
            m,
            n,
            family,
            seed,
            sparsity,
            edge_weight,
            poisson_mu,
            out,
        } => {
            let args = SimulateArgs {
                pattern,
                m,
                n,
                family,
                seed: resolve_seed(seed)?,
                sparsity,
                edge_weight,
                poisson_mu,
                out,
            };
            cmd_simulate(&args)
        }
        Command::Metrics {
            estimate,
            truth,
            eps,
        } => {
            let v = cmd_metrics(&estimate, &truth, eps)?;
            print!("{}", to_canonical_json(&v));
            Ok(EXIT_OK)
        }
    }
}
