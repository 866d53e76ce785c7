//! Warm-started regularization path with BIC selection.
//!
//! Run with `cargo run --release --example lambda_path_bic`.

use iggl::datagen::{make_precision, sample_gaussian, GraphPattern};
use iggl::select::{self, BicKind, EDGE_EPS};
use iggl::{edge_metrics, lambda_grid, FitProblem, LossSpec, MeanModel, PathMode};

fn main() -> iggl::Result<()> {
    let (n, m) = (400, 15);
    let w_true = make_precision(&GraphPattern::random(m, 0.15), 21)?;
    let y = sample_gaussian(n, &w_true, &vec![0.0; m], 22)?;
    let problem = FitProblem::from_specs(
        y,
        MeanModel::InterceptOnly,
        &vec![LossSpec::Quadratic; m],
        0.0,
    )?;

    let prepared = problem.prepare()?;
    let s1 = problem.first_iteration_s(&prepared)?;
    let (grid, note) = lambda_grid(&s1, 15, 0.02)?;
    if let Some(note) = note {
        println!("{note}");
    }

    for kind in [BicKind::Refitted, BicKind::PlugIn] {
        let path = select::fit_path_with(&problem, &grid, PathMode::WarmStart, kind)?;
        println!("\n{kind:?} BIC");
        println!("{:>10} {:>5} {:>12}", "lambda", "df", "bic");
        for (i, (lam, fit)) in path.lambdas.iter().zip(&path.fits).enumerate() {
            let df = fit
                .as_ref()
                .map(|f| select::degrees_of_freedom(f.w()))
                .unwrap_or(0);
            let mark = if Some(i) == path.selected_index {
                " <"
            } else {
                ""
            };
            println!("{lam:10.5} {df:5} {:12.3}{mark}", path.bic[i]);
        }
        let w = path.selected_precision().expect("a fit was selected");
        let e = edge_metrics(w, &w_true, EDGE_EPS)?;
        println!(
            "selected: F1 {:.2}, symmetric divergence {:.4}",
            e.f1,
            iggl::bregman_sym(w, &w_true)?
        );
    }
    Ok(())
}
