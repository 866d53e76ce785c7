//! Counts from a Poisson graphical model with a log link.
//!
//! Run with `cargo run --release --example poisson_counts`.

use iggl::datagen::{make_precision, sample_glm, GlmFamily, GraphPattern};
use iggl::select::EDGE_EPS;
use iggl::{edge_metrics, FitOptions, FitProblem, LossSpec, MeanModel};

fn main() -> iggl::Result<()> {
    let (n, m) = (500, 8);
    let w_true = make_precision(&GraphPattern::hub(m), 2)?;
    let sample = sample_glm(n, &w_true, GlmFamily::Poisson, &vec![1.0; m], 3)?;
    let mean_count = sample.y.mean();
    println!(
        "mean count {mean_count:.2}, {} clipped log-means",
        sample.clipped
    );

    let fit = FitProblem::from_specs(
        sample.y,
        MeanModel::InterceptOnly,
        &vec![LossSpec::Poisson; m],
        0.1,
    )?
    .with_options(FitOptions {
        max_outer: 5000,
        ..Default::default()
    })
    .fit()?;
    println!(
        "converged {} after {} outer iterations",
        fit.converged,
        fit.iterations()
    );
    for (k, p) in fit.poisson.iter().enumerate().take(3) {
        if let Some(p) = p {
            println!(
                "column {k}: intercept {:.3}, row total {:.0}, scale {:.4}",
                p.a, p.total, p.scale
            );
        }
    }
    let e = edge_metrics(fit.w(), &w_true, EDGE_EPS)?;
    println!(
        "precision {:.2}, recall {:.2}, F1 {:.2}",
        e.precision, e.recall, e.f1
    );
    for w in &fit.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
