//! Binary data under the logistic loss and two margin losses.
//!
//! Margin losses take labels in {-1, +1}. The logistic loss has no finite
//! minimizer per entry, so its outer loop creeps and usually hits the
//! iteration cap.
//!
//! Run with `cargo run --release --example binary_margin`.

use iggl::datagen::{make_precision, sample_glm, GlmFamily, GraphPattern};
use iggl::select::EDGE_EPS;
use iggl::{edge_metrics, FitOptions, FitProblem, LossSpec, MeanModel};

fn main() -> iggl::Result<()> {
    let (n, m) = (800, 8);
    let w_true = make_precision(&GraphPattern::chain(m).edge_weight(-0.6), 7)?;
    let y01 = sample_glm(n, &w_true, GlmFamily::Bernoulli, &vec![0.0; m], 8)?.y;
    let pm = y01.map(|v| 2.0 * v - 1.0);

    for (spec, y) in [
        (LossSpec::Bernoulli, &y01),
        (LossSpec::from_name("huberized_hinge").unwrap(), &pm),
        (LossSpec::Lorenz, &pm),
    ] {
        let fit =
            FitProblem::from_specs(y.clone(), MeanModel::InterceptOnly, &vec![spec; m], 0.02)?
                .with_options(FitOptions {
                    max_outer: 1000,
                    ..Default::default()
                })
                .fit()?;
        let e = edge_metrics(fit.w(), &w_true, EDGE_EPS)?;
        println!(
            "{:<16} converged {:5} after {:4} iterations  recall {:.2}  precision {:.2}",
            spec.to_string(),
            fit.converged,
            fit.iterations(),
            e.recall,
            e.precision
        );
    }
    Ok(())
}
