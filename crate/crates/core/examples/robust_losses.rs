//! The residual-based losses: scale estimation, influence functions and fits
//! on contaminated data.
//!
//! Run with `cargo run --release --example robust_losses`.

use iggl::datagen::{make_precision, sample_gaussian, GraphPattern};
use iggl::linalg::max_abs_diff;
use iggl::losses::robust_scale;
use iggl::{FitProblem, LossSpec, MeanModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> iggl::Result<()> {
    let (n, m) = (300, 12);
    let w_true = make_precision(&GraphPattern::chain(m), 4)?;
    let mut y = sample_gaussian(n, &w_true, &vec![0.0; m], 5)?;

    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for v in y.iter_mut() {
        if rng.gen::<f64>() < 0.05 {
            *v = if rng.gen::<bool>() { 25.0 } else { -25.0 };
        }
    }

    let col: Vec<f64> = y.column(0).iter().copied().collect();
    let mean = col.iter().sum::<f64>() / n as f64;
    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    println!(
        "column 0: standard deviation {sd:.3}, MAD scale {:.3}",
        robust_scale(&col)?
    );

    let specs = [
        LossSpec::Quadratic,
        LossSpec::from_name("huber").unwrap(),
        LossSpec::from_name("tukey").unwrap(),
        LossSpec::from_name("hampel").unwrap(),
    ];
    let residuals = [0.5, 2.0, 5.0, 10.0, 25.0];
    println!("\ngradient at theta - y = {residuals:?}");
    for spec in &specs {
        let loss = spec.resolve(&col)?;
        let g: Vec<String> = residuals
            .iter()
            .map(|r| format!("{:6.3}", loss.grad(*r, 0.0).unwrap()))
            .collect();
        println!(
            "{:<10} {}   ({})",
            spec.to_string(),
            g.join(" "),
            loss.kind()
        );
    }

    // At the default phi the coupling moves Theta by about phi * |Y - M| * W,
    // well inside the linear part of each influence function.
    let lambda = 0.05;
    let base = FitProblem::from_specs(
        y.clone(),
        MeanModel::InterceptOnly,
        &vec![specs[0]; m],
        lambda,
    )?
    .fit()?;
    println!();
    for spec in &specs[1..] {
        let fit =
            FitProblem::from_specs(y.clone(), MeanModel::InterceptOnly, &vec![*spec; m], lambda)?
                .fit()?;
        println!(
            "{:<10} converged {} in {} iterations, max |W - W_quadratic| {:.2e}",
            spec.to_string(),
            fit.converged,
            fit.iterations(),
            max_abs_diff(fit.w(), base.w())
        );
    }
    Ok(())
}
