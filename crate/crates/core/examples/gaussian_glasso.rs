//! Quadratic losses reduce to the graphical lasso on the sample covariance.
//!
//! Run with `cargo run --example gaussian_glasso`.

use iggl::datagen::{make_precision, sample_gaussian, GraphPattern};
use iggl::linalg::{cross_product, max_abs_diff};
use iggl::{solve_ggl, ColumnLoss, FitProblem, GglInstance, LossColumnMap, MeanModel};
use nalgebra::DMatrix;

fn main() -> iggl::Result<()> {
    let (n, m) = (400, 10);
    let w_true = make_precision(&GraphPattern::chain(m), 0)?;
    let y = sample_gaussian(n, &w_true, &vec![0.0; m], 1)?;
    let lambda = 0.05;

    let s = cross_product(&y);
    let direct = solve_ggl(&GglInstance::new(s, lambda)?, None)?;
    println!(
        "graphical lasso: {} sweeps, objective {:.6}",
        direct.iterations, direct.objective
    );

    let fit = FitProblem::new(
        y,
        MeanModel::Given(DMatrix::zeros(n, m)),
        LossColumnMap::uniform(ColumnLoss::quadratic(), m),
        lambda,
    )?
    .fit()?;
    println!(
        "generalized fit: {} outer iterations, inner sweeps {:?}",
        fit.iterations(),
        fit.state.inner_iterations
    );
    println!(
        "max |W_fit - W_glasso| = {:.2e}",
        max_abs_diff(fit.w(), &direct.w)
    );

    println!("\nfirst rows of the estimate:");
    for i in 0..4 {
        let row: Vec<String> = (0..6).map(|j| format!("{:7.3}", fit.w()[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
