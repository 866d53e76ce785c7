//! Divergences and edge-recovery scores between precision matrices.
//!
//! Run with `cargo run --example metrics`.

use iggl::datagen::{make_precision, GraphPattern};
use iggl::{bregman, bregman_sym, edge_metrics};
use nalgebra::DMatrix;

fn main() -> iggl::Result<()> {
    let truth = make_precision(&GraphPattern::chain(6), 0)?;
    let identity = DMatrix::<f64>::identity(6, 6);
    let mut perturbed = truth.clone();
    perturbed[(0, 5)] = -0.1;
    perturbed[(5, 0)] = -0.1;
    perturbed[(2, 3)] = 0.0;
    perturbed[(3, 2)] = 0.0;

    println!(
        "D(2I, I)             = {:.6}",
        bregman(&(identity.clone() * 2.0), &identity)?
    );
    println!("D(truth, truth)      = {:.6}", bregman(&truth, &truth)?);
    println!("D(identity, truth)   = {:.6}", bregman(&identity, &truth)?);
    println!("D(truth, identity)   = {:.6}", bregman(&truth, &identity)?);
    println!(
        "D_sym(identity, truth) = {:.6}",
        bregman_sym(&identity, &truth)?
    );

    for (label, est) in [("identity", &identity), ("perturbed", &perturbed)] {
        let e = edge_metrics(est, &truth, 1e-8)?;
        println!(
            "{label:<10} precision {:.3} recall {:.3} F1 {:.3} (true support {})",
            e.precision, e.recall, e.f1, e.true_support_size
        );
    }
    Ok(())
}
