//! Precision patterns and reproducible sampling.
//!
//! Run with `cargo run --example simulate`.

use iggl::datagen::{self, make_precision, sample_gaussian, sample_glm, GlmFamily, GraphPattern};
use iggl::linalg::{cross_product, inverse_pd, max_abs_diff};

fn main() -> iggl::Result<()> {
    let m = 8;
    for pattern in [
        GraphPattern::chain(m),
        GraphPattern::hub(m),
        GraphPattern::random(m, 0.2),
    ] {
        let w = make_precision(&pattern, 1)?;
        println!(
            "{:?}: {} edges",
            pattern.kind,
            datagen::support(&w, 1e-12).len()
        );
    }

    let w = make_precision(&GraphPattern::chain(m), 1)?;
    let y = sample_gaussian(20_000, &w, &vec![0.0; m], 9)?;
    let sigma = inverse_pd(&w)?;
    println!(
        "max |S - Sigma| with n = 20000: {:.3}",
        max_abs_diff(&cross_product(&y), &sigma)
    );

    let again = sample_gaussian(20_000, &w, &vec![0.0; m], 9)?;
    println!("same seed, identical draws: {}", y == again);

    let glm = sample_glm(1000, &w, GlmFamily::Poisson, &vec![2.0; m], 9)?;
    println!(
        "poisson counts: mean {:.2}, max {}",
        glm.y.mean(),
        glm.y.max()
    );
    println!("generator: {}", datagen::GENERATOR_ID);
    Ok(())
}
