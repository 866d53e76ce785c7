//! The JSON configuration path used by the `iggl` binary, driven from code.
//!
//! Writes a simulated data set and a config into a scratch directory, runs
//! `fit`, and prints the result file.
//!
//! Run with `cargo run --release --example config_run`.

use std::fs;

use iggl::cli::{self, FamilyArg, PatternArg, RunConfig, SimulateArgs};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("iggl-config-run-{}", std::process::id()));
    fs::create_dir_all(&dir)?;

    cli::cmd_simulate(&SimulateArgs {
        pattern: PatternArg::Chain,
        m: 6,
        n: 300,
        family: FamilyArg::Gaussian,
        seed: 3,
        sparsity: 0.1,
        edge_weight: -0.4,
        poisson_mu: 1.0,
        out: dir.join("sim"),
    })?;

    let config = r#"{
        "input": "sim/Y.csv",
        "losses": {"default": "huber", "columns": {"x1": "tukey"}},
        "lambda": {"n_points": 10, "ratio": 0.05},
        "output": {"json": "out/result.json", "dot": "out/graph.dot"}
    }"#;
    let cfg = RunConfig::from_json_str(config, &dir)?;
    let code = cli::cmd_fit(&cfg)?;
    println!("exit code {code}");
    println!("{}", fs::read_to_string(dir.join("out/graph.dot"))?);
    let result = fs::read_to_string(dir.join("out/result.json"))?;
    println!("{}", result.lines().take(12).collect::<Vec<_>>().join("\n"));
    fs::remove_dir_all(&dir)?;
    Ok(())
}
