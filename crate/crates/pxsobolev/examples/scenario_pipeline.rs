//! Run a bundled scenario programmatically: parse, validate, execute and
//! show the artifacts it produced.

use pxsobolev::scenario::{bundled_scenario, run_scenario, ScenarioConfig};

fn main() -> pxsobolev::Result<()> {
    let text = bundled_scenario("constant-exponent-sanity").expect("bundled scenario");
    let cfg = ScenarioConfig::parse(text)?;
    cfg.validate()?;
    let out = std::env::temp_dir().join("pxsobolev_scenario_example");
    let summary = run_scenario(&cfg, &out, cfg.seed)?;
    for line in &summary.stages {
        println!("{line}");
    }
    println!("artifacts:");
    for a in &summary.artifacts {
        println!("  {}", a.display());
    }
    Ok(())
}
