//! Regenerates the bundled fixtures:
//!
//! ```text
//! cargo run -p mpse-cli --example make_fixtures
//! ```

use std::path::Path;

use mpse::learners::{ForestParams, LassoParams, LearnerSpec};
use mpse::oracle::DiscreteLaw;
use mpse::simulation::{nlsy_like, nlsy_schema};
use mpse_cli::commands::OracleFixture;
use mpse_cli::config::RunConfig;

/// Seeds and size of the bundled files.
pub const LAW_SEED: u64 = 20;
pub const PANEL_SEED: u64 = 97;
pub const PANEL_N: usize = 1500;

fn main() -> mpse::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::create_dir_all(&dir)?;

    let law = DiscreteLaw::random(2, 2, &[2, 2], LAW_SEED)?;
    let fx = OracleFixture::from_law(law)?;
    std::fs::write(dir.join("oracle_law.json"), serde_json::to_string_pretty(&fx)? + "\n")?;

    nlsy_like(PANEL_N, PANEL_SEED)?.to_csv(dir.join("nlsy_like.csv"))?;
    let cfg = RunConfig {
        input: Some("nlsy_like.csv".into()),
        schema: Some(nlsy_schema()),
        learner: LearnerSpec::super_learner(
            vec![
                LearnerSpec::lasso(LassoParams::default()),
                LearnerSpec::random_forest(ForestParams { n_trees: 50, min_leaf: 10, ..Default::default() }),
            ],
            3,
        ),
        bootstrap: 200,
        seed: 1,
        ..Default::default()
    };
    std::fs::write(dir.join("nlsy_like.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}
