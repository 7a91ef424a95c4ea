//! A reduced ablation: both objectives, k in {1, 10, 50}, every aggregation
//! rule, two replicates each.

use histoexpr::ablation::{run_ablation, AblationGrid};
use histoexpr::model::TrainConfig;
use histoexpr::preprocess::normalize_dataset;
use histoexpr::synthgen::{generate, SynthConfig, QUERY_LABEL};

fn main() -> histoexpr::error::Result<()> {
    let (raw, truth) = generate(&SynthConfig {
        n_spots: 800,
        n_query: 200,
        n_genes: 60,
        n_zonated: 20,
        d_img: 32,
        seed: 9,
        ..SynthConfig::default()
    })?;
    let ds = normalize_dataset(&raw, 1e4)?;
    let (reference, query) = ds.split_off(QUERY_LABEL)?;

    let grid = AblationGrid {
        ks: vec![1, 10, 50],
        train: TrainConfig {
            batch_size: 128,
            epochs: 15,
            hidden_dims: vec![128],
            embed_dim: 64,
            seed: 100,
            ..TrainConfig::default()
        },
        ..AblationGrid::default()
    };
    let table = run_ablation(&reference, &query, &[truth.zonated_set()], &grid, 2)?;
    println!("{:<9} {:>3} {:<9} zonated r", "objective", "k", "agg");
    for row in &table.rows {
        println!(
            "{:<9} {:>3} {:<9} {}",
            row.cell.objective.to_string(),
            row.cell.k,
            row.cell.aggregation.to_string(),
            row.summary(0)
        );
    }
    let dir = tempfile::tempdir().expect("temp dir");
    table.write_csv(&dir.path().join("table.csv"))?;
    Ok(())
}
