//! Reference index construction and query imputation with each
//! aggregation rule.

use histoexpr::metrics::{pearson_per_gene, set_average};
use histoexpr::model::{train, TrainConfig};
use histoexpr::preprocess::normalize_dataset;
use histoexpr::refindex::{build_index, impute, Aggregation, ImputationConfig, IndexKey};
use histoexpr::synthgen::{generate, SynthConfig, QUERY_LABEL, REFERENCE_LABEL};

fn main() -> histoexpr::error::Result<()> {
    let (raw, truth) = generate(&SynthConfig {
        n_spots: 900,
        n_query: 200,
        n_genes: 80,
        n_zonated: 20,
        d_img: 32,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let ds = normalize_dataset(&raw, 1e4)?;
    let (reference, query) = (ds.select_split(REFERENCE_LABEL)?, ds.select_split(QUERY_LABEL)?);

    let ckpt = train(
        &reference,
        &TrainConfig {
            batch_size: 128,
            epochs: 20,
            hidden_dims: vec![128],
            embed_dim: 64,
            seed: 1,
            ..TrainConfig::default()
        },
    )?;
    let index = build_index(&ckpt, &reference, IndexKey::Image)?;

    let q = ckpt.encode_image(&query.features.select_rows(&[0]))?;
    let nb = index.knn(q.row(0), 5)?;
    println!("nearest references to query 0: {:?}", nb.indices);
    println!("distances: {:.3?}", nb.distances);

    let zonated = truth.zonated_set();
    for (k, aggregation) in [
        (1, Aggregation::Simple),
        (10, Aggregation::Average),
        (50, Aggregation::Average),
        (50, Aggregation::Weighted),
    ] {
        let pred = impute(&index, &ckpt, &query.features, &ImputationConfig { k, aggregation })?;
        let r = pearson_per_gene(&pred, &query.expression)?;
        println!("{aggregation:>8} k={k:<3} zonated mean r = {:.3}", set_average(&r, &zonated)?.mean);
    }
    Ok(())
}
