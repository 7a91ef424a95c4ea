//! End-to-end recovery on synthetic data: 2000 reference and 500 query
//! spots, 200 genes of which 50 are zonated. Compares retrieval against the
//! latent-oracle ceiling and a random-neighbor baseline.
//!
//! Run with `--release`; pass a seed as the first argument.

use std::time::Instant;

use histoexpr::metrics::{moment_preservation, pearson_per_gene, set_average};
use histoexpr::model::{train, TrainConfig};
use histoexpr::preprocess::normalize_dataset;
use histoexpr::refindex::{aggregate, build_index, impute, Aggregation, ImputationConfig, IndexKey, Neighbors};
use histoexpr::synthgen::{generate, oracle_ceiling, SynthConfig, QUERY_LABEL};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> histoexpr::error::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let start = Instant::now();

    let (raw, truth) = generate(&SynthConfig { seed, ..SynthConfig::default() })?;
    let ds = normalize_dataset(&raw, 1e4)?;
    let zonated = truth.zonated_set();
    let ceiling = oracle_ceiling(&truth, &ds, &zonated)?;
    let (reference, query) = ds.split_off(QUERY_LABEL)?;

    let ckpt = train(
        &reference,
        &TrainConfig {
            batch_size: 128,
            epochs: 40,
            seed,
            ..TrainConfig::default()
        },
    )?;
    println!(
        "trained in {:.1?}: loss {:.3} -> {:.3}",
        start.elapsed(),
        ckpt.loss_trace[0],
        ckpt.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    let index = build_index(&ckpt, &reference, IndexKey::Image)?;
    let cfg = ImputationConfig::default();
    let pred = impute(&index, &ckpt, &query.features, &cfg)?;
    let r = set_average(&pearson_per_gene(&pred, &query.expression)?, &zonated)?.mean;
    let (_, var_ratio) = moment_preservation(&pred, &query.expression)?.summarize(&zonated.indices);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random: Vec<Neighbors> = (0..query.n_spots())
        .map(|_| Neighbors {
            indices: sample(&mut rng, reference.n_spots(), cfg.k).into_vec(),
            distances: vec![0.0; cfg.k],
        })
        .collect();
    let shuffled = aggregate(&reference.expression, &random, Aggregation::Average)?;
    let r_shuffled = set_average(&pearson_per_gene(&shuffled, &query.expression)?, &zonated)?.mean;

    println!("oracle ceiling (zonated) {ceiling:.3}");
    println!("retrieval k=50 average   {r:.3} ({:.0}% of ceiling)", 100.0 * r / ceiling);
    println!("random neighbors         {r_shuffled:.3}");
    println!("variance ratio (zonated) {:.3}", var_ratio.unwrap_or(0.0));
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
