//! Scoring three kinds of prediction against the same measurements: a noisy
//! copy, a scaled copy and the column-mean predictor.

use histoexpr::math::DenseMatrix;
use histoexpr::metrics::{moment_preservation, pearson_per_gene, EvalConfig, MetricsReport};
use histoexpr::preprocess::{normalize_dataset, resolve_gene_set};
use histoexpr::synthgen::{generate, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> histoexpr::error::Result<()> {
    let (raw, _) = generate(&SynthConfig {
        n_spots: 500,
        n_query: 0,
        n_genes: 60,
        n_zonated: 20,
        seed: 2,
        ..SynthConfig::default()
    })?;
    let ds = normalize_dataset(&raw, 1e4)?;
    let truth = &ds.expression;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let jitter: Vec<f32> = truth.data().iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    let noisy = DenseMatrix::new(truth.rows(), truth.cols(), jitter)?;
    let scaled = truth.map(|v| 2.0 * v);
    let means = truth.column_means();
    let flat: Vec<f64> = (0..truth.rows()).flat_map(|_| means.iter().copied()).collect();
    let mean_pred = DenseMatrix::from_f64(truth.rows(), truth.cols(), &flat)?;

    for (name, pred) in [("noisy", &noisy), ("scaled", &scaled), ("mean", &mean_pred)] {
        let r = pearson_per_gene(pred, truth)?;
        let m = moment_preservation(pred, truth)?;
        let all: Vec<usize> = (0..truth.cols()).collect();
        let (mr, vr) = m.summarize(&all);
        println!(
            "{name:>6}: invalid r = {:>2}, mean ratio = {:.3}, var ratio = {:.3}",
            r.n_invalid(),
            mr.unwrap_or(f64::NAN),
            vr.unwrap_or(f64::NAN)
        );
    }

    let (heg, _) = resolve_gene_set("heg", truth, &ds.gene_names)?;
    let report = MetricsReport::evaluate(&noisy, truth, &ds.gene_names, &[heg], &EvalConfig { clusters: 6, seed: 1 })?;
    let c = &report.clustering;
    println!(
        "noisy copy: HEG r = {:.3}, ARI = {:.3}, NMI = {:.3}",
        report.sets[0].average.mean, c.agreement.ari, c.agreement.nmi
    );
    let dir = tempfile::tempdir().expect("temp dir");
    report.write(dir.path())?;
    println!("{}", report.summary_toml()?);
    Ok(())
}
