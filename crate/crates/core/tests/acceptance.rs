//! Acceptance criteria for the core library. Each test writes one
//! `criterion N PASS|FAIL` line to stderr (bypassing output capture) and
//! then asserts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use histoexpr::contrastive::{
    contrastive_loss, loss_with_targets_f64, similarities, smoothed_targets, targets_f64, LossConfig, ObjectiveMode,
};
use histoexpr::math::DenseMatrix;
use histoexpr::metrics::{
    cluster_agreement, ggc, kmeans, moment_preservation, n_clusters, pearson_per_gene, set_average, PerGeneR,
};
use histoexpr::model::{train, ModelCheckpoint, TrainConfig};
use histoexpr::preprocess::{normalize_dataset, GeneSet, GeneSetLabel, PairedDataset};
use histoexpr::refindex::{
    aggregate, build_index, impute, Aggregation, ImputationConfig, IndexKey, Neighbors, ReferenceIndex,
};
use histoexpr::synthgen::{generate, oracle_ceiling, GroundTruth, SynthConfig, QUERY_LABEL};
use histoexpr::ablation::{run_ablation, AblationGrid};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, ok: bool, detail: String) {
    let line = format!("criterion {id} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(ok, "{line}");
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-3;
const FD_TOL: f64 = 1e-4;

/// Central differences of the loss with the targets frozen at their value
/// for the unperturbed inputs.
fn numeric_grads(hv: &[f64], hx: &[f64], b: usize, h: usize, cfg: &LossConfig) -> (Vec<f64>, Vec<f64>) {
    let t = targets_f64(hv, hx, b, h, cfg).unwrap();
    let f = |v: &[f64], x: &[f64]| loss_with_targets_f64(v, x, b, h, &t).unwrap();
    let diff = |which: usize| -> Vec<f64> {
        (0..b * h)
            .map(|i| {
                let (mut v, mut x) = (hv.to_vec(), hx.to_vec());
                let slot = if which == 0 { &mut v } else { &mut x };
                slot[i] += FD_STEP;
                let up = f(&v, &x);
                let slot = if which == 0 { &mut v } else { &mut x };
                slot[i] -= 2.0 * FD_STEP;
                let down = f(&v, &x);
                (up - down) / (2.0 * FD_STEP)
            })
            .collect()
    };
    (diff(0), diff(1))
}

/// `max |a - n| / max |n|` over every coordinate of both gradients.
fn relative_error(analytic: &[f32], numeric: &[f64]) -> (f64, f64) {
    let err = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (&a, &n)| m.max((f64::from(a) - n).abs()));
    let scale = numeric.iter().fold(0.0f64, |m, n| m.max(n.abs()));
    (err, scale)
}

#[test]
fn criterion_1_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for inst in 0..20 {
        let b = [2, 4, 8][inst % 3];
        let h = [3, 16][(inst / 3) % 2];
        let h_v = uniform(&mut rng, b, h, 1.0);
        let h_x = uniform(&mut rng, b, h, 1.0);
        let tau = [0.5f32, 1.0, 2.0][inst % 3];
        for mode in [ObjectiveMode::Smoothed, ObjectiveMode::OneHot] {
            let cfg = LossConfig { temperature: tau, mode };
            let out = contrastive_loss(&h_v, &h_x, &cfg).unwrap();
            let (nv, nx) = numeric_grads(&h_v.to_f64(), &h_x.to_f64(), b, h, &cfg);
            let analytic: Vec<f32> = out.grad_h_v.data().iter().chain(out.grad_h_x.data()).copied().collect();
            let numeric: Vec<f64> = nv.into_iter().chain(nx).collect();
            let (err, scale) = relative_error(&analytic, &numeric);
            worst = worst.max(err / scale.max(f64::MIN_POSITIVE));
            checked += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "gradient vs finite differences",
        worst < FD_TOL && elapsed < Duration::from_secs(10) && checked == 40,
        format!("{checked} checks, max rel err {worst:.2e} (< {FD_TOL:e}), {elapsed:.2?} (< 10s)"),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_hand_derived_loss_values() {
    // Identity embeddings, B = 2: every similarity row is (1, 0), so the
    // softmax is (p, 1 - p) with p = e / (1 + e).
    let p = std::f64::consts::E / (1.0 + std::f64::consts::E);
    let oracle_smoothed = -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
    let oracle_one_hot = -p.ln();
    const SMOOTHED: f64 = 0.5823;
    const ONE_HOT: f64 = 0.3133;
    const TOL: f64 = 1e-3;

    let eye = DenseMatrix::identity(2);
    let loss = |mode| {
        contrastive_loss(&eye, &eye, &LossConfig { temperature: 1.0, mode })
            .unwrap()
            .loss
    };
    let (s, o) = (loss(ObjectiveMode::Smoothed), loss(ObjectiveMode::OneHot));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut single = 0.0f64;
    for _ in 0..10 {
        let v = uniform(&mut rng, 1, 8, 3.0);
        let x = uniform(&mut rng, 1, 8, 3.0);
        single = single.max(contrastive_loss(&v, &x, &LossConfig::default()).unwrap().loss.abs());
    }

    let ok = (oracle_smoothed - SMOOTHED).abs() < TOL
        && (oracle_one_hot - ONE_HOT).abs() < TOL
        && (s - SMOOTHED).abs() < TOL
        && (o - ONE_HOT).abs() < TOL
        && single < 1e-6;
    report(
        2,
        "hand-derived loss values",
        ok,
        format!("B=1 max |loss| {single:.1e}; identity B=2 smoothed {s:.4} (oracle {oracle_smoothed:.4}), one_hot {o:.4} (oracle {oracle_one_hot:.4}), tol {TOL:e}"),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_smoothed_targets_are_row_stochastic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let taus = [0.05f32, 1.0, 20.0];
    let mut worst = 0.0f64;
    for i in 0..100 {
        let b = rng.random_range(1..=32);
        let h = rng.random_range(1..=16);
        let scale = [0.1f32, 1.0, 10.0][i % 3];
        let block = similarities(&uniform(&mut rng, b, h, scale), &uniform(&mut rng, b, h, scale)).unwrap();
        let t = smoothed_targets(&block, taus[i % taus.len()]).unwrap();
        for row in t.iter_rows() {
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    report(
        3,
        "target stochasticity",
        worst < 1e-6,
        format!("100 blocks, tau in {taus:?}, max |row sum - 1| {worst:.1e} (< 1e-6)"),
    );
}

// ---------------------------------------------------------------- 4

fn bare_index(embeddings: DenseMatrix, expression: DenseMatrix) -> ReferenceIndex {
    let genes = (0..expression.cols()).map(|g| format!("g{g}")).collect();
    ReferenceIndex {
        embeddings,
        expression,
        checkpoint_hash: String::new(),
        gene_names: genes,
        key: IndexKey::Image,
        gene_names_source: None,
    }
}

/// Full sort of every reference point by squared distance, then index.
fn brute_force(reference: &DenseMatrix, q: &[f32], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = reference
        .iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let s = r
                .iter()
                .zip(q)
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
                .sum::<f64>();
            (s, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

#[test]
fn criterion_4_knn_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut emb = uniform(&mut rng, 1000, 64, 1.0);
    // exact duplicates exercise the index tie-break
    for i in 0..10 {
        let row = emb.row(i).to_vec();
        emb.row_mut(500 + i).copy_from_slice(&row);
    }
    let mut queries = uniform(&mut rng, 100, 64, 1.0);
    for i in 0..10 {
        let row = emb.row(i).to_vec();
        queries.row_mut(i).copy_from_slice(&row);
    }
    let index = bare_index(emb.clone(), DenseMatrix::zeros(1000, 1));

    let start = Instant::now();
    let mut mismatches = 0usize;
    for k in [1, 10, 50] {
        let got = index.knn_batch(&queries, k).unwrap();
        for (q, nb) in got.iter().enumerate() {
            let want = brute_force(&emb, queries.row(q), k);
            mismatches += nb.indices.iter().zip(&want).filter(|(a, b)| a != b).count();
            mismatches += want.len().abs_diff(nb.indices.len());
        }
    }
    let elapsed = start.elapsed();
    report(
        4,
        "k-NN exactness",
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("1000x64 reference, 100 queries, k in [1, 10, 50]: {mismatches} mismatches, {elapsed:.2?} (< 5s)"),
    );
}

// ---------------------------------------------------------------- 5

fn small_model() -> (PairedDataset, ModelCheckpoint) {
    let (raw, _) = generate(&SynthConfig {
        n_spots: 200,
        n_query: 40,
        n_genes: 30,
        n_zonated: 10,
        d_img: 16,
        seed: 55,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = normalize_dataset(&raw, 1e4).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 3,
        seed: 5,
        hidden_dims: vec![32],
        embed_dim: 16,
        ..TrainConfig::default()
    };
    let ckpt = train(&ds, &cfg).unwrap();
    (ds, ckpt)
}

#[test]
fn criterion_5_imputation_contracts() {
    let (ds, ckpt) = small_model();
    let index = build_index(&ckpt, &ds, IndexKey::Image).unwrap();
    let n_ref = ds.n_spots();
    let dup_rows = [0usize, 17, 123];
    let dup = ds.features.select_rows(&dup_rows);

    let simple = impute(&index, &ckpt, &dup, &ImputationConfig { k: 1, aggregation: Aggregation::Simple }).unwrap();
    let simple_exact = dup_rows
        .iter()
        .enumerate()
        .all(|(q, &r)| simple.row(q) == ds.expression.row(r));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let queries = uniform(&mut rng, 7, ds.features.cols(), 2.0);
    let avg = impute(&index, &ckpt, &queries, &ImputationConfig { k: n_ref, aggregation: Aggregation::Average }).unwrap();
    // column means accumulated independently of the library
    let means: Vec<f64> = (0..ds.n_genes())
        .map(|g| ds.expression.column(g).iter().map(|&v| f64::from(v)).sum::<f64>() / n_ref as f64)
        .collect();
    let avg_err = avg
        .iter_rows()
        .flat_map(|row| row.iter().zip(&means).map(|(&p, m)| (f64::from(p) - m).abs()))
        .fold(0.0f64, f64::max);

    let weighted = impute(&index, &ckpt, &dup, &ImputationConfig { k: 5, aggregation: Aggregation::Weighted }).unwrap();
    let w_err = dup_rows
        .iter()
        .enumerate()
        .flat_map(|(q, &r)| {
            weighted
                .row(q)
                .iter()
                .zip(ds.expression.row(r))
                .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0f64, f64::max);

    report(
        5,
        "imputation contracts",
        simple_exact && avg_err < 1e-5 && w_err < 1e-6,
        format!("simple exact on duplicates: {simple_exact}; average k=n_ref max err {avg_err:.1e} (< 1e-5); weighted zero-distance max err {w_err:.1e} (< 1e-6)"),
    );
}

// ---------------------------------------------------------------- 6 and 7

const BENCH_SEED: u64 = 1;

struct Bench {
    reference: PairedDataset,
    query: PairedDataset,
    zonated: GeneSet,
    ceiling: f64,
}

/// 2000 reference and 500 query spots, 200 genes, 50 zonated, default noise.
fn bench() -> Bench {
    let cfg = SynthConfig {
        n_spots: 2500,
        n_query: 500,
        n_genes: 200,
        n_zonated: 50,
        seed: BENCH_SEED,
        ..SynthConfig::default()
    };
    let (raw, truth): (PairedDataset, GroundTruth) = generate(&cfg).unwrap();
    let ds = normalize_dataset(&raw, 1e4).unwrap();
    let zonated = truth.zonated_set();
    // the ceiling uses every spot; binned means over 500 queries alone are
    // too noisy to bound a model fit on 2000
    let ceiling = oracle_ceiling(&truth, &ds, &zonated).unwrap();
    let (reference, query) = ds.split_off(QUERY_LABEL).unwrap();
    assert_eq!((reference.n_spots(), query.n_spots()), (2000, 500));
    Bench {
        reference,
        query,
        zonated,
        ceiling,
    }
}

fn bench_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 128,
        epochs: 40,
        seed,
        ..TrainConfig::default()
    }
}

fn zonated_r(pred: &DenseMatrix, b: &Bench) -> f64 {
    set_average(&pearson_per_gene(pred, &b.query.expression).unwrap(), &b.zonated)
        .unwrap()
        .mean
}

#[test]
fn criterion_6_end_to_end_synthetic_recovery() {
    let start = Instant::now();
    let b = bench();
    let ckpt = train(&b.reference, &bench_train(BENCH_SEED)).unwrap();
    let index = build_index(&ckpt, &b.reference, IndexKey::Image).unwrap();
    let pred = impute(&index, &ckpt, &b.query.features, &ImputationConfig::default()).unwrap();
    let r = zonated_r(&pred, &b);

    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SEED ^ 0x5eed);
    let random: Vec<Neighbors> = (0..b.query.n_spots())
        .map(|_| Neighbors {
            indices: sample(&mut rng, b.reference.n_spots(), 50).into_vec(),
            distances: vec![0.0; 50],
        })
        .collect();
    let shuffled = aggregate(&b.reference.expression, &random, Aggregation::Average).unwrap();
    let r_shuffled = zonated_r(&shuffled, &b);

    let m = moment_preservation(&pred, &b.query.expression).unwrap();
    let ratios: Vec<f64> = b.zonated.indices.iter().map(|&g| m.var_ratio[g]).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let elapsed = start.elapsed();

    let a = r >= 0.6 * b.ceiling;
    let bb = r - r_shuffled >= 0.3;
    let c = min_ratio > 0.05;
    let t = elapsed < Duration::from_secs(300);
    report(
        6,
        "end-to-end synthetic recovery",
        a && bb && c && t,
        format!(
            "(a) r {r:.3} >= 0.6 x ceiling {:.3} = {:.3}: {a}; (b) r - shuffled {r_shuffled:.3} = {:.3} >= 0.3: {bb}; \
             (c) zonated var_ratio min {min_ratio:.3} mean {mean_ratio:.3} > 0.05: {c}; {elapsed:.1?} (< 300s)",
            b.ceiling,
            0.6 * b.ceiling,
            r - r_shuffled
        ),
    );
}

#[test]
fn criterion_7_average_beats_simple_in_every_replicate() {
    let b = bench();
    let grid = AblationGrid {
        objectives: vec![ObjectiveMode::Smoothed],
        ks: vec![50],
        aggregations: vec![Aggregation::Simple, Aggregation::Average],
        train: bench_train(BENCH_SEED),
        ..AblationGrid::default()
    };
    let table = run_ablation(&b.reference, &b.query, std::slice::from_ref(&b.zonated), &grid, 3).unwrap();
    let avg = &table.row(ObjectiveMode::Smoothed, 50, Aggregation::Average).unwrap().values[0];
    let simple = &table.row(ObjectiveMode::Smoothed, 1, Aggregation::Simple).unwrap().values[0];
    let ok = avg.len() == 3 && avg.iter().zip(simple).all(|(a, s)| a > s);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    report(
        7,
        "ablation ordering",
        ok,
        format!("zonated r per replicate: average k=50 [{}] vs simple k=1 [{}]", fmt(avg), fmt(simple)),
    );
}

// ---------------------------------------------------------------- 8

fn cli(args: &[&str]) {
    let mut full = vec!["histoexpr", "--workers", "1"];
    full.extend_from_slice(args);
    assert_eq!(histoexpr::cli::run(full), 0, "command failed: {args:?}");
}

fn snapshot(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            snapshot(&path, root, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().display().to_string();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

fn pipeline(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let p = |rel: &str| root.join(rel).display().to_string();
    std::fs::write(
        root.join("synth.toml"),
        "n_spots = 300\nn_query = 60\nn_genes = 40\nn_zonated = 10\nd_img = 16\nseed = 8\n",
    )
    .unwrap();
    cli(&["synth", "--config", &p("synth.toml"), "--out", &p("synth")]);
    cli(&["preprocess", "--in", &p("synth/all/manifest.toml"), "--hvg", "20", "--out", &p("pp")]);
    cli(&[
        "train", "--data", &p("pp/manifest.toml"), "--split", "reference", "--batch-size", "64", "--epochs", "3",
        "--seed", "7", "--hidden", "32", "--embed-dim", "16", "--out", &p("model.blpc"),
    ]);
    cli(&[
        "index", "--ckpt", &p("model.blpc"), "--reference", &p("pp/manifest.toml"), "--split", "reference", "--out",
        &p("ref.blix"),
    ]);
    cli(&[
        "impute", "--ckpt", &p("model.blpc"), "--index", &p("ref.blix"), "--queries", &p("pp/manifest.toml"),
        "--split", "query", "--k", "10", "--out", &p("pred.bmat"),
    ]);
    cli(&[
        "eval", "--pred", &p("pred.bmat"), "--truth", &p("pp/manifest.toml"), "--split", "query", "--seed", "3",
        "--out", &p("eval"),
    ]);
    let mut files = BTreeMap::new();
    snapshot(root, root, &mut files);
    files
}

#[test]
fn criterion_8_pipeline_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    std::fs::create_dir(&root).unwrap();
    let first = pipeline(&root);
    std::fs::remove_dir_all(&root).unwrap();
    std::fs::create_dir(&root).unwrap();
    let second = pipeline(&root);

    let binary = |name: &String| [".bmat", ".blpc", ".blix"].iter().any(|e| name.ends_with(e));
    let n_binary = first.keys().filter(|k| binary(k)).count();
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let has_all = ["model.blpc", "ref.blix", "pred.bmat"].iter().all(|f| first.contains_key(*f));
    report(
        8,
        "pipeline determinism",
        differing.is_empty() && has_all && n_binary >= 5,
        format!(
            "{} files ({n_binary} BMAT/BLPC/BLIX) compared across two runs at workers=1; differing: {differing:?}",
            first.len()
        ),
    );
}

// ---------------------------------------------------------------- 9

fn col(values: &[f32]) -> DenseMatrix {
    DenseMatrix::new(values.len(), 1, values.to_vec()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn criterion_9_metrics_suite() {
    let mut failures: Vec<&str> = Vec::new();
    let mut check = |ok: bool, name: &'static str| {
        if !ok {
            failures.push(name);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(9);

    // pearson_per_gene
    let t = col(&[1.0, 3.0, 2.0, 5.0, 4.0]);
    check(close(pearson_per_gene(&t, &t).unwrap().r[0], 1.0, 1e-12), "r = 1 for identical columns");
    let neg = t.map(|v| -v);
    check(close(pearson_per_gene(&neg, &t).unwrap().r[0], -1.0, 1e-12), "r = -1 for negated column");
    let flat = pearson_per_gene(&t, &col(&[2.0; 5])).unwrap();
    check(flat.r[0] == 0.0 && !flat.valid[0], "constant truth gives flagged r = 0");

    // set_average
    let r = PerGeneR {
        r: vec![0.2, 0.4, 0.9],
        valid: vec![true, true, false],
    };
    let set = |idx: Vec<usize>| GeneSet::new(GeneSetLabel::Custom("s".into()), idx, 3).unwrap();
    check(close(set_average(&r, &set(vec![0, 1])).unwrap().mean, 0.3, 1e-12), "set average of 0.2 and 0.4");
    check(close(set_average(&r, &set(vec![1])).unwrap().mean, 0.4, 1e-12), "singleton set average");
    let excl = set_average(&r, &set(vec![0, 1, 2])).unwrap();
    check(close(excl.mean, 0.3, 1e-12) && excl.n_invalid == 1, "invalid gene excluded from set average");
    check(set_average(&r, &set(vec![2])).is_err(), "empty effective set errors");

    // ggc
    let dupe = DenseMatrix::from_rows(&[[1.0f32, 1.0, 0.0], [2.0, 2.0, 1.0], [4.0, 4.0, 0.5]]).unwrap();
    let g = ggc(&dupe).unwrap();
    check(close(f64::from(g.matrix.get(0, 1)), 1.0, 1e-6), "duplicated columns correlate at 1");
    let single = ggc(&col(&[1.0, 2.0, 4.0])).unwrap();
    check(single.matrix.shape() == (1, 1) && single.matrix.get(0, 0) == 1.0, "ggc of one gene is [[1]]");
    let noise = uniform(&mut rng, 10_000, 2, 1.0);
    let gn = ggc(&noise).unwrap();
    check(f64::from(gn.matrix.get(0, 1)).abs() < 0.05, "independent noise columns |r| < 0.05");

    // moment_preservation
    let truth = DenseMatrix::from_rows(&[[1.0f32, 10.0], [2.0, 30.0], [6.0, 20.0], [3.0, 0.0]]).unwrap();
    let same = moment_preservation(&truth, &truth).unwrap();
    check(
        same.mean_ratio.iter().chain(&same.var_ratio).all(|&v| close(v, 1.0, 1e-9)),
        "pred = truth gives unit ratios",
    );
    let means = truth.column_means();
    let mean_pred = DenseMatrix::from_f64(4, 2, &[means.clone(), means.clone(), means.clone(), means].concat()).unwrap();
    let mp = moment_preservation(&mean_pred, &truth).unwrap();
    check(
        mp.var_ratio.iter().all(|&v| v == 0.0) && mp.mean_ratio.iter().all(|&v| close(v, 1.0, 1e-6)),
        "mean predictor gives var_ratio 0 and mean_ratio 1",
    );
    let doubled = moment_preservation(&truth.map(|v| 2.0 * v), &truth).unwrap();
    check(
        doubled.mean_ratio.iter().all(|&v| close(v, 2.0, 1e-6)) && doubled.var_ratio.iter().all(|&v| close(v, 4.0, 1e-6)),
        "doubling gives mean_ratio 2 and var_ratio 4",
    );

    // kmeans
    let mut blobs = Vec::new();
    let mut truth_labels = Vec::new();
    for i in 0..60 {
        let c = if i % 2 == 0 { 0.0f32 } else { 20.0 };
        blobs.push([c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)]);
        truth_labels.push(i % 2);
    }
    let blobs = DenseMatrix::from_rows(&blobs).unwrap();
    let labels = kmeans(&blobs, 2, 1).unwrap();
    check(cluster_agreement(&labels, &truth_labels).unwrap().ari == 1.0, "two blobs recovered up to permutation");
    check(kmeans(&blobs, 1, 1).unwrap().iter().all(|&l| l == 0), "k = 1 labels everything 0");
    let own = kmeans(&blobs, 60, 1).unwrap();
    check(n_clusters(&own) == 60, "k = n puts each point in its own cluster");
    check(kmeans(&blobs, 0, 1).is_err() && kmeans(&blobs, 61, 1).is_err(), "k out of range errors");

    // cluster_agreement
    let a = [0usize, 0, 1, 1, 2, 2, 2];
    let ident = cluster_agreement(&a, &a).unwrap();
    check(close(ident.ari, 1.0, 1e-12) && close(ident.nmi, 1.0, 1e-12), "identical labelings score 1");
    let permuted: Vec<usize> = a.iter().map(|&l| [2, 0, 1][l]).collect();
    let perm = cluster_agreement(&a, &permuted).unwrap();
    check(close(perm.ari, 1.0, 1e-12) && close(perm.nmi, 1.0, 1e-12), "permuted labels score 1");
    check(cluster_agreement(&[0; 7], &a).unwrap().ari.abs() < 1e-12, "all-same vs partition gives ARI 0");
    let x: Vec<usize> = (0..1000).map(|_| rng.random_range(0..5)).collect();
    let y: Vec<usize> = (0..1000).map(|_| rng.random_range(0..5)).collect();
    let rand_ari = cluster_agreement(&x, &y).unwrap().ari;
    check(rand_ari.abs() < 0.05, "independent random labelings |ARI| < 0.05");
    check(cluster_agreement(&x, &y[..999]).is_err(), "length mismatch errors");

    report(
        9,
        "metrics unit suite",
        failures.is_empty(),
        format!("random-labeling ARI {rand_ari:.4}; failed: {failures:?}"),
    );
}
