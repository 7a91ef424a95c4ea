//! Command-line pipeline driver behind the `histoexpr` binary.
//!
//! Every failure prints one line to stderr of the form
//! `error kind=<kind> code=<code>: <message>` and exits with the code from
//! [`Error::exit_code`]; usage errors exit with 2.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Serialize;

use crate::ablation::{run_ablation, AblationGrid};
use crate::contrastive::ObjectiveMode;
use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::io::table::{load_matrix, save_matrix};
use crate::io::{sha256_file, write_atomic, write_lines, Manifest, MatrixFormat, Provenance};
use crate::math::{with_workers, DenseMatrix};
use crate::metrics::{EvalConfig, MetricsReport, DEFAULT_CLUSTERS};
use crate::model::{train, ModelCheckpoint, TrainConfig};
use crate::preprocess::{preprocess_slices, resolve_gene_set, select_heg, DEFAULT_SET_SIZE, DEFAULT_TARGET_SUM};
use crate::refindex::{build_index, impute, Aggregation, ImputationConfig, IndexKey, ReferenceIndex};
use crate::synthgen::{generate, SynthConfig, QUERY_LABEL, REFERENCE_LABEL};

pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "histoexpr", version, about = "Joint image/expression embedding and retrieval-based expression imputation")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with known zonation.
    Synth(SynthArgs),
    /// Normalize slices and keep the union of their variable genes.
    Preprocess(PreprocessArgs),
    /// Train the image and expression encoders.
    Train(TrainArgs),
    /// Embed reference spots into a searchable index.
    Index(IndexArgs),
    /// Predict expression for query patches.
    Impute(ImputeArgs),
    /// Score predictions against measured expression.
    Eval(EvalArgs),
    /// Sweep objective, k and aggregation over replicates.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML generator configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "bmat", value_parser = parse_format)]
    pub format: MatrixFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Input manifest; repeat once per slice.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    /// Variable genes per slice; 0 keeps every gene.
    #[arg(long, default_value_t = 1000)]
    pub hvg: usize,
    #[arg(long, default_value_t = DEFAULT_TARGET_SUM)]
    pub target_sum: f64,
    #[arg(long, default_value = "bmat", value_parser = parse_format)]
    pub format: MatrixFormat,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Train only on spots with this split label.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f32,
    #[arg(long, default_value = "smoothed")]
    pub objective: ObjectiveMode,
    #[arg(long)]
    pub seed: u64,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "512")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f32,
    /// Record the creation time in the checkpoint header.
    #[arg(long)]
    pub stamp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value = "image")]
    pub key: IndexKey,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value = "average")]
    pub agg: Aggregation,
    /// Output matrix; `.csv` writes CSV, anything else BMAT.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    /// Manifest holding the measured expression.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Gene sets: `heg`, `hvg`, `mg` or files of gene names.
    #[arg(long, value_delimiter = ',', default_value = "heg,hvg")]
    pub sets: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_CLUSTERS)]
    pub clusters: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Manifest with reference and query split labels.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML grid; see `AblationGrid`.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub replicates: usize,
    /// Overrides `train.seed` in the grid.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_format(s: &str) -> std::result::Result<MatrixFormat, String> {
    match s {
        "bmat" => Ok(MatrixFormat::Bmat),
        "csv" => Ok(MatrixFormat::Csv),
        other => Err(format!("unknown format {other:?} (bmat, csv)")),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();

    let workers = cli.workers;
    let outcome = if workers == 0 {
        execute(cli.command)
    } else {
        with_workers(workers, move || execute(cli.command)).and_then(|r| r)
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error kind={} code={}: {msg}", e.kind(), e.exit_code());
            e.exit_code()
        }
    }
}

pub fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train_cmd(a),
        Command::Index(a) => index(a),
        Command::Impute(a) => impute_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Seeds must come from a flag or an explicit config entry, never a default.
fn require_seed(table: &toml::Table, path: &[&str], flag: Option<u64>, what: &str) -> Result<()> {
    let mut node = Some(table);
    for key in &path[..path.len() - 1] {
        node = node.and_then(|t| t.get(*key)).and_then(|v| v.as_table());
    }
    let present = node.is_some_and(|t| t.contains_key(path[path.len() - 1]));
    if present || flag.is_some() {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "{what} needs an explicit seed ({} in the config or --seed)",
            path.join(".")
        )))
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(what: &'static str, text: &str) -> Result<(T, toml::Table)> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::format(what, e.to_string()))?;
    let value = toml::from_str(text).map_err(|e| Error::format(what, e.to_string()))?;
    Ok((value, table))
}

fn load_data(manifest: &Path, split: Option<&str>) -> Result<(Manifest, PairedDataset)> {
    let m = Manifest::load(manifest)?;
    let ds = m.load_dataset()?;
    let ds = match split {
        Some(label) => ds.select_split(label)?,
        None => ds,
    };
    Ok((m, ds))
}

fn synth(a: SynthArgs) -> Result<()> {
    let (mut cfg, table): (SynthConfig, _) = parse_toml("synth config", &read_text(&a.config)?)?;
    require_seed(&table, &["seed"], a.seed, "synth")?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (ds, truth) = generate(&cfg)?;
    let prov = Provenance {
        source: Some("synth".into()),
        ..Provenance::default()
    };
    Manifest::write_dataset(&a.out.join("all"), &ds, prov.clone(), a.format)?;
    if ds.split.is_some() {
        Manifest::write_dataset(&a.out.join(REFERENCE_LABEL), &ds.select_split(REFERENCE_LABEL)?, prov.clone(), a.format)?;
        Manifest::write_dataset(&a.out.join(QUERY_LABEL), &ds.select_split(QUERY_LABEL)?, prov, a.format)?;
    }

    let tdir = a.out.join("truth");
    std::fs::create_dir_all(&tdir).map_err(|e| Error::io(&tdir, e))?;
    let ext = a.format.extension();
    let z = DenseMatrix::from_f64(truth.z.len(), 1, &truth.z)?;
    save_matrix(&tdir.join(format!("latent.{ext}")), &z)?;
    save_matrix(&tdir.join(format!("clean.{ext}")), &truth.clean)?;
    let rows: Vec<Vec<String>> = (0..truth.loadings.len())
        .map(|g| {
            vec![
                ds.gene_names[g].clone(),
                truth.loadings[g].to_string(),
                truth.baselines[g].to_string(),
                truth.zonated.contains(&g).to_string(),
            ]
        })
        .collect();
    crate::io::table::write_records(&tdir.join("genes.csv"), &["gene", "loading", "baseline", "zonated"], &rows)?;
    let zonated: Vec<String> = truth.zonated.iter().map(|&g| ds.gene_names[g].clone()).collect();
    write_lines(&tdir.join("zonated_genes.txt"), &zonated)?;
    let echo = toml::to_string(&cfg).map_err(|e| Error::format("synth config", e.to_string()))?;
    write_atomic(&tdir.join("config.toml"), echo.as_bytes())?;
    println!(
        "spots={} genes={} zonated={} out={}",
        ds.n_spots(),
        ds.n_genes(),
        truth.zonated.len(),
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut slices = Vec::new();
    let mut batch_corrected = true;
    for p in &a.inputs {
        let m = Manifest::load(p)?;
        if m.provenance.normalized {
            return Err(Error::validation(format!("{} is already normalized", p.display())));
        }
        batch_corrected &= m.provenance.batch_corrected;
        slices.push(m.load_dataset()?);
    }
    let out = preprocess_slices(&slices, a.hvg, a.target_sum)?;
    let prov = Provenance {
        normalized: true,
        target_sum: Some(a.target_sum),
        batch_corrected,
        source: Some("preprocess".into()),
        hvg_per_slice: (a.hvg > 0).then_some(out.hvg_per_slice),
    };
    Manifest::write_dataset(&a.out, &out.dataset, prov, a.format)?;
    let ds = &out.dataset;
    write_lines(&a.out.join("hvg_genes.txt"), &ds.gene_names)?;
    let heg = select_heg(&ds.expression, DEFAULT_SET_SIZE.min(ds.n_genes()))?;
    write_lines(&a.out.join("heg.txt"), &heg.names(&ds.gene_names))?;
    println!("spots={} genes={} slices={}", ds.n_spots(), ds.n_genes(), slices.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (m, ds) = load_data(&a.data, a.split.as_deref())?;
    if !m.provenance.normalized {
        log::warn!("{} is not marked normalized; training on raw values", a.data.display());
    }
    let cfg = TrainConfig {
        batch_size: a.batch_size,
        learning_rate: a.lr,
        epochs: a.epochs,
        temperature: a.tau,
        objective: a.objective,
        seed: a.seed,
        weight_decay: a.weight_decay,
        hidden_dims: a.hidden,
        embed_dim: a.embed_dim,
    };
    let mut ckpt = train(&ds, &cfg)?;
    if a.stamp {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ckpt.created = Some(format!("unix:{secs}"));
    }
    ckpt.save(&a.out)?;
    for w in &ckpt.warnings {
        eprintln!("warning: {w}");
    }
    println!("content_hash={}", ckpt.content_hash());
    Ok(())
}

fn index(a: IndexArgs) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&a.ckpt)?;
    let (_, ds) = load_data(&a.reference, a.split.as_deref())?;
    let mut idx = build_index(&ckpt, &ds, a.key)?;
    idx.gene_names_source = Some(a.reference.display().to_string());
    idx.save(&a.out)?;
    println!("n_ref={} dim={} checkpoint={}", idx.len(), idx.dim(), idx.checkpoint_hash);
    Ok(())
}

#[derive(Serialize)]
struct ImputeProvenance {
    k: usize,
    aggregation: Aggregation,
    n_queries: usize,
    n_ref: usize,
    checkpoint_hash: String,
    index_sha256: String,
    queries: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

fn impute_cmd(a: ImputeArgs) -> Result<()> {
    let idx = ReferenceIndex::load(&a.index)?;
    let cfg = ImputationConfig {
        k: a.k,
        aggregation: a.agg,
    };
    cfg.validate(idx.len())?;
    let ckpt = ModelCheckpoint::load(&a.ckpt)?;
    let (_, ds) = load_data(&a.queries, a.split.as_deref())?;
    let pred = impute(&idx, &ckpt, &ds.features, &cfg)?;
    let csv = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if csv {
        write_atomic(&a.out, &crate::io::table::matrix_to_csv(&pred, Some(&idx.gene_names))?)?;
    } else {
        crate::io::bmat::save(&a.out, &pred)?;
    }
    let prov = ImputeProvenance {
        k: a.k,
        aggregation: a.agg,
        n_queries: pred.rows(),
        n_ref: idx.len(),
        checkpoint_hash: idx.checkpoint_hash.clone(),
        index_sha256: sha256_file(&a.index)?,
        queries: a.queries.display().to_string(),
        split: a.split,
    };
    let text = toml::to_string(&prov).map_err(|e| Error::format("impute provenance", e.to_string()))?;
    let mut side = a.out.clone().into_os_string();
    side.push(".toml");
    write_atomic(Path::new(&side), text.as_bytes())?;
    println!("queries={} genes={} out={}", pred.rows(), pred.cols(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let pred = load_matrix(&a.pred)?;
    let (_, ds) = load_data(&a.truth, a.split.as_deref())?;
    if pred.shape() != ds.expression.shape() {
        return Err(Error::Shape {
            op: "eval",
            left: format!("{}x{}", pred.rows(), pred.cols()),
            right: format!("{}x{}", ds.expression.rows(), ds.expression.cols()),
        });
    }
    let mut sets = Vec::new();
    for spec in &a.sets {
        let (set, missing) = resolve_gene_set(spec, &ds.expression, &ds.gene_names)?;
        if !missing.is_empty() {
            log::warn!("gene set {spec}: {} names not found ({})", missing.len(), missing.join(","));
        }
        sets.push(set);
    }
    let cfg = EvalConfig {
        clusters: a.clusters,
        seed: a.seed,
    };
    let report = MetricsReport::evaluate(&pred, &ds.expression, &ds.gene_names, &sets, &cfg)?;
    report.write(&a.out)?;
    for s in &report.sets {
        println!(
            "set={} mean_r={:.4} n_valid={} n_invalid={}",
            s.label, s.average.mean, s.average.n_valid, s.average.n_invalid
        );
    }
    let c = &report.clustering;
    println!("ari={:.4} nmi={:.4} k={}", c.agreement.ari, c.agreement.nmi, c.k);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let (mut grid, table): (AblationGrid, _) = parse_toml("ablation grid", &read_text(&a.grid)?)?;
    require_seed(&table, &["train", "seed"], a.seed, "ablate")?;
    if let Some(s) = a.seed {
        grid.train.seed = s;
    }
    let (_, ds) = load_data(&a.data, None)?;
    let reference = ds.select_split(&grid.reference_split)?;
    let query = ds.select_split(&grid.query_split)?;
    let mut sets = Vec::new();
    for spec in &grid.sets {
        let (set, missing) = resolve_gene_set(spec, &query.expression, &query.gene_names)?;
        if !missing.is_empty() {
            log::warn!("gene set {spec}: {} names not found", missing.len());
        }
        sets.push(set);
    }
    let result = run_ablation(&reference, &query, &sets, &grid, a.replicates)?;
    result.write_csv(&a.out)?;
    for row in &result.rows {
        let cells: Vec<String> = result
            .set_labels
            .iter()
            .enumerate()
            .map(|(s, l)| format!("{l}={}", row.summary(s)))
            .collect();
        println!(
            "{} k={} {}: {}",
            row.cell.objective,
            row.cell.k,
            row.cell.aggregation,
            cells.join(" ")
        );
    }
    Ok(())
}
