//! Synthetic paired datasets with a known latent zonation coordinate.
//!
//! Each spot carries a latent `z ∈ [0, 1]` that increases with distance from
//! the grid center. Zonated genes have mean `baseline · exp(loading · (z − 0.5))`;
//! the rest have constant means. Image features are a fixed random nonlinear
//! mixing of `z` with nuisance latents, so `z` is recoverable from images only
//! through a learned map.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::math::DenseMatrix;
use crate::metrics::pearson_per_gene;
use crate::preprocess::GeneSet;

/// Equal-width latent bins used by [`oracle_ceiling`].
pub const ORACLE_BINS: usize = 20;
/// Split labels written when `n_query > 0`.
pub const REFERENCE_LABEL: &str = "reference";
pub const QUERY_LABEL: &str = "query";

const NUISANCE_DIMS: usize = 4;
const LATENT_GAIN: f64 = 1.5;
const NUISANCE_GAIN: f64 = 0.5;
const LOADING_RANGE: (f64, f64) = (1.5, 3.0);
const BASELINE_RANGE: (f64, f64) = (5.0, 60.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Total spots, reference and query together.
    pub n_spots: usize,
    /// Spots labelled `query`; chosen uniformly at random.
    pub n_query: usize,
    pub n_genes: usize,
    pub n_zonated: usize,
    pub d_img: usize,
    /// Log-normal multiplicative noise on expression means.
    pub sigma_x: f64,
    /// Additive Gaussian noise on image features.
    pub sigma_v: f64,
    /// Probability an individual count is zeroed.
    pub dropout: f64,
    /// Replace Poisson sampling by its mean.
    pub noiseless: bool,
    #[serde(with = "crate::model::seed_string")]
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_spots: 2500,
            n_query: 500,
            n_genes: 200,
            n_zonated: 50,
            d_img: 64,
            sigma_x: 0.3,
            sigma_v: 0.1,
            dropout: 0.1,
            noiseless: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if self.n_spots < 2 {
            return fail(format!("n_spots = {} must be >= 2", self.n_spots));
        }
        if self.n_query >= self.n_spots {
            return fail(format!("n_query = {} must be < n_spots = {}", self.n_query, self.n_spots));
        }
        if self.n_genes == 0 || self.d_img == 0 {
            return fail("n_genes and d_img must be >= 1".into());
        }
        if self.n_zonated > self.n_genes {
            return fail(format!("n_zonated = {} exceeds n_genes = {}", self.n_zonated, self.n_genes));
        }
        if !(self.sigma_x >= 0.0 && self.sigma_v >= 0.0) || !self.sigma_x.is_finite() || !self.sigma_v.is_finite() {
            return fail("noise levels must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout = {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// The latent structure behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub z: Vec<f64>,
    /// Zero for non-zonated genes.
    pub loadings: Vec<f64>,
    pub baselines: Vec<f64>,
    /// Indices of zonated genes, ascending.
    pub zonated: Vec<usize>,
    /// Noise-free expected counts, `n_spots × n_genes`.
    pub clean: DenseMatrix,
}

/// Expected count of every gene at every spot.
pub fn clean_expression(z: &[f64], loadings: &[f64], baselines: &[f64]) -> DenseMatrix {
    let c = loadings.len();
    let mut out = Vec::with_capacity(z.len() * c);
    for &zi in z {
        for (l, b) in loadings.iter().zip(baselines) {
            out.push((b * (l * (zi - 0.5)).exp()) as f32);
        }
    }
    DenseMatrix::new(z.len(), c, out).expect("sized by construction")
}

impl GroundTruth {
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            z: idx.iter().map(|&i| self.z[i]).collect(),
            clean: self.clean.select_rows(idx),
            ..self.clone()
        }
    }

    pub fn zonated_set(&self) -> GeneSet {
        GeneSet::new(
            crate::preprocess::GeneSetLabel::Custom("zonated".into()),
            self.zonated.clone(),
            self.loadings.len(),
        )
        .expect("zonated indices are distinct and in range")
    }

    pub fn non_zonated_set(&self) -> GeneSet {
        let idx = (0..self.loadings.len()).filter(|g| !self.zonated.contains(g)).collect();
        GeneSet::new(
            crate::preprocess::GeneSetLabel::Custom("non_zonated".into()),
            idx,
            self.loadings.len(),
        )
        .expect("indices are distinct and in range")
    }
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// Grid coordinates, row-major, with a latent that increases with radius.
fn radial_layout(n: usize, rng: &mut ChaCha8Rng) -> (DenseMatrix, Vec<f64>) {
    let side = (n as f64).sqrt().ceil() as usize;
    let mid = (side as f64 - 1.0) / 2.0;
    let cells: Vec<(f64, f64)> = (0..n).map(|i| ((i % side) as f64, (i / side) as f64)).collect();
    let mut draws: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    draws.sort_by(f64::total_cmp);
    let radius = |&(x, y): &(f64, f64)| (x - mid).hypot(y - mid);
    let mut by_radius: Vec<usize> = (0..n).collect();
    by_radius.sort_by(|&a, &b| radius(&cells[a]).total_cmp(&radius(&cells[b])).then(a.cmp(&b)));
    let mut z = vec![0.0; n];
    for (rank, &cell) in by_radius.iter().enumerate() {
        z[cell] = draws[rank];
    }
    let flat: Vec<f32> = cells.iter().flat_map(|&(x, y)| [x as f32, y as f32]).collect();
    (DenseMatrix::new(n, 2, flat).expect("n x 2"), z)
}

/// Generates a dataset and its ground truth; deterministic in `cfg`.
pub fn generate(cfg: &SynthConfig) -> Result<(PairedDataset, GroundTruth)> {
    cfg.validate()?;
    let (n, c) = (cfg.n_spots, cfg.n_genes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let (coords, z) = radial_layout(n, &mut rng);

    let mut zonated = sample(&mut rng, c, cfg.n_zonated).into_vec();
    zonated.sort_unstable();
    let mut loadings = vec![0.0; c];
    for (rank, &g) in zonated.iter().enumerate() {
        let mag = rng.random_range(LOADING_RANGE.0..LOADING_RANGE.1);
        // alternate signs: half pericentral-like, half periportal-like
        loadings[g] = if rank % 2 == 0 { mag } else { -mag };
    }
    let (lo, hi) = (BASELINE_RANGE.0.ln(), BASELINE_RANGE.1.ln());
    let baselines: Vec<f64> = (0..c).map(|_| rng.random_range(lo..hi).exp()).collect();
    let clean = clean_expression(&z, &loadings, &baselines);

    let mix_latent: Vec<f64> = (0..cfg.d_img).map(|_| LATENT_GAIN * std_normal.sample(&mut rng)).collect();
    let mix_nuisance: Vec<f64> = (0..cfg.d_img * NUISANCE_DIMS)
        .map(|_| NUISANCE_GAIN * std_normal.sample(&mut rng))
        .collect();
    let offsets: Vec<f64> = (0..cfg.d_img).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut expression = Vec::with_capacity(n * c);
    let mut features = Vec::with_capacity(n * cfg.d_img);
    for s in 0..n {
        for &mu in clean.row(s) {
            let mut mu = f64::from(mu);
            if cfg.sigma_x > 0.0 {
                mu *= (cfg.sigma_x * std_normal.sample(&mut rng)).exp();
            }
            let mut count = if cfg.noiseless {
                mu
            } else {
                Poisson::new(mu)
                    .map_err(|e| Error::Numerical(format!("poisson rate {mu}: {e}")))?
                    .sample(&mut rng)
            };
            if cfg.dropout > 0.0 && rng.random::<f64>() < cfg.dropout {
                count = 0.0;
            }
            expression.push(count as f32);
        }
        let nuisance: Vec<f64> = (0..NUISANCE_DIMS).map(|_| std_normal.sample(&mut rng)).collect();
        let centered = 2.0 * z[s] - 1.0;
        for j in 0..cfg.d_img {
            let mixed: f64 = mix_nuisance[j * NUISANCE_DIMS..(j + 1) * NUISANCE_DIMS]
                .iter()
                .zip(&nuisance)
                .map(|(w, u)| w * u)
                .sum();
            let mut v = (mix_latent[j] * centered + mixed + offsets[j]).tanh();
            if cfg.sigma_v > 0.0 {
                v += cfg.sigma_v * std_normal.sample(&mut rng);
            }
            features.push(v as f32);
        }
    }

    let (gw, sw) = (width(c), width(n));
    let gene_names = (0..c).map(|g| format!("G{g:0gw$}")).collect();
    let spot_ids = (0..n).map(|s| format!("s{s:0sw$}")).collect();
    let mut ds = PairedDataset::new(
        DenseMatrix::new(n, cfg.d_img, features)?,
        DenseMatrix::new(n, c, expression)?,
        gene_names,
        spot_ids,
    )?
    .with_coords(coords)?;
    if cfg.n_query > 0 {
        let mut split = vec![REFERENCE_LABEL.to_owned(); n];
        for q in sample(&mut rng, n, cfg.n_query) {
            split[q] = QUERY_LABEL.to_owned();
        }
        ds = ds.with_split(split)?;
    }
    Ok((
        ds,
        GroundTruth {
            z,
            loadings,
            baselines,
            zonated,
            clean,
        },
    ))
}

fn z_bin(z: f64) -> usize {
    ((z * ORACLE_BINS as f64) as usize).min(ORACLE_BINS - 1)
}

/// Best achievable average correlation over `genes` for a predictor that
/// knows the true latent.
///
/// Each gene is regressed on binned `z` with two-fold cross-fitting (even
/// rows predict odd rows and vice versa), so genes unrelated to `z` score
/// near zero rather than picking up in-sample noise.
pub fn oracle_ceiling(truth: &GroundTruth, dataset: &PairedDataset, genes: &GeneSet) -> Result<f64> {
    let n = dataset.n_spots();
    if truth.z.len() != n {
        return Err(Error::validation(format!(
            "ground truth covers {} spots, dataset has {n}",
            truth.z.len()
        )));
    }
    if genes.is_empty() {
        return Err(Error::validation("oracle ceiling needs a non-empty gene set"));
    }
    if genes.universe != dataset.n_genes() {
        return Err(Error::validation("gene set does not index this dataset"));
    }
    if n < 4 {
        return Err(Error::validation("oracle ceiling needs at least 4 spots"));
    }
    let expr = dataset.expression.select_cols(&genes.indices);
    let g = expr.cols();
    let mut pred = DenseMatrix::zeros(n, g);
    for fold in 0..2 {
        let mut sums = vec![vec![0.0f64; g]; ORACLE_BINS];
        let mut counts = [0usize; ORACLE_BINS];
        let mut total = vec![0.0f64; g];
        let mut n_fit = 0usize;
        for s in (0..n).filter(|s| s % 2 == fold) {
            let b = z_bin(truth.z[s]);
            counts[b] += 1;
            n_fit += 1;
            for ((acc, tot), &v) in sums[b].iter_mut().zip(total.iter_mut()).zip(expr.row(s)) {
                *acc += f64::from(v);
                *tot += f64::from(v);
            }
        }
        for s in (0..n).filter(|s| s % 2 != fold) {
            let b = z_bin(truth.z[s]);
            for j in 0..g {
                let v = if counts[b] > 0 {
                    sums[b][j] / counts[b] as f64
                } else {
                    total[j] / n_fit as f64
                };
                pred.set(s, j, v as f32);
            }
        }
    }
    let r = pearson_per_gene(&pred, &expr)?;
    let valid: Vec<f64> = r.r.iter().zip(&r.valid).filter(|(_, ok)| **ok).map(|(v, _)| *v).collect();
    if valid.is_empty() {
        return Err(Error::validation("every gene in the set is constant"));
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}
