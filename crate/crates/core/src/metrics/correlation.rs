use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::DenseMatrix;
use crate::preprocess::GeneSet;

/// A column whose spread is below this fraction of its magnitude is treated
/// as constant (`Σ(x-x̄)² <= REL * n * max|x|²`).
const DEGENERATE_REL: f64 = 1e-24;

/// Per-gene correlations; `valid[g]` is false when either column was constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PerGeneR {
    pub r: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PerGeneR {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn n_invalid(&self) -> usize {
        self.valid.iter().filter(|v| !**v).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetAverage {
    pub mean: f64,
    pub n_valid: usize,
    pub n_invalid: usize,
}

/// A column shifted to zero mean, with its sum of squares.
pub(crate) struct Centered {
    pub values: Vec<f64>,
    pub mean: f64,
    pub ss: f64,
    pub degenerate: bool,
}

pub(crate) fn center(col: &[f32]) -> Centered {
    let n = col.len() as f64;
    let mean = col.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let values: Vec<f64> = col.iter().map(|&v| f64::from(v) - mean).collect();
    let ss: f64 = values.iter().map(|d| d * d).sum();
    let max = col.iter().fold(0.0f64, |m, &v| m.max(f64::from(v).abs()));
    Centered {
        degenerate: ss <= DEGENERATE_REL * n * max * max,
        values,
        mean,
        ss,
    }
}

fn check_pair(op: &'static str, pred: &DenseMatrix, truth: &DenseMatrix) -> Result<()> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(op, pred.shape(), truth.shape()));
    }
    if pred.rows() < 2 {
        return Err(Error::validation(format!("{op} needs at least 2 spots")));
    }
    Ok(())
}

fn columns(m: &DenseMatrix) -> Vec<Vec<f32>> {
    let t = m.transpose();
    t.iter_rows().map(<[f32]>::to_vec).collect()
}

/// Column-wise Pearson correlation between predicted and measured expression.
pub fn pearson_per_gene(pred: &DenseMatrix, truth: &DenseMatrix) -> Result<PerGeneR> {
    check_pair("pearson_per_gene", pred, truth)?;
    let (p, t) = (columns(pred), columns(truth));
    let (r, valid) = p
        .par_iter()
        .zip(&t)
        .map(|(a, b)| {
            let (a, b) = (center(a), center(b));
            if a.degenerate || b.degenerate {
                return (0.0, false);
            }
            let sxy: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
            ((sxy / (a.ss * b.ss).sqrt()).clamp(-1.0, 1.0), true)
        })
        .unzip();
    Ok(PerGeneR { r, valid })
}

/// Mean correlation over a gene set, skipping invalid genes.
pub fn set_average(per_gene: &PerGeneR, set: &GeneSet) -> Result<SetAverage> {
    if set.universe != per_gene.len() {
        return Err(Error::validation(format!(
            "gene set {} indexes {} genes, correlations cover {}",
            set.label,
            set.universe,
            per_gene.len()
        )));
    }
    let valid: Vec<f64> = set
        .indices
        .iter()
        .filter(|&&g| per_gene.valid[g])
        .map(|&g| per_gene.r[g])
        .collect();
    if valid.is_empty() {
        return Err(Error::validation(format!(
            "gene set {} has no genes with a valid correlation",
            set.label
        )));
    }
    Ok(SetAverage {
        mean: valid.iter().sum::<f64>() / valid.len() as f64,
        n_valid: valid.len(),
        n_invalid: set.len() - valid.len(),
    })
}

/// Gene-gene correlation matrix; constant genes get a zero row and column.
#[derive(Debug, Clone, PartialEq)]
pub struct Ggc {
    pub matrix: DenseMatrix,
    pub valid: Vec<bool>,
}

pub fn ggc(expr: &DenseMatrix) -> Result<Ggc> {
    if expr.rows() < 2 {
        return Err(Error::validation("ggc needs at least 2 spots"));
    }
    let g = expr.cols();
    let cols: Vec<Centered> = columns(expr).iter().map(|c| center(c)).collect();
    let z: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let s = if c.degenerate { 0.0 } else { 1.0 / c.ss.sqrt() };
            c.values.iter().map(|v| v * s).collect()
        })
        .collect();
    let upper: Vec<Vec<f64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            (i..g)
                .map(|j| z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        })
        .collect();
    let valid: Vec<bool> = cols.iter().map(|c| !c.degenerate).collect();
    let mut m = DenseMatrix::zeros(g, g);
    for i in 0..g {
        for j in i..g {
            let v = if i == j {
                if valid[i] { 1.0 } else { 0.0 }
            } else {
                upper[i][j - i].clamp(-1.0, 1.0)
            };
            m.set(i, j, v as f32);
            m.set(j, i, v as f32);
        }
    }
    Ok(Ggc { matrix: m, valid })
}

/// Per-gene ratios of predicted to measured mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean_ratio: Vec<f64>,
    pub var_ratio: Vec<f64>,
    /// False where the measured mean is zero.
    pub mean_valid: Vec<bool>,
    /// False where the measured column is constant.
    pub var_valid: Vec<bool>,
}

impl Moments {
    /// Averages of the valid mean and variance ratios over `genes`.
    pub fn summarize(&self, genes: &[usize]) -> (Option<f64>, Option<f64>) {
        let avg = |vals: &[f64], ok: &[bool]| {
            let v: Vec<f64> = genes.iter().filter(|&&g| ok[g]).map(|&g| vals[g]).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        (
            avg(&self.mean_ratio, &self.mean_valid),
            avg(&self.var_ratio, &self.var_valid),
        )
    }
}

pub fn moment_preservation(pred: &DenseMatrix, truth: &DenseMatrix) -> Result<Moments> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape("moment_preservation", pred.shape(), truth.shape()));
    }
    if pred.rows() == 0 {
        return Err(Error::validation("moment_preservation needs at least 1 spot"));
    }
    let n = pred.rows() as f64;
    let (p, t) = (columns(pred), columns(truth));
    let mut out = Moments {
        mean_ratio: Vec::with_capacity(p.len()),
        var_ratio: Vec::with_capacity(p.len()),
        mean_valid: Vec::with_capacity(p.len()),
        var_valid: Vec::with_capacity(p.len()),
    };
    for (a, b) in p.iter().zip(&t) {
        let (a, b) = (center(a), center(b));
        let mean_ok = b.mean != 0.0;
        out.mean_ratio.push(if mean_ok { a.mean / b.mean } else { 0.0 });
        out.mean_valid.push(mean_ok);
        let pred_var = if a.degenerate { 0.0 } else { a.ss / n };
        out.var_ratio.push(if b.degenerate { 0.0 } else { pred_var / (b.ss / n) });
        out.var_valid.push(!b.degenerate);
    }
    Ok(out)
}
