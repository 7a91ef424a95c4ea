use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::{cluster_agreement, ggc, kmeans, moment_preservation, n_clusters, pearson_per_gene};
use super::{Agreement, Ggc, Moments, PerGeneR, SetAverage};
use crate::error::{Error, Result};
use crate::io::table::{matrix_to_csv, write_records};
use crate::io::write_atomic;
use crate::math::DenseMatrix;
use crate::preprocess::GeneSet;

/// Mean and maximum absolute deviation from the mean over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateSummary {
    pub mean: f64,
    pub max_dev: f64,
    pub n: usize,
}

impl ReplicateSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::validation("no replicate values to summarize"));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let max_dev = values.iter().fold(0.0f64, |m, v| m.max((v - mean).abs()));
        Ok(Self {
            mean,
            max_dev,
            n: values.len(),
        })
    }
}

impl fmt::Display for ReplicateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.max_dev)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalConfig {
    pub clusters: usize,
    #[serde(with = "crate::model::seed_string")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetScore {
    pub label: String,
    pub n_genes: usize,
    pub average: SetAverage,
    /// Mean predicted/measured variance ratio over the set's valid genes.
    pub var_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterScore {
    pub k: usize,
    pub agreement: Agreement,
    pub pred_clusters: usize,
    pub truth_clusters: usize,
    pub pred_labels: Vec<usize>,
    pub truth_labels: Vec<usize>,
}

/// Everything computed by one evaluation of predictions against measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub gene_names: Vec<String>,
    pub per_gene_r: PerGeneR,
    pub sets: Vec<SetScore>,
    pub moments: Moments,
    /// Genes the GGC matrices are computed over.
    pub ggc_genes: Vec<usize>,
    pub ggc_pred: Ggc,
    pub ggc_truth: Ggc,
    pub clustering: ClusterScore,
    pub config: EvalConfig,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config: EvalConfig,
    n_spots: usize,
    n_genes: usize,
    n_invalid_genes: usize,
    mean_r_all: f64,
    clusters: ClusterSummary,
    sets: Vec<SetSummary<'a>>,
}

#[derive(Serialize)]
struct ClusterSummary {
    k: usize,
    ari: f64,
    nmi: f64,
    pred_clusters: usize,
    truth_clusters: usize,
}

#[derive(Serialize)]
struct SetSummary<'a> {
    label: &'a str,
    n_genes: usize,
    n_valid: usize,
    n_invalid: usize,
    mean_r: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_ratio: Option<f64>,
}

impl MetricsReport {
    /// Scores `pred` against `truth`. GGC matrices cover the first gene set,
    /// or every gene when `sets` is empty. Spots are clustered by expression.
    pub fn evaluate(
        pred: &DenseMatrix,
        truth: &DenseMatrix,
        gene_names: &[String],
        sets: &[GeneSet],
        cfg: &EvalConfig,
    ) -> Result<Self> {
        if gene_names.len() != truth.cols() {
            return Err(Error::validation(format!(
                "{} gene names for {} expression columns",
                gene_names.len(),
                truth.cols()
            )));
        }
        let per_gene_r = pearson_per_gene(pred, truth)?;
        let moments = moment_preservation(pred, truth)?;
        let scores = sets
            .iter()
            .map(|s| {
                let (mean_ratio, var_ratio) = moments.summarize(&s.indices);
                Ok(SetScore {
                    label: s.label.to_string(),
                    n_genes: s.len(),
                    average: super::set_average(&per_gene_r, s)?,
                    var_ratio,
                    mean_ratio,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ggc_genes = match sets.first() {
            Some(s) => s.indices.clone(),
            None => (0..truth.cols()).collect(),
        };
        let ggc_pred = ggc(&pred.select_cols(&ggc_genes))?;
        let ggc_truth = ggc(&truth.select_cols(&ggc_genes))?;
        let pred_labels = kmeans(pred, cfg.clusters, cfg.seed)?;
        let truth_labels = kmeans(truth, cfg.clusters, cfg.seed)?;
        let clustering = ClusterScore {
            k: cfg.clusters,
            agreement: cluster_agreement(&pred_labels, &truth_labels)?,
            pred_clusters: n_clusters(&pred_labels),
            truth_clusters: n_clusters(&truth_labels),
            pred_labels,
            truth_labels,
        };
        Ok(Self {
            gene_names: gene_names.to_vec(),
            per_gene_r,
            sets: scores,
            moments,
            ggc_genes,
            ggc_pred,
            ggc_truth,
            clustering,
            config: *cfg,
        })
    }

    pub fn set(&self, label: &str) -> Option<&SetScore> {
        self.sets.iter().find(|s| s.label == label)
    }

    /// Mean r over all genes with a valid correlation.
    pub fn mean_r(&self) -> f64 {
        let v: Vec<f64> = self
            .per_gene_r
            .r
            .iter()
            .zip(&self.per_gene_r.valid)
            .filter(|(_, ok)| **ok)
            .map(|(r, _)| *r)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    pub fn summary_toml(&self) -> Result<String> {
        let c = &self.clustering;
        let file = SummaryFile {
            config: self.config,
            n_spots: c.pred_labels.len(),
            n_genes: self.gene_names.len(),
            n_invalid_genes: self.per_gene_r.n_invalid(),
            mean_r_all: self.mean_r(),
            clusters: ClusterSummary {
                k: c.k,
                ari: c.agreement.ari,
                nmi: c.agreement.nmi,
                pred_clusters: c.pred_clusters,
                truth_clusters: c.truth_clusters,
            },
            sets: self
                .sets
                .iter()
                .map(|s| SetSummary {
                    label: &s.label,
                    n_genes: s.n_genes,
                    n_valid: s.average.n_valid,
                    n_invalid: s.average.n_invalid,
                    mean_r: s.average.mean,
                    mean_ratio: s.mean_ratio,
                    var_ratio: s.var_ratio,
                })
                .collect(),
        };
        toml::to_string(&file).map_err(|e| Error::format("report summary", e.to_string()))
    }

    /// Writes `summary.toml`, `per_gene_r.csv`, `moments.csv`,
    /// `ggc_pred.csv`, `ggc_truth.csv` and `clusters.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("summary.toml"), self.summary_toml()?.as_bytes())?;

        let r = &self.per_gene_r;
        let rows: Vec<Vec<String>> = (0..r.len())
            .map(|g| vec![self.gene_names[g].clone(), r.r[g].to_string(), r.valid[g].to_string()])
            .collect();
        write_records(&dir.join("per_gene_r.csv"), &["gene", "r", "valid"], &rows)?;

        let m = &self.moments;
        let rows: Vec<Vec<String>> = (0..m.mean_ratio.len())
            .map(|g| {
                vec![
                    self.gene_names[g].clone(),
                    m.mean_ratio[g].to_string(),
                    m.var_ratio[g].to_string(),
                    m.mean_valid[g].to_string(),
                    m.var_valid[g].to_string(),
                ]
            })
            .collect();
        write_records(
            &dir.join("moments.csv"),
            &["gene", "mean_ratio", "var_ratio", "mean_valid", "var_valid"],
            &rows,
        )?;

        let names: Vec<String> = self.ggc_genes.iter().map(|&g| self.gene_names[g].clone()).collect();
        write_atomic(&dir.join("ggc_pred.csv"), &matrix_to_csv(&self.ggc_pred.matrix, Some(&names))?)?;
        write_atomic(&dir.join("ggc_truth.csv"), &matrix_to_csv(&self.ggc_truth.matrix, Some(&names))?)?;

        let c = &self.clustering;
        let rows: Vec<Vec<String>> = c
            .pred_labels
            .iter()
            .zip(&c.truth_labels)
            .enumerate()
            .map(|(i, (p, t))| vec![i.to_string(), p.to_string(), t.to_string()])
            .collect();
        write_records(&dir.join("clusters.csv"), &["row", "pred", "truth"], &rows)
    }
}
