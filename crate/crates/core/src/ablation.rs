//! Replicated sweeps over training objective, neighbor count and aggregation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contrastive::ObjectiveMode;
use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::io::table::write_records;
use crate::metrics::{pearson_per_gene, set_average, ReplicateSummary};
use crate::model::{train, TrainConfig};
use crate::preprocess::GeneSet;
use crate::refindex::{aggregate, build_index, Aggregation, IndexKey, Neighbors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub objectives: Vec<ObjectiveMode>,
    pub ks: Vec<usize>,
    pub aggregations: Vec<Aggregation>,
    /// Evaluation gene-set specs, resolved against the query expression.
    pub sets: Vec<String>,
    pub reference_split: String,
    pub query_split: String,
    /// Base training configuration; replicate `r` trains with `seed + r`.
    pub train: TrainConfig,
}

impl Default for AblationGrid {
    fn default() -> Self {
        Self {
            objectives: vec![ObjectiveMode::Smoothed, ObjectiveMode::OneHot],
            ks: vec![1, 10, 50, 100],
            aggregations: vec![Aggregation::Simple, Aggregation::Average, Aggregation::Weighted],
            sets: vec!["heg".into(), "hvg".into()],
            reference_split: "reference".into(),
            query_split: "query".into(),
            train: TrainConfig::default(),
        }
    }
}

/// One retrieval setting evaluated per trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub objective: ObjectiveMode,
    pub k: usize,
    pub aggregation: Aggregation,
}

impl AblationGrid {
    /// Expands the grid; `simple` appears once per objective with `k = 1`.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &objective in &self.objectives {
            for &aggregation in &self.aggregations {
                if aggregation == Aggregation::Simple {
                    out.push(Cell { objective, k: 1, aggregation });
                    continue;
                }
                for &k in &self.ks {
                    out.push(Cell { objective, k, aggregation });
                }
            }
        }
        out
    }

    pub fn validate(&self, n_ref: usize) -> Result<()> {
        if self.objectives.is_empty() || self.aggregations.is_empty() {
            return Err(Error::validation("ablation grid needs at least one objective and aggregation"));
        }
        let needs_k = self.aggregations.iter().any(|a| *a != Aggregation::Simple);
        if needs_k && self.ks.is_empty() {
            return Err(Error::validation("ablation grid lists no k values"));
        }
        if let Some(k) = self.ks.iter().find(|&&k| k == 0 || k > n_ref) {
            return Err(Error::validation(format!("k = {k} must be in 1..={n_ref} (reference size)")));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub cell: Cell,
    /// Per gene set, the average r of each replicate.
    pub values: Vec<Vec<f64>>,
}

impl AblationRow {
    pub fn summary(&self, set: usize) -> ReplicateSummary {
        ReplicateSummary::from_values(&self.values[set]).expect("at least one replicate")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub set_labels: Vec<String>,
    pub replicates: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, objective: ObjectiveMode, k: usize, aggregation: Aggregation) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.cell == Cell { objective, k, aggregation })
    }

    /// One line per cell: mean and max deviation per set, then each replicate.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["objective".to_owned(), "k".into(), "aggregation".into(), "replicates".into()];
        for l in &self.set_labels {
            header.push(format!("{l}_mean"));
            header.push(format!("{l}_max_dev"));
        }
        for l in &self.set_labels {
            for r in 0..self.replicates {
                header.push(format!("{l}_rep{}", r + 1));
            }
        }
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|row| {
                let mut v = vec![
                    row.cell.objective.to_string(),
                    row.cell.k.to_string(),
                    row.cell.aggregation.to_string(),
                    self.replicates.to_string(),
                ];
                for s in 0..self.set_labels.len() {
                    let sum = row.summary(s);
                    v.push(sum.mean.to_string());
                    v.push(sum.max_dev.to_string());
                }
                for vals in &row.values {
                    v.extend(vals.iter().map(f64::to_string));
                }
                v
            })
            .collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        write_records(path, &header, &rows)
    }
}

/// Trains `replicates` models per objective on `reference` and scores every
/// grid cell on `query` over `sets`.
pub fn run_ablation(
    reference: &PairedDataset,
    query: &PairedDataset,
    sets: &[GeneSet],
    grid: &AblationGrid,
    replicates: usize,
) -> Result<AblationTable> {
    if replicates == 0 {
        return Err(Error::validation("replicates must be >= 1"));
    }
    if sets.is_empty() {
        return Err(Error::validation("ablation needs at least one gene set"));
    }
    if reference.gene_names != query.gene_names {
        return Err(Error::validation("reference and query gene lists differ"));
    }
    grid.validate(reference.n_spots())?;
    let cells = grid.cells();
    let k_max = cells.iter().map(|c| c.k).max().unwrap_or(1);
    let mut rows: Vec<AblationRow> = cells
        .iter()
        .map(|&cell| AblationRow {
            cell,
            values: vec![Vec::with_capacity(replicates); sets.len()],
        })
        .collect();

    for &objective in &grid.objectives {
        for rep in 0..replicates {
            let cfg = TrainConfig {
                objective,
                seed: grid.train.seed.wrapping_add(rep as u64),
                ..grid.train.clone()
            };
            log::info!("ablation: training {objective} replicate {}/{replicates}", rep + 1);
            let ckpt = train(reference, &cfg)?;
            let index = build_index(&ckpt, reference, IndexKey::Image)?;
            let q = ckpt.encode_image(&query.features)?;
            let full = index.knn_batch(&q, k_max)?;
            for row in rows.iter_mut().filter(|r| r.cell.objective == objective) {
                let nbs: Vec<Neighbors> = full
                    .iter()
                    .map(|n| Neighbors {
                        indices: n.indices[..row.cell.k].to_vec(),
                        distances: n.distances[..row.cell.k].to_vec(),
                    })
                    .collect();
                let pred = aggregate(&reference.expression, &nbs, row.cell.aggregation)?;
                let r = pearson_per_gene(&pred, &query.expression)?;
                for (s, set) in sets.iter().enumerate() {
                    row.values[s].push(set_average(&r, set)?.mean);
                }
            }
        }
    }
    Ok(AblationTable {
        set_labels: sets.iter().map(|s| s.label.to_string()).collect(),
        replicates,
        rows,
    })
}
