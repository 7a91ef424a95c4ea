//! Exact k-nearest-neighbor retrieval over reference embeddings and
//! query-reference imputation.
//!
//! Queries are embedded with the image encoder, matched against the stored
//! reference embeddings by Euclidean distance, and predicted as a convex
//! combination of the matched reference expression profiles.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::io::{container, write_atomic};
use crate::math::DenseMatrix;
use crate::model::ModelCheckpoint;

pub const BLIX_MAGIC: &[u8; 4] = b"BLIX";
pub const DEFAULT_K: usize = 50;
/// Added to squared distances in the inverse-distance weights.
pub const WEIGHT_EPS: f64 = 1e-8;

/// Which embedding the reference spots are keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexKey {
    #[default]
    Image,
    Expression,
}

impl std::str::FromStr for IndexKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "image" => Ok(Self::Image),
            "expression" => Ok(Self::Expression),
            other => Err(Error::validation(format!("unknown index key {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Copy the single nearest profile.
    Simple,
    /// Unweighted mean of the k nearest profiles.
    Average,
    /// Mean weighted by `1 / (d² + ε)`.
    Weighted,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "average" => Ok(Self::Average),
            "weighted" => Ok(Self::Weighted),
            other => Err(Error::validation(format!("unknown aggregation {other:?}"))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Simple => "simple",
            Self::Average => "average",
            Self::Weighted => "weighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImputationConfig {
    pub k: usize,
    pub aggregation: Aggregation,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            aggregation: Aggregation::Average,
        }
    }
}

impl ImputationConfig {
    /// Neighbors actually retrieved: `simple` always uses one.
    pub fn effective_k(&self) -> usize {
        match self.aggregation {
            Aggregation::Simple => 1,
            _ => self.k,
        }
    }

    pub fn validate(&self, n_ref: usize) -> Result<()> {
        let k = self.effective_k();
        if k == 0 || k > n_ref {
            return Err(Error::validation(format!(
                "k = {} must be in 1..={n_ref} (reference size)",
                self.k
            )));
        }
        Ok(())
    }
}

/// Indices and Euclidean distances of retrieved neighbors, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    pub embeddings: DenseMatrix,
    pub expression: DenseMatrix,
    pub checkpoint_hash: String,
    pub gene_names: Vec<String>,
    pub key: IndexKey,
    pub gene_names_source: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    format: String,
    checkpoint_hash: String,
    n_ref: usize,
    h: usize,
    n_genes: usize,
    key: IndexKey,
    #[serde(skip_serializing_if = "Option::is_none")]
    gene_names_source: Option<String>,
    gene_names: Vec<String>,
}

/// Embeds every reference spot with the encoder selected by `key`.
pub fn build_index(ckpt: &ModelCheckpoint, reference: &PairedDataset, key: IndexKey) -> Result<ReferenceIndex> {
    reference.validate()?;
    if reference.n_spots() == 0 {
        return Err(Error::validation("reference dataset is empty"));
    }
    let embeddings = match key {
        IndexKey::Image => ckpt.encode_image(&reference.features)?,
        IndexKey::Expression => ckpt.encode_expression(&reference.expression)?,
    };
    Ok(ReferenceIndex {
        embeddings: embeddings.ensure_finite("reference embedding")?,
        expression: reference.expression.clone(),
        checkpoint_hash: ckpt.content_hash(),
        gene_names: reference.gene_names.clone(),
        key,
        gene_names_source: None,
    })
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn by_dist_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

impl ReferenceIndex {
    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Exact k nearest reference rows; ties resolve to the lower index.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<Neighbors> {
        if k == 0 || k > self.len() {
            return Err(Error::validation(format!(
                "k = {k} must be in 1..={} (reference size)",
                self.len()
            )));
        }
        if query.len() != self.dim() {
            return Err(Error::shape("knn query", (1, query.len()), (1, self.dim())));
        }
        let mut d: Vec<(f64, usize)> = self
            .embeddings
            .iter_rows()
            .enumerate()
            .map(|(i, r)| (sq_dist(query, r), i))
            .collect();
        if k < d.len() {
            d.select_nth_unstable_by(k - 1, by_dist_then_index);
            d.truncate(k);
        }
        d.sort_unstable_by(by_dist_then_index);
        Ok(Neighbors {
            indices: d.iter().map(|p| p.1).collect(),
            distances: d.iter().map(|p| p.0.sqrt()).collect(),
        })
    }

    /// [`knn`](Self::knn) for every row of `queries`, evaluated in parallel.
    pub fn knn_batch(&self, queries: &DenseMatrix, k: usize) -> Result<Vec<Neighbors>> {
        if queries.cols() != self.dim() {
            return Err(Error::shape("knn queries", queries.shape(), (queries.rows(), self.dim())));
        }
        (0..queries.rows())
            .into_par_iter()
            .map(|q| self.knn(queries.row(q), k))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = IndexHeader {
            format: "BLIX".into(),
            checkpoint_hash: self.checkpoint_hash.clone(),
            n_ref: self.len(),
            h: self.dim(),
            n_genes: self.expression.cols(),
            key: self.key,
            gene_names_source: self.gene_names_source.clone(),
            gene_names: self.gene_names.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::format("BLIX", e.to_string()))?;
        Ok(container::encode(BLIX_MAGIC, &text, &[&self.embeddings, &self.expression]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, mut blobs) = container::decode("BLIX", BLIX_MAGIC, bytes)?;
        let h: IndexHeader = toml::from_str(&text).map_err(|e| Error::format("BLIX", e.to_string()))?;
        if blobs.len() != 2 {
            return Err(Error::format("BLIX", format!("expected 2 blobs, found {}", blobs.len())));
        }
        let expression = blobs.pop().expect("two blobs");
        let embeddings = blobs.pop().expect("two blobs");
        if embeddings.shape() != (h.n_ref, h.h)
            || expression.shape() != (h.n_ref, h.n_genes)
            || h.gene_names.len() != h.n_genes
        {
            return Err(Error::format("BLIX", "blob shapes disagree with header"));
        }
        Ok(Self {
            embeddings,
            expression,
            checkpoint_hash: h.checkpoint_hash,
            gene_names: h.gene_names,
            key: h.key,
            gene_names_source: h.gene_names_source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Combines reference rows for each neighbor list.
pub fn aggregate(reference: &DenseMatrix, neighbors: &[Neighbors], aggregation: Aggregation) -> Result<DenseMatrix> {
    let c = reference.cols();
    let mut out = DenseMatrix::zeros(neighbors.len(), c);
    let mut acc = vec![0.0f64; c];
    for (q, nb) in neighbors.iter().enumerate() {
        if nb.indices.is_empty() {
            return Err(Error::validation(format!("query {q} has no neighbors")));
        }
        if let Some(&bad) = nb.indices.iter().find(|&&i| i >= reference.rows()) {
            return Err(Error::validation(format!("neighbor index {bad} out of range")));
        }
        if aggregation == Aggregation::Simple {
            out.row_mut(q).copy_from_slice(reference.row(nb.indices[0]));
            continue;
        }
        let weights: Vec<f64> = match aggregation {
            Aggregation::Weighted => nb
                .distances
                .iter()
                .map(|d| 1.0 / (d * d + WEIGHT_EPS))
                .collect(),
            _ => vec![1.0; nb.indices.len()],
        };
        let total: f64 = weights.iter().sum();
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (&i, &w) in nb.indices.iter().zip(&weights) {
            let w = w / total;
            for (a, &v) in acc.iter_mut().zip(reference.row(i)) {
                *a += w * f64::from(v);
            }
        }
        for (d, a) in out.row_mut(q).iter_mut().zip(&acc) {
            *d = *a as f32;
        }
    }
    out.ensure_finite("imputation")
}

/// Predicts expression for each query patch.
pub fn impute(
    index: &ReferenceIndex,
    ckpt: &ModelCheckpoint,
    query_feats: &DenseMatrix,
    cfg: &ImputationConfig,
) -> Result<DenseMatrix> {
    cfg.validate(index.len())?;
    let hash = ckpt.content_hash();
    if hash != index.checkpoint_hash {
        return Err(Error::HashMismatch {
            what: "index checkpoint".into(),
            expected: index.checkpoint_hash.clone(),
            found: hash,
        });
    }
    let q = ckpt.encode_image(query_feats)?;
    let nbs = index.knn_batch(&q, cfg.effective_k())?;
    aggregate(&index.expression, &nbs, cfg.aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index(rows: &[[f32; 2]], expr: &[&[f32]]) -> ReferenceIndex {
        ReferenceIndex {
            embeddings: DenseMatrix::from_rows(rows).unwrap(),
            expression: DenseMatrix::from_rows(expr).unwrap(),
            checkpoint_hash: "x".into(),
            gene_names: (0..expr[0].len()).map(|g| format!("g{g}")).collect(),
            key: IndexKey::Image,
            gene_names_source: None,
        }
    }

    #[test]
    fn three_four_five() {
        let idx = index(&[[0.0, 0.0], [3.0, 4.0], [6.0, 8.0]], &[&[1.0], &[2.0], &[3.0]]);
        let nb = idx.knn(&[0.0, 0.0], 2).unwrap();
        assert_eq!(nb.indices, vec![0, 1]);
        assert_eq!(nb.distances, vec![0.0, 5.0]);
    }

    #[test]
    fn exact_match_and_ties() {
        let idx = index(&[[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]], &[&[1.0], &[2.0], &[3.0]]);
        let nb = idx.knn(&[2.0, 2.0], 1).unwrap();
        assert_eq!((nb.indices[0], nb.distances[0]), (1, 0.0));
        // equidistant from rows 0 and 1: lower index first
        let nb = idx.knn(&[1.5, 1.5], 2).unwrap();
        assert_eq!(nb.indices, vec![0, 1]);
    }

    #[test]
    fn k_out_of_range() {
        let idx = index(&[[0.0, 0.0]], &[&[1.0]]);
        assert!(idx.knn(&[0.0, 0.0], 0).is_err());
        assert!(idx.knn(&[0.0, 0.0], 2).is_err());
        assert!(idx.knn(&[0.0], 1).is_err());
        let cfg = ImputationConfig { k: 2, aggregation: Aggregation::Average };
        assert_eq!(cfg.validate(1).unwrap_err().exit_code(), 4);
        let simple = ImputationConfig { k: 50, aggregation: Aggregation::Simple };
        assert!(simple.validate(1).is_ok());
    }

    #[test]
    fn aggregation_rules() {
        let r = DenseMatrix::from_rows(&[[1.0, 10.0], [3.0, 30.0]]).unwrap();
        let nb = Neighbors { indices: vec![0, 1], distances: vec![2.0, 2.0] };
        let avg = aggregate(&r, std::slice::from_ref(&nb), Aggregation::Average).unwrap();
        assert_eq!(avg.data(), &[2.0, 20.0]);
        let simple = aggregate(&r, &[nb], Aggregation::Simple).unwrap();
        assert_eq!(simple.data(), &[1.0, 10.0]);
        let near = Neighbors { indices: vec![0, 1], distances: vec![0.0, 5.0] };
        let w = aggregate(&r, &[near], Aggregation::Weighted).unwrap();
        assert!((w.get(0, 0) - 1.0).abs() < 1e-6 && (w.get(0, 1) - 10.0).abs() < 1e-6);
    }

    #[test]
    fn blix_round_trip() {
        let idx = index(&[[0.5, 0.0], [3.0, -4.0]], &[&[1.0, 2.0], &[2.0, 0.0]]);
        let bytes = idx.to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"BLIX");
        assert_eq!(ReferenceIndex::from_bytes(&bytes).unwrap(), idx);
        assert!(ReferenceIndex::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
