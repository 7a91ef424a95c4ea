use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

/// Spot-aligned image features and expression profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset {
    pub features: DenseMatrix,
    pub expression: DenseMatrix,
    pub gene_names: Vec<String>,
    pub spot_ids: Vec<String>,
    /// Array or micrometer coordinates, `n_spots × 2`.
    pub coords: Option<DenseMatrix>,
    /// Per-spot split label (e.g. `reference` / `query`).
    pub split: Option<Vec<String>>,
}

impl PairedDataset {
    pub fn new(
        features: DenseMatrix,
        expression: DenseMatrix,
        gene_names: Vec<String>,
        spot_ids: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            features,
            expression,
            gene_names,
            spot_ids,
            coords: None,
            split: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_coords(mut self, coords: DenseMatrix) -> Result<Self> {
        self.coords = Some(coords);
        self.validate()?;
        Ok(self)
    }

    pub fn with_split(mut self, split: Vec<String>) -> Result<Self> {
        self.split = Some(split);
        self.validate()?;
        Ok(self)
    }

    pub fn n_spots(&self) -> usize {
        self.features.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.expression.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        let rows = |what: &str, r: usize| -> Result<()> {
            if r != n {
                return Err(Error::validation(format!(
                    "{what} has {r} rows but features have {n}"
                )));
            }
            Ok(())
        };
        rows("expression", self.expression.rows())?;
        rows("spot_ids", self.spot_ids.len())?;
        if let Some(c) = &self.coords {
            rows("coords", c.rows())?;
            if c.cols() != 2 {
                return Err(Error::validation(format!("coords must have 2 columns, got {}", c.cols())));
            }
        }
        if let Some(s) = &self.split {
            rows("split labels", s.len())?;
        }
        if self.gene_names.len() != self.expression.cols() {
            return Err(Error::validation(format!(
                "{} gene names for {} expression columns",
                self.gene_names.len(),
                self.expression.cols()
            )));
        }
        let mut seen = HashSet::with_capacity(self.gene_names.len());
        for g in &self.gene_names {
            if !seen.insert(g.as_str()) {
                return Err(Error::validation(format!("duplicate gene name {g:?}")));
            }
        }
        Ok(())
    }

    /// Rows `idx` in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(idx),
            expression: self.expression.select_rows(idx),
            gene_names: self.gene_names.clone(),
            spot_ids: idx.iter().map(|&i| self.spot_ids[i].clone()).collect(),
            coords: self.coords.as_ref().map(|c| c.select_rows(idx)),
            split: self
                .split
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    /// Keeps only the given gene columns.
    pub fn with_genes(&self, genes: &[usize]) -> Self {
        Self {
            expression: self.expression.select_cols(genes),
            gene_names: genes.iter().map(|&g| self.gene_names[g].clone()).collect(),
            ..self.clone()
        }
    }

    pub fn with_expression(&self, expression: DenseMatrix) -> Result<Self> {
        let ds = Self {
            expression,
            ..self.clone()
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Spots whose split label equals `label`.
    pub fn select_split(&self, label: &str) -> Result<Self> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::validation("dataset carries no split labels"))?;
        let idx: Vec<usize> = (0..self.n_spots()).filter(|&i| split[i] == label).collect();
        if idx.is_empty() {
            return Err(Error::validation(format!("no spots carry split label {label:?}")));
        }
        Ok(self.subset(&idx))
    }

    /// Splits into (spots not labelled `label`, spots labelled `label`).
    pub fn split_off(&self, label: &str) -> Result<(Self, Self)> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::validation("dataset carries no split labels"))?;
        let (held, rest): (Vec<usize>, Vec<usize>) = (0..self.n_spots()).partition(|&i| split[i] == label);
        if held.is_empty() || rest.is_empty() {
            return Err(Error::validation(format!(
                "split label {label:?} selects {} of {} spots",
                held.len(),
                self.n_spots()
            )));
        }
        Ok((self.subset(&rest), self.subset(&held)))
    }
}
