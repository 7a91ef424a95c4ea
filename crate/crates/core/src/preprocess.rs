//! Total-count normalization, highly variable gene selection and gene-set
//! bookkeeping.

use std::collections::BTreeSet;
use std::fmt;

pub use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::math::DenseMatrix;

/// Default total count each spot is scaled to before `log1p`.
pub const DEFAULT_TARGET_SUM: f64 = 1e4;
/// Mean-expression bins used to standardize dispersions.
pub const DEFAULT_HVG_BINS: usize = 20;
/// Partial liver marker panel used when no marker list is supplied.
pub const DEFAULT_MARKER_GENES: [&str; 6] = ["CYP3A4", "CYP1A2", "CYP2E1", "GLUL", "FABP1", "SLCO1B3"];

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum GeneSetLabel {
    Mg,
    Heg,
    Hvg,
    Custom(String),
}

impl fmt::Display for GeneSetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mg => f.write_str("MG"),
            Self::Heg => f.write_str("HEG"),
            Self::Hvg => f.write_str("HVG"),
            Self::Custom(s) => f.write_str(s),
        }
    }
}

/// Distinct gene indices into a gene universe of size `universe`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneSet {
    pub label: GeneSetLabel,
    pub indices: Vec<usize>,
    pub universe: usize,
}

impl GeneSet {
    pub fn new(label: GeneSetLabel, indices: Vec<usize>, universe: usize) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for &i in &indices {
            if i >= universe {
                return Err(Error::validation(format!(
                    "gene index {i} out of range for {universe} genes"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::validation(format!("gene index {i} repeated in set")));
            }
        }
        Ok(Self {
            label,
            indices,
            universe,
        })
    }

    /// Resolves names against `gene_names`; returns the set and any names not found.
    pub fn from_names(
        label: GeneSetLabel,
        names: &[impl AsRef<str>],
        gene_names: &[String],
    ) -> Result<(Self, Vec<String>)> {
        let mut idx = Vec::new();
        let mut missing = Vec::new();
        for n in names {
            let n = n.as_ref();
            match gene_names.iter().position(|g| g == n) {
                Some(i) if !idx.contains(&i) => idx.push(i),
                Some(_) => {}
                None => missing.push(n.to_owned()),
            }
        }
        Ok((Self::new(label, idx, gene_names.len())?, missing))
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn names(&self, gene_names: &[String]) -> Vec<String> {
        self.indices.iter().map(|&i| gene_names[i].clone()).collect()
    }
}

fn row_sums(m: &DenseMatrix) -> Vec<f64> {
    m.iter_rows()
        .map(|r| r.iter().map(|&v| f64::from(v)).sum())
        .collect()
}

/// Scales each row to sum to `target_sum` (no log).
pub fn scale_to_total(raw: &DenseMatrix, target_sum: f64) -> Result<DenseMatrix> {
    scale_named(raw, target_sum, |i| format!("row{i}"))
}

fn scale_named(raw: &DenseMatrix, target_sum: f64, name: impl Fn(usize) -> String) -> Result<DenseMatrix> {
    if !(target_sum > 0.0 && target_sum.is_finite()) {
        return Err(Error::validation(format!("target_sum must be positive, got {target_sum}")));
    }
    if let Some(v) = raw.data().iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::validation(format!("raw counts must be finite and >= 0, found {v}")));
    }
    let sums = row_sums(raw);
    let zero: Vec<String> = sums
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= 0.0)
        .map(|(i, _)| name(i))
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroSumRows { spots: zero });
    }
    let mut out = raw.clone();
    for (r, s) in sums.iter().enumerate() {
        let scale = target_sum / s;
        for v in out.row_mut(r) {
            *v = (f64::from(*v) * scale) as f32;
        }
    }
    Ok(out)
}

/// Total-count normalization followed by `log1p`.
pub fn normalize(raw: &DenseMatrix, target_sum: f64) -> Result<DenseMatrix> {
    Ok(log1p(&scale_to_total(raw, target_sum)?))
}

fn log1p(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| f64::from(v).ln_1p() as f32)
}

/// [`normalize`] on a dataset's expression, reporting offending spot IDs.
pub fn normalize_dataset(ds: &PairedDataset, target_sum: f64) -> Result<PairedDataset> {
    let scaled = scale_named(&ds.expression, target_sum, |i| ds.spot_ids[i].clone())?;
    ds.with_expression(log1p(&scaled))
}

fn column_stats(m: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let means = m.column_means();
    let mut ss = vec![0.0f64; m.cols()];
    for r in m.iter_rows() {
        for ((s, &v), mu) in ss.iter_mut().zip(r).zip(&means) {
            let d = f64::from(v) - mu;
            *s += d * d;
        }
    }
    let denom = (m.rows().max(2) - 1) as f64;
    (means, ss.iter().map(|s| s / denom).collect())
}

fn mean_std(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Normalized dispersion per gene: `var/mean` z-scored within equal-frequency
/// mean bins. Unexpressed genes get `None`.
///
/// A bin with fewer than two genes or no spread falls back to the z-score
/// against all expressed genes.
pub fn normalized_dispersions(pre_log: &DenseMatrix, n_bins: usize) -> Vec<Option<f64>> {
    let (means, vars) = column_stats(pre_log);
    let expressed: Vec<usize> = (0..means.len()).filter(|&g| means[g] > 0.0).collect();
    let disp: Vec<f64> = (0..means.len())
        .map(|g| if means[g] > 0.0 { vars[g] / means[g] } else { 0.0 })
        .collect();
    let mut out = vec![None; means.len()];
    if expressed.is_empty() {
        return out;
    }
    let mut by_mean = expressed.clone();
    by_mean.sort_by(|&a, &b| means[a].total_cmp(&means[b]).then(a.cmp(&b)));
    let n_bins = n_bins.max(1);
    let mut bins = vec![Vec::new(); n_bins];
    for (rank, &g) in by_mean.iter().enumerate() {
        bins[rank * n_bins / by_mean.len()].push(g);
    }
    let all: Vec<f64> = expressed.iter().map(|&g| disp[g]).collect();
    let (gm, gs) = mean_std(&all);
    for bin in bins.iter().filter(|b| !b.is_empty()) {
        let vals: Vec<f64> = bin.iter().map(|&g| disp[g]).collect();
        let (bm, bs) = mean_std(&vals);
        for &g in bin {
            let z = if bin.len() >= 2 && bs > 0.0 {
                (disp[g] - bm) / bs
            } else if gs > 0.0 {
                (disp[g] - gm) / gs
            } else {
                0.0
            };
            out[g] = Some(z);
        }
    }
    out
}

/// Top `n` highly variable genes from total-count normalized, pre-log values.
///
/// Genes are ranked by normalized dispersion; genes with zero dispersion
/// always rank after every varying gene, ties go to the lower index.
pub fn select_hvg(pre_log: &DenseMatrix, n: usize) -> Result<GeneSet> {
    select_hvg_binned(pre_log, n, DEFAULT_HVG_BINS)
}

pub fn select_hvg_binned(pre_log: &DenseMatrix, n: usize, n_bins: usize) -> Result<GeneSet> {
    let z = normalized_dispersions(pre_log, n_bins);
    let (means, vars) = column_stats(pre_log);
    let mut cand: Vec<(usize, bool, f64)> = z
        .iter()
        .enumerate()
        .filter_map(|(g, z)| z.map(|z| (g, vars[g] > 0.0 && means[g] > 0.0, z)))
        .collect();
    if n > cand.len() {
        return Err(Error::validation(format!(
            "requested {n} variable genes but only {} are expressed",
            cand.len()
        )));
    }
    cand.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    GeneSet::new(
        GeneSetLabel::Hvg,
        cand.iter().take(n).map(|c| c.0).collect(),
        pre_log.cols(),
    )
}

/// Sorted union of per-slice selections over the same gene universe.
pub fn hvg_union(sets: &[GeneSet]) -> Result<GeneSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::validation("hvg_union needs at least one set"))?;
    if let Some(bad) = sets.iter().find(|s| s.universe != first.universe) {
        return Err(Error::validation(format!(
            "gene universes differ: {} vs {} genes",
            first.universe, bad.universe
        )));
    }
    let union: BTreeSet<usize> = sets.iter().flat_map(|s| s.indices.iter().copied()).collect();
    GeneSet::new(GeneSetLabel::Hvg, union.into_iter().collect(), first.universe)
}

/// Top `n` genes by mean expression.
pub fn select_heg(normalized: &DenseMatrix, n: usize) -> Result<GeneSet> {
    if n > normalized.cols() {
        return Err(Error::validation(format!(
            "requested {n} expressed genes from {} columns",
            normalized.cols()
        )));
    }
    let means = normalized.column_means();
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    order.truncate(n);
    GeneSet::new(GeneSetLabel::Heg, order, normalized.cols())
}

/// Size of the HEG and HVG evaluation sets.
pub const DEFAULT_SET_SIZE: usize = 50;

/// Resolves an evaluation gene-set spec against `normalized` expression:
/// `heg` and `hvg` select the top [`DEFAULT_SET_SIZE`] genes, `mg` uses
/// [`DEFAULT_MARKER_GENES`], anything else is read as a file of gene names,
/// one per line, labelled by the file stem.
///
/// Returns the set and any names that were not found.
pub fn resolve_gene_set(spec: &str, normalized: &DenseMatrix, gene_names: &[String]) -> Result<(GeneSet, Vec<String>)> {
    let top = DEFAULT_SET_SIZE.min(normalized.cols());
    match spec.to_ascii_lowercase().as_str() {
        "heg" => Ok((select_heg(normalized, top)?, Vec::new())),
        "hvg" => {
            let pre_log = normalized.map(|v| f64::from(v).exp_m1() as f32);
            let expressed = pre_log.column_means().iter().filter(|&&m| m > 0.0).count();
            Ok((select_hvg(&pre_log, top.min(expressed))?, Vec::new()))
        }
        "mg" => GeneSet::from_names(GeneSetLabel::Mg, &DEFAULT_MARKER_GENES, gene_names),
        _ => {
            let path = std::path::Path::new(spec);
            let names = crate::io::read_lines(path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(spec);
            let label = match stem.to_ascii_lowercase().as_str() {
                "mg" => GeneSetLabel::Mg,
                "heg" => GeneSetLabel::Heg,
                "hvg" => GeneSetLabel::Hvg,
                _ => GeneSetLabel::Custom(stem.to_owned()),
            };
            let names: Vec<&str> = names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()).collect();
            GeneSet::from_names(label, &names, gene_names)
        }
    }
}

/// Result of [`preprocess_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    /// Normalized expression restricted to `genes`, slices stacked in order.
    pub dataset: PairedDataset,
    /// Union of per-slice variable genes, indexed into the input gene list.
    pub genes: GeneSet,
    /// Variable genes actually taken per slice after clamping.
    pub hvg_per_slice: usize,
    pub warnings: Vec<String>,
}

/// Normalizes every slice, picks `n_hvg` variable genes per slice and keeps
/// the union of those genes. `n_hvg = 0` keeps every gene.
///
/// Slices must share one gene list. Spots without a split label are
/// labelled `slice<i>` (1-based) when more than one slice is given.
pub fn preprocess_slices(slices: &[PairedDataset], n_hvg: usize, target_sum: f64) -> Result<Preprocessed> {
    let first = slices
        .first()
        .ok_or_else(|| Error::validation("no input slices"))?;
    if let Some(bad) = slices.iter().position(|s| s.gene_names != first.gene_names) {
        return Err(Error::validation(format!("slice {} has a different gene list", bad + 1)));
    }
    let c = first.n_genes();
    let mut warnings = Vec::new();
    let mut normalized = Vec::with_capacity(slices.len());
    let mut picks = Vec::new();
    let mut per_slice = if n_hvg == 0 { c } else { n_hvg };
    for (i, s) in slices.iter().enumerate() {
        let scaled = scale_named(&s.expression, target_sum, |r| s.spot_ids[r].clone())?;
        if n_hvg > 0 {
            let expressed = scaled.column_means().iter().filter(|&&m| m > 0.0).count();
            let take = n_hvg.min(expressed);
            if take < n_hvg {
                let msg = format!("slice {}: {n_hvg} variable genes requested, {expressed} expressed; taking {take}", i + 1);
                log::warn!("{msg}");
                warnings.push(msg);
            }
            per_slice = per_slice.min(take);
            picks.push(select_hvg(&scaled, take)?);
        }
        normalized.push(s.with_expression(log1p(&scaled))?);
    }
    let genes = if n_hvg == 0 {
        GeneSet::new(GeneSetLabel::Hvg, (0..c).collect(), c)?
    } else {
        hvg_union(&picks)?
    };
    let label_missing = slices.len() > 1;
    let mut merged: Option<PairedDataset> = None;
    for (i, s) in normalized.into_iter().enumerate() {
        let mut s = s.with_genes(&genes.indices);
        if s.split.is_none() && label_missing {
            s.split = Some(vec![format!("slice{}", i + 1); s.n_spots()]);
        }
        merged = Some(match merged {
            None => s,
            Some(m) => stack(&m, &s)?,
        });
    }
    Ok(Preprocessed {
        dataset: merged.expect("at least one slice"),
        genes,
        hvg_per_slice: per_slice,
        warnings,
    })
}

fn stack(a: &PairedDataset, b: &PairedDataset) -> Result<PairedDataset> {
    let coords = match (&a.coords, &b.coords) {
        (Some(x), Some(y)) => Some(x.vstack(y)?),
        _ => None,
    };
    let split = match (&a.split, &b.split) {
        (Some(x), Some(y)) => Some([x.clone(), y.clone()].concat()),
        _ => None,
    };
    let out = PairedDataset {
        features: a.features.vstack(&b.features)?,
        expression: a.expression.vstack(&b.expression)?,
        gene_names: a.gene_names.clone(),
        spot_ids: [a.spot_ids.clone(), b.spot_ids.clone()].concat(),
        coords,
        split,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn normalize_hand_values() {
        let out = normalize(&m(&[&[2.0, 2.0], &[1.0, 3.0]]), 4.0).unwrap();
        let e = [3f64.ln(), 3f64.ln(), 2f64.ln(), 4f64.ln()];
        for (g, e) in out.data().iter().zip(e) {
            assert!((f64::from(*g) - e).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_row_is_rejected_with_ids() {
        let ds = PairedDataset::new(
            DenseMatrix::zeros(3, 1),
            m(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]),
            vec!["A".into(), "B".into()],
            vec!["s0".into(), "s1".into(), "s2".into()],
        )
        .unwrap();
        match normalize_dataset(&ds, 1e4).unwrap_err() {
            Error::ZeroSumRows { spots } => assert_eq!(spots, vec!["s1", "s2"]),
            e => panic!("{e}"),
        }
        assert!(normalize(&m(&[&[0.0, 0.0]]), 4.0).is_err());
        assert!(normalize(&m(&[&[-1.0, 2.0]]), 4.0).is_err());
    }

    #[test]
    fn constant_gene_never_selected() {
        // gene 1 is constant; genes 0 and 2 vary
        let x = m(&[&[1.0, 5.0, 9.0], &[3.0, 5.0, 1.0], &[2.0, 5.0, 4.0], &[6.0, 5.0, 2.0]]);
        for n in 1..=2 {
            let s = select_hvg(&x, n).unwrap();
            assert!(!s.indices.contains(&1), "{s:?}");
        }
    }

    #[test]
    fn full_selection_returns_every_expressed_gene() {
        let x = m(&[&[1.0, 0.0, 2.0, 4.0], &[3.0, 0.0, 1.0, 4.0]]);
        let s = select_hvg(&x, 3).unwrap();
        let mut got = s.indices.clone();
        got.sort();
        assert_eq!(got, vec![0, 2, 3]);
        assert!(select_hvg(&x, 4).is_err());
    }

    #[test]
    fn single_bin_zscore_oracle() {
        // three genes with similar means, one much more dispersed
        let x = m(&[
            &[10.0, 10.0, 1.0],
            &[10.5, 9.5, 19.0],
            &[9.5, 10.5, 1.0],
            &[10.0, 10.0, 19.0],
        ]);
        let z = normalized_dispersions(&x, 1);
        // direct evaluation of (disp - mean(disp)) / sd(disp)
        let col = |g: usize| -> Vec<f64> { (0..4).map(|r| f64::from(x.get(r, g))).collect() };
        let disp: Vec<f64> = (0..3)
            .map(|g| {
                let c = col(g);
                let mu = c.iter().sum::<f64>() / 4.0;
                c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 3.0 / mu
            })
            .collect();
        let dm = disp.iter().sum::<f64>() / 3.0;
        let ds = (disp.iter().map(|d| (d - dm).powi(2)).sum::<f64>() / 2.0).sqrt();
        for g in 0..3 {
            assert!((z[g].unwrap() - (disp[g] - dm) / ds).abs() < 1e-9);
        }
        assert_eq!(select_hvg_binned(&x, 1, 1).unwrap().indices, vec![2]);
    }

    #[test]
    fn union_rules() {
        let a = GeneSet::new(GeneSetLabel::Hvg, vec![0, 1], 5).unwrap();
        let b = GeneSet::new(GeneSetLabel::Hvg, vec![2, 1], 5).unwrap();
        assert_eq!(hvg_union(&[a.clone(), b]).unwrap().indices, vec![0, 1, 2]);
        assert_eq!(hvg_union(&[a.clone(), a.clone()]).unwrap().indices, vec![0, 1]);
        let c = GeneSet::new(GeneSetLabel::Hvg, vec![0, 1, 2], 8).unwrap();
        let d = GeneSet::new(GeneSetLabel::Hvg, vec![3, 4, 5, 6], 8).unwrap();
        assert_eq!(hvg_union(&[c, d]).unwrap().len(), 7);
        let other = GeneSet::new(GeneSetLabel::Hvg, vec![0], 6).unwrap();
        assert!(hvg_union(&[a, other]).is_err());
        assert!(hvg_union(&[]).is_err());
    }

    #[test]
    fn heg_ranking() {
        let x = m(&[&[1.0, 9.0, 3.0], &[1.0, 7.0, 3.0]]);
        assert_eq!(select_heg(&x, 1).unwrap().indices, vec![1]);
        let flat = m(&[&[2.0, 2.0, 2.0, 2.0]]);
        assert_eq!(select_heg(&flat, 3).unwrap().indices, vec![0, 1, 2]);
        assert!(select_heg(&flat, 5).is_err());
    }

    #[test]
    fn gene_set_from_names() {
        let genes: Vec<String> = ["A", "CYP3A4", "GLUL"].iter().map(|s| s.to_string()).collect();
        let (s, missing) = GeneSet::from_names(GeneSetLabel::Mg, &DEFAULT_MARKER_GENES, &genes).unwrap();
        assert_eq!(s.indices, vec![1, 2]);
        assert_eq!(missing.len(), 4);
        assert!(GeneSet::new(GeneSetLabel::Mg, vec![1, 1], 3).is_err());
        assert!(GeneSet::new(GeneSetLabel::Mg, vec![3], 3).is_err());
    }

    #[test]
    fn slices_are_stacked_with_union_genes() {
        let a = PairedDataset::new(
            DenseMatrix::zeros(3, 1),
            m(&[&[1.0, 5.0, 1.0], &[1.0, 1.0, 1.0], &[1.0, 9.0, 1.0]]),
            vec!["A".into(), "B".into(), "C".into()],
            vec!["a0".into(), "a1".into(), "a2".into()],
        )
        .unwrap();
        let mut b = a.clone();
        b.expression = m(&[&[1.0, 1.0, 7.0], &[1.0, 1.0, 1.0], &[1.0, 1.0, 3.0]]);
        b.spot_ids = vec!["b0".into(), "b1".into(), "b2".into()];
        let out = preprocess_slices(&[a.clone(), b], 1, 10.0).unwrap();
        assert_eq!(out.genes.indices, vec![1, 2]);
        assert_eq!(out.dataset.gene_names, vec!["B", "C"]);
        assert_eq!(out.dataset.n_spots(), 6);
        assert_eq!(out.dataset.split.as_ref().unwrap()[3], "slice2");
        let all = preprocess_slices(&[a], 0, 10.0).unwrap();
        assert_eq!(all.dataset.n_genes(), 3);
        assert!(all.dataset.split.is_none());
    }

    #[test]
    fn resolve_builtin_sets() {
        let norm = m(&[&[3.0, 0.5, 1.0], &[2.0, 0.1, 1.0]]);
        let names: Vec<String> = vec!["CYP3A4".into(), "X".into(), "GLUL".into()];
        let (heg, _) = resolve_gene_set("heg", &norm, &names).unwrap();
        assert_eq!(heg.indices, vec![0, 2, 1]);
        let (mg, missing) = resolve_gene_set("MG", &norm, &names).unwrap();
        assert_eq!(mg.indices, vec![0, 2]);
        assert_eq!(missing.len(), 4);
        let (hvg, _) = resolve_gene_set("hvg", &norm, &names).unwrap();
        assert_eq!(hvg.len(), 3);
        assert_eq!(resolve_gene_set("/nonexistent/mg.txt", &norm, &names).unwrap_err().exit_code(), 3);
    }
}
