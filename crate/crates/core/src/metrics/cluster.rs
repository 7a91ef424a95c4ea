use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::DenseMatrix;

pub const DEFAULT_CLUSTERS: usize = 6;
pub const KMEANS_MAX_ITER: usize = 100;
/// Lloyd iterations stop once no center moves further than this.
pub const KMEANS_TOL: f64 = 1e-4;

fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(&x, &y)| {
            let d = f64::from(x) - y;
            d * d
        })
        .sum()
}

/// Nearest center and its squared distance; ties go to the lower index.
fn nearest(row: &[f32], centers: &[Vec<f64>]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, ctr)| (c, sq_dist(row, ctr)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn center_of(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| f64::from(v)).collect()
}

fn plus_plus_init(rows: &DenseMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.rows();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![center_of(rows.row(first))];
    let mut d2: Vec<f64> = rows.iter_rows().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a center
            Err(_) => chosen.iter().position(|c| !c).expect("k <= n"),
        };
        chosen[next] = true;
        let c = center_of(rows.row(next));
        for (d, r) in d2.iter_mut().zip(rows.iter_rows()) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }
    centers
}

/// Seeded k-means++ followed by Lloyd iterations; returns one label per row.
pub fn kmeans(rows: &DenseMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = rows.rows();
    if k == 0 || k > n {
        return Err(Error::validation(format!("k = {k} clusters must be in 1..={n}")));
    }
    let d = rows.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(rows, k, &mut rng);
    let assign = |centers: &[Vec<f64>]| -> Vec<usize> {
        (0..n)
            .into_par_iter()
            .map(|i| nearest(rows.row(i), centers).0)
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter_rows().zip(&labels) {
            counts[l] += 1;
            for (s, &v) in sums[l].iter_mut().zip(r) {
                *s += f64::from(v);
            }
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            // an emptied cluster keeps its previous center
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            let moved: f64 = new.iter().zip(&centers[c]).map(|(a, b)| (a - b) * (a - b)).sum();
            shift = shift.max(moved.sqrt());
            centers[c] = new;
        }
        labels = assign(&centers);
        if shift < KMEANS_TOL {
            break;
        }
    }
    Ok(labels)
}

/// Partition agreement scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub ari: f64,
    /// Mutual information normalized by the arithmetic mean of the entropies.
    pub nmi: f64,
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

fn entropy(counts: &BTreeMap<usize, f64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

pub fn cluster_agreement(a: &[usize], b: &[usize]) -> Result<Agreement> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::validation("cannot compare empty labelings"));
    }
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut ca: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }

    let index: f64 = joint.values().map(|&c| choose2(c)).sum();
    let sa: f64 = ca.values().map(|&c| choose2(c)).sum();
    let sb: f64 = cb.values().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(n).max(1.0);
    let max_index = (sa + sb) / 2.0;
    let ari = if max_index == expected {
        // both partitions trivial in the same way
        if index == max_index { 1.0 } else { 0.0 }
    } else {
        (index - expected) / (max_index - expected)
    };

    let (ha, hb) = (entropy(&ca, n), entropy(&cb, n));
    let mi: f64 = joint
        .iter()
        .map(|(&(x, y), &c)| c / n * (c * n / (ca[&x] * cb[&y])).ln())
        .sum();
    let nmi = if ha == 0.0 && hb == 0.0 {
        1.0
    } else {
        (mi / ((ha + hb) / 2.0)).clamp(0.0, 1.0)
    };
    Ok(Agreement { ari, nmi })
}

/// Number of distinct labels.
pub fn n_clusters(labels: &[usize]) -> usize {
    let mut l = labels.to_vec();
    l.sort_unstable();
    l.dedup();
    l.len()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_permuted_labels() {
        let a = [0, 0, 1, 1, 2, 2, 2];
        let b = [5, 5, 3, 3, 9, 9, 9];
        for other in [&a, &b] {
            let s = cluster_agreement(&a, other).unwrap();
            assert!((s.ari - 1.0).abs() < 1e-12 && (s.nmi - 1.0).abs() < 1e-12, "{s:?}");
        }
    }

    #[test]
    fn single_cluster_against_partition_is_zero() {
        let s = cluster_agreement(&[0; 6], &[0, 0, 1, 1, 2, 3]).unwrap();
        assert_eq!(s.ari, 0.0);
        assert_eq!(s.nmi, 0.0);
    }

    #[test]
    fn ari_textbook_value() {
        // contingency [[2,1,0],[0,1,2]]
        // index = C(2,2)+C(1,2)+C(1,2)+C(2,2) = 2, sa = 6, sb = 3, C(6,2) = 15
        // expected = 18/15 = 1.2, max = 4.5, ari = 0.8 / 3.3
        let s = cluster_agreement(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((s.ari - 0.8 / 3.3).abs() < 1e-12, "{}", s.ari);
    }

    #[test]
    fn kmeans_edge_k() {
        let m = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]]).unwrap();
        assert_eq!(kmeans(&m, 1, 0).unwrap(), vec![0; 4]);
        let all = kmeans(&m, 4, 0).unwrap();
        assert_eq!(n_clusters(&all), 4);
        let two = kmeans(&m, 2, 7).unwrap();
        assert_eq!(two[0], two[1]);
        assert_eq!(two[2], two[3]);
        assert_ne!(two[0], two[2]);
        assert!(kmeans(&m, 0, 0).is_err());
        assert!(kmeans(&m, 5, 0).is_err());
    }

    #[test]
    fn kmeans_handles_duplicate_points() {
        let m = DenseMatrix::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert_eq!(kmeans(&m, 2, 1).unwrap().len(), 3);
    }
}
