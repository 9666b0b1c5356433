//! Clustering accuracy (optimal label matching), normalized mutual
//! information and the epoch-to-epoch assignment change.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("cost matrix is not square: {rows} rows, row {row} has {cols} columns")]
    NonSquare { rows: usize, row: usize, cols: usize },
    #[error("non-finite cost")]
    NonFinite,
    #[error("empty input")]
    Empty,
}

/// `counts[p][t]`: segments with predicted cluster `p` and true class `t`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], truth: &[usize]) -> Result<Self, MetricsError> {
        check_lengths(pred, truth)?;
        let kp = pred.iter().max().map_or(0, |m| m + 1);
        let kt = truth.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0; kt]; kp];
        for (&p, &t) in pred.iter().zip(truth) {
            counts[p][t] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<(), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Minimum-cost perfect matching on a square cost matrix.
///
/// Returns `(assignment, cost)` where row `i` is matched to column
/// `assignment[i]`. Shortest augmenting paths with row/column potentials,
/// `O(k^3)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64), MetricsError> {
    let n = cost.len();
    for (row, r) in cost.iter().enumerate() {
        if r.len() != n {
            return Err(MetricsError::NonSquare { rows: n, row, cols: r.len() });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(MetricsError::NonFinite);
        }
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((assignment, total))
}

/// Fraction of segments correctly labeled under the best one-to-one mapping
/// from predicted clusters to classes.
pub fn clustering_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    let cm = ConfusionMatrix::new(pred, truth)?;
    let k = cm.counts.len().max(cm.counts.first().map_or(0, Vec::len));
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|p| (0..k).map(|t| -(cm.counts.get(p).and_then(|r| r.get(t)).copied().unwrap_or(0) as f64)).collect())
        .collect();
    let (_, c) = hungarian(&cost)?;
    Ok(-c / pred.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNormalization {
    /// `2 I / (H(u) + H(v))`
    #[default]
    Arithmetic,
    /// `I / sqrt(H(u) H(v))`
    Geometric,
}

/// Normalized mutual information with the arithmetic-mean normalization.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64, MetricsError> {
    nmi_with(pred, truth, NmiNormalization::Arithmetic)
}

pub fn nmi_with(pred: &[usize], truth: &[usize], norm: NmiNormalization) -> Result<f64, MetricsError> {
    let cm = ConfusionMatrix::new(pred, truth)?;
    let n = pred.len() as f64;
    let a: Vec<f64> = cm.counts.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let kt = cm.counts.first().map_or(0, Vec::len);
    let b: Vec<f64> = (0..kt).map(|t| cm.counts.iter().map(|r| r[t]).sum::<usize>() as f64).collect();
    let entropy = |m: &[f64]| -> f64 {
        m.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum()
    };
    let (hu, hv) = (entropy(&a), entropy(&b));
    let mut mi = 0.0;
    for (p, row) in cm.counts.iter().enumerate() {
        for (t, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += (c / n) * (n * c / (a[p] * b[t])).ln();
            }
        }
    }
    let score = match (hu == 0.0, hv == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => match norm {
            NmiNormalization::Arithmetic => 2.0 * mi / (hu + hv),
            NmiNormalization::Geometric => mi / (hu * hv).sqrt(),
        },
    };
    Ok(score.clamp(0.0, 1.0))
}

/// Fraction of positions whose raw label differs.
pub fn assignment_change(prev: &[usize], cur: &[usize]) -> Result<f64, MetricsError> {
    check_lengths(prev, cur)?;
    let changed = prev.iter().zip(cur).filter(|(a, b)| a != b).count();
    Ok(changed as f64 / prev.len() as f64)
}

/// One cell group of the evaluation matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub split: String,
    /// `raw`, `embedding` or `end-to-end`.
    pub space: String,
    /// `None` when the split has no labels.
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub nmi_geometric: Option<f64>,
    pub n: usize,
    pub k: usize,
}

impl EvalReport {
    /// Scores `pred` against `truth` when labels are available.
    pub fn score(method: &str, split: &str, space: &str, pred: &[usize], truth: Option<&[usize]>, k: usize) -> Result<Self, MetricsError> {
        let (acc, nmi_a, nmi_g) = match truth {
            Some(t) => (
                Some(clustering_accuracy(pred, t)?),
                Some(nmi(pred, t)?),
                Some(nmi_with(pred, t, NmiNormalization::Geometric)?),
            ),
            None => (None, None, None),
        };
        Ok(Self {
            method: method.into(),
            split: split.into(),
            space: space.into(),
            acc,
            nmi: nmi_a,
            nmi_geometric: nmi_g,
            n: pred.len(),
            k,
        })
    }

    pub const CSV_HEADER: &'static str = "space,method,split,n,k,acc,nmi,nmi_geometric";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
        format!(
            "{},{},{},{},{},{},{},{}",
            self.space,
            self.method,
            self.split,
            self.n,
            self.k,
            f(self.acc),
            f(self.nmi),
            f(self.nmi_geometric)
        )
    }
}

/// Aligned text table, percentages with two decimals.
pub fn format_table(reports: &[EvalReport], geometric: bool) -> String {
    let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}%", 100.0 * x));
    let mut rows = vec![vec![
        "space".to_string(),
        "method".into(),
        "split".into(),
        "NMI".into(),
        "ACC".into(),
    ]];
    if geometric {
        rows[0].push("NMI(geo)".into());
    }
    for r in reports {
        let mut row = vec![r.space.clone(), r.method.clone(), r.split.clone(), pct(r.nmi), pct(r.acc)];
        if geometric {
            row.push(pct(r.nmi_geometric));
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hungarian_identity_and_two_by_two() {
        let id = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        assert_eq!(hungarian(&id).unwrap(), (vec![0, 1, 2], 0.0));
        assert_eq!(hungarian(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap(), (vec![1, 0], 3.0));
    }

    #[test]
    fn hungarian_rejects_non_square() {
        let err = hungarian(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, MetricsError::NonSquare { .. }));
    }

    #[test]
    fn accuracy_examples() {
        let truth = [0, 0, 1, 1, 2, 2];
        assert_eq!(clustering_accuracy(&truth, &truth).unwrap(), 1.0);
        let permuted: Vec<usize> = truth.iter().map(|&t| [2, 0, 1][t]).collect();
        assert_eq!(clustering_accuracy(&permuted, &truth).unwrap(), 1.0);
        let acc = clustering_accuracy(&[1, 1, 0, 0, 0, 2], &truth).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_with_unequal_cluster_counts() {
        // two predicted clusters for three classes
        let acc = clustering_accuracy(&[0, 0, 1, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
        assert!((acc - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert_eq!(clustering_accuracy(&[0], &[0, 1]), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(nmi(&[0], &[0, 1]), Err(MetricsError::LengthMismatch(1, 2)));
        assert_eq!(assignment_change(&[0], &[]), Err(MetricsError::LengthMismatch(1, 0)));
    }

    #[test]
    fn nmi_examples() {
        let a = [0, 0, 1, 1, 2, 2];
        assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(nmi(&[0, 1, 0, 1], &[0, 0, 1, 1]).unwrap().abs() < 1e-12);
        assert_eq!(nmi(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn nmi_variants_agree_on_balanced_case() {
        let pred = [0, 0, 1, 1, 1, 0, 2, 2];
        let truth = [0, 0, 1, 1, 0, 1, 2, 2];
        let a = nmi(&pred, &truth).unwrap();
        let g = nmi_with(&pred, &truth, NmiNormalization::Geometric).unwrap();
        // equal marginal entropies make the two normalizations coincide
        assert!((a - g).abs() < 1e-12);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn assignment_change_examples() {
        assert_eq!(assignment_change(&[0, 1, 2], &[0, 1, 2]).unwrap(), 0.0);
        assert_eq!(assignment_change(&[0, 1, 2], &[1, 2, 0]).unwrap(), 1.0);
        let prev = vec![0; 1000];
        let mut cur = prev.clone();
        cur[17] = 1;
        assert_eq!(assignment_change(&prev, &cur).unwrap(), 0.001);
    }

    #[test]
    fn report_rows() {
        let r = EvalReport::score("k-means", "train", "raw", &[0, 1], Some(&[1, 0]), 2).unwrap();
        assert_eq!(r.csv_row(), "raw,k-means,train,2,2,1.000000,1.000000,1.000000");
        let r = EvalReport::score("k-means", "test", "raw", &[0, 1], None, 2).unwrap();
        assert_eq!(r.csv_row(), "raw,k-means,test,2,2,n/a,n/a,n/a");
        let table = format_table(&[r], false);
        assert!(table.lines().nth(1).unwrap().contains("n/a"));
    }
}
