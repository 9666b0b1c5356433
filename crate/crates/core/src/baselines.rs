//! Classical clustering: k-means with k-means++ seeding and agglomerative
//! clustering (average, complete and Ward linkage) driven by the
//! Lance-Williams recurrence. Euclidean distance throughout.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need at least k = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be positive")]
    ZeroClusters,
    #[error("points must be a finite rank-2 matrix")]
    BadInput,
    #[error("unknown linkage {0:?} (expected average, complete or ward)")]
    UnknownLinkage(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringResult {
    /// Cluster id in `[0, k)` per point.
    pub labels: Vec<usize>,
    /// `k x m`, k-means only.
    pub centroids: Option<Tensor>,
    /// Within-cluster sum of squared distances, k-means only.
    pub inertia: Option<f64>,
}

fn check_points(x: &Tensor, k: usize) -> Result<(usize, usize), BaselineError> {
    if x.rank() != 2 || !x.is_finite() {
        return Err(BaselineError::BadInput);
    }
    if k == 0 {
        return Err(BaselineError::ZeroClusters);
    }
    let (n, m) = x.dims2();
    if n < k {
        return Err(BaselineError::TooFewPoints { n, k });
    }
    Ok((n, m))
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, tol: 1e-6, n_init: 10 }
    }
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub fn kmeans_plus_plus(x: &Tensor, k: usize, rng: &mut impl Rng) -> Result<Tensor, BaselineError> {
    let (n, m) = check_points(x, k)?;
    let mut centers = Vec::with_capacity(k * m);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(x.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for _ in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // every point coincides with a centre
            rng.random_range(0..n)
        };
        let row = x.row(pick).to_vec();
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(sq_dist(x.row(i), &row));
        }
        centers.extend_from_slice(&row);
    }
    Ok(Tensor::from_parts(vec![k, m], centers))
}

fn assign(x: &Tensor, centroids: &Tensor) -> (Vec<usize>, Vec<f64>) {
    let k = centroids.rows();
    (0..x.rows())
        .map(|i| {
            let mut best = (0, f64::INFINITY);
            for j in 0..k {
                let d = sq_dist(x.row(i), centroids.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Lloyd iterations from given centroids. Returns the result and the
/// inertia after every assignment step.
pub fn kmeans_lloyd(x: &Tensor, init: Tensor, max_iter: usize, tol: f64) -> Result<(ClusteringResult, Vec<f64>), BaselineError> {
    let k = init.rows();
    let (n, m) = check_points(x, k)?;
    if init.cols() != m {
        return Err(BaselineError::BadInput);
    }
    let mut centroids = init;
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let (labels, dists) = assign(x, &centroids);
        history.push(dists.iter().sum());
        let mut sums = vec![0.0; k * m];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums[l * m..(l + 1) * m].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let mut next = vec![0.0; k * m];
        // empty clusters move to the points farthest from their centroid
        let mut by_distance: Vec<usize> = (0..n).collect();
        by_distance.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
        let mut spare = by_distance.into_iter();
        for j in 0..k {
            let dst = &mut next[j * m..(j + 1) * m];
            if counts[j] == 0 {
                let p = spare.next().expect("n >= k");
                dst.copy_from_slice(x.row(p));
            } else {
                for (d, s) in dst.iter_mut().zip(&sums[j * m..(j + 1) * m]) {
                    *d = s / counts[j] as f64;
                }
            }
        }
        let shift: f64 = next.iter().zip(centroids.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        centroids = Tensor::from_parts(vec![k, m], next);
        if shift < tol {
            break;
        }
    }
    let (labels, dists) = assign(x, &centroids);
    let inertia: f64 = dists.iter().sum();
    history.push(inertia);
    Ok((ClusteringResult { labels, centroids: Some(centroids), inertia: Some(inertia) }, history))
}

/// Best of `n_init` seeded k-means++/Lloyd runs by inertia.
pub fn kmeans(x: &Tensor, k: usize, seed: u64, cfg: &KMeansConfig) -> Result<ClusteringResult, BaselineError> {
    check_points(x, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<ClusteringResult> = None;
    for _ in 0..cfg.n_init.max(1) {
        let init = kmeans_plus_plus(x, k, &mut rng)?;
        let (res, _) = kmeans_lloyd(x, init, cfg.max_iter, cfg.tol)?;
        if best.as_ref().is_none_or(|b| res.inertia < b.inertia) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Average,
    Complete,
    Ward,
}

impl Linkage {
    pub const ALL: [Linkage; 3] = [Linkage::Average, Linkage::Complete, Linkage::Ward];

    pub fn name(self) -> &'static str {
        match self {
            Linkage::Average => "average",
            Linkage::Complete => "complete",
            Linkage::Ward => "ward",
        }
    }
}

impl FromStr for Linkage {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "ward" => Ok(Linkage::Ward),
            _ => Err(BaselineError::UnknownLinkage(s.into())),
        }
    }
}

/// One agglomeration step. Clusters are named by their smallest point
/// index; `a < b` and the merged cluster keeps the name `a`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Linkage distance at the merge, on the Euclidean scale (Ward heights
    /// are `sqrt(2 n_a n_b / (n_a + n_b)) * |c_a - c_b|`).
    pub height: f64,
    pub size: usize,
}

/// Upper-triangle pairwise dissimilarities.
struct Condensed {
    n: usize,
    d: Vec<f64>,
}

impl Condensed {
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.d[self.idx(i, j)]
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.d[k] = v;
    }
}

/// Greedy agglomeration until `stop_at` clusters remain. At each step the
/// pair with the smallest linkage distance merges; ties go to the
/// lexicographically smallest `(a, b)`.
pub fn agglomerative_merges(x: &Tensor, linkage: Linkage, stop_at: usize) -> Result<Vec<Merge>, BaselineError> {
    let (n, _) = check_points(x, stop_at.max(1))?;
    // Ward works on squared distances, the other linkages on plain ones.
    let squared = linkage == Linkage::Ward;
    let mut dist = Condensed { n, d: Vec::with_capacity(n * n.saturating_sub(1) / 2) };
    for i in 0..n {
        for j in i + 1..n {
            let d2 = sq_dist(x.row(i), x.row(j));
            dist.d.push(if squared { d2 } else { d2.sqrt() });
        }
    }
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    // nearest active neighbour with a larger index
    let mut nn = vec![usize::MAX; n];
    let mut nnd = vec![f64::INFINITY; n];
    let rescan = |i: usize, active: &[bool], dist: &Condensed, nn: &mut [usize], nnd: &mut [f64]| {
        nn[i] = usize::MAX;
        nnd[i] = f64::INFINITY;
        for (j, _) in active.iter().enumerate().skip(i + 1).filter(|(_, a)| **a) {
            let d = dist.get(i, j);
            if d < nnd[i] {
                nnd[i] = d;
                nn[i] = j;
            }
        }
    };
    for i in 0..n {
        rescan(i, &active, &dist, &mut nn, &mut nnd);
    }

    let mut merges = Vec::with_capacity(n.saturating_sub(stop_at));
    let mut clusters = n;
    while clusters > stop_at.max(1) {
        let mut a = usize::MAX;
        for i in 0..n {
            if active[i] && nn[i] != usize::MAX && (a == usize::MAX || nnd[i] < nnd[a]) {
                a = i;
            }
        }
        let b = nn[a];
        let d_ab = nnd[a];
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dka, dkb) = (dist.get(k, a), dist.get(k, b));
            let nk = size[k] as f64;
            let updated = match linkage {
                Linkage::Average => (na * dka + nb * dkb) / (na + nb),
                Linkage::Complete => dka.max(dkb),
                Linkage::Ward => ((na + nk) * dka + (nb + nk) * dkb - nk * d_ab) / (na + nb + nk),
            };
            dist.set(k, a, updated);
        }
        active[b] = false;
        size[a] += size[b];
        clusters -= 1;
        merges.push(Merge { a, b, height: if squared { d_ab.max(0.0).sqrt() } else { d_ab }, size: size[a] });

        for i in 0..n {
            if !active[i] {
                continue;
            }
            if i == a || nn[i] == a || nn[i] == b {
                rescan(i, &active, &dist, &mut nn, &mut nnd);
            } else if i < a {
                let d = dist.get(i, a);
                if d < nnd[i] || (d == nnd[i] && a < nn[i]) {
                    nnd[i] = d;
                    nn[i] = a;
                }
            }
        }
    }
    Ok(merges)
}

/// Cluster labels (ids by first appearance) after applying `merges`.
pub fn labels_from_merges(n: usize, merges: &[Merge]) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    for m in merges {
        parent[m.b] = m.a;
    }
    fn root(parent: &[usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    (0..n)
        .map(|i| {
            let r = root(&parent, i);
            if ids[r] == usize::MAX {
                ids[r] = next;
                next += 1;
            }
            ids[r]
        })
        .collect()
}

pub fn agglomerative(x: &Tensor, k: usize, linkage: Linkage) -> Result<ClusteringResult, BaselineError> {
    let (n, _) = check_points(x, k)?;
    let merges = agglomerative_merges(x, linkage, k)?;
    Ok(ClusteringResult { labels: labels_from_merges(n, &merges), centroids: None, inertia: None })
}

/// Mean point of each cluster, `k x m`.
pub fn cluster_means(x: &Tensor, labels: &[usize], k: usize) -> Tensor {
    let m = x.cols();
    let mut sums = vec![0.0; k * m];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l * m..(l + 1) * m].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for j in 0..k {
        let c = counts[j].max(1) as f64;
        sums[j * m..(j + 1) * m].iter_mut().for_each(|s| *s /= c);
    }
    Tensor::from_parts(vec![k, m], sums)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn kmeans_distinct_points() {
        let x = pts(&[&[0.0, 0.0], &[5.0, 1.0], &[-3.0, 2.0]]);
        let r = kmeans(&x, 3, 1, &KMeansConfig::default()).unwrap();
        let mut l = r.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2]);
        assert_eq!(r.inertia, Some(0.0));
    }

    #[test]
    fn kmeans_one_dimensional() {
        // the best 2-partition of {0, 0.1, 10, 10.1} by brute force is {0, 0.1} | {10, 10.1}
        let x = pts(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let r = kmeans(&x, 2, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
        let c = r.centroids.unwrap();
        let mut cs = [c.at(0, 0), c.at(1, 0)];
        cs.sort_by(f64::total_cmp);
        assert!((cs[0] - 0.05).abs() < 1e-12 && (cs[1] - 10.05).abs() < 1e-12);
    }

    #[test]
    fn kmeans_reseeds_empty_clusters() {
        // both initial centres far away on one side: the second attracts nothing
        let x = pts(&[&[0.0], &[1.0], &[10.0], &[11.0]]);
        let init = pts(&[&[5.0], &[100.0]]);
        let (r, hist) = kmeans_lloyd(&x, init, 50, 1e-9).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_ne!(r.labels[1], r.labels[2]);
        assert_eq!(r.inertia, Some(1.0));
        assert!(hist.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn kmeans_needs_enough_points() {
        let x = pts(&[&[0.0]]);
        assert_eq!(kmeans(&x, 2, 0, &KMeansConfig::default()).unwrap_err(), BaselineError::TooFewPoints { n: 1, k: 2 });
    }

    #[test]
    fn three_points_any_linkage() {
        let x = pts(&[&[0.0], &[1.0], &[10.0]]);
        for l in Linkage::ALL {
            let merges = agglomerative_merges(&x, l, 1).unwrap();
            assert_eq!((merges[0].a, merges[0].b), (0, 1));
            assert_eq!(agglomerative(&x, 2, l).unwrap().labels, vec![0, 0, 1]);
        }
    }

    #[test]
    fn ward_heights_by_hand() {
        // squared distances: d01 = 1, d23 = 4, d02 = 16, d03 = 20, d12 = 17, d13 = 17
        // merge {0,1} at 1; then {2,3} at 4; then
        // d({0,1},2) = (2*16 + 2*17 - 1)/3 = 65/3, d({0,1},3) = (2*20 + 2*17 - 1)/3 = 73/3
        // d({0,1},{2,3}) = (3*65/3 + 3*73/3 - 2*4)/4 = 32.5
        let x = pts(&[&[0.0, 0.0], &[0.0, 1.0], &[4.0, 0.0], &[4.0, 2.0]]);
        let m = agglomerative_merges(&x, Linkage::Ward, 1).unwrap();
        assert_eq!((m[0].a, m[0].b, m[1].a, m[1].b, m[2].a, m[2].b), (0, 1, 2, 3, 0, 2));
        assert!((m[0].height - 1.0).abs() < 1e-12);
        assert!((m[1].height - 2.0).abs() < 1e-12);
        assert!((m[2].height - 32.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_is_identity() {
        let x = pts(&[&[0.0], &[3.0], &[1.0]]);
        for l in Linkage::ALL {
            assert_eq!(agglomerative(&x, 3, l).unwrap().labels, vec![0, 1, 2]);
        }
    }

    #[test]
    fn tie_goes_to_lowest_pair() {
        let x = pts(&[&[0.0], &[1.0], &[2.0], &[3.0]]);
        let m = agglomerative_merges(&x, Linkage::Complete, 3).unwrap();
        assert_eq!((m[0].a, m[0].b), (0, 1));
    }

    #[test]
    fn linkage_names_parse() {
        assert_eq!("Ward".parse::<Linkage>().unwrap(), Linkage::Ward);
        assert!("single".parse::<Linkage>().is_err());
    }
}
