//! Baselines and metrics against brute-force oracles.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqcluster::baselines::{agglomerative, agglomerative_merges, kmeans, kmeans_lloyd, kmeans_plus_plus, KMeansConfig, Linkage};
use seqcluster::metrics::{clustering_accuracy, hungarian, nmi, nmi_with, NmiNormalization};
use seqcluster::numerics::Tensor;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn brute_min_cost(cost: &[Vec<f64>]) -> f64 {
    permutations(cost.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn brute_acc(pred: &[usize], truth: &[usize], k: usize) -> f64 {
    permutations(k)
        .iter()
        .map(|p| pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..200 {
        let k = 1 + trial % 6;
        let cost: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let (assign, total) = hungarian(&cost).unwrap();
        let mut seen = assign.clone();
        seen.sort();
        assert_eq!(seen, (0..k).collect::<Vec<_>>());
        let recomputed: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert!((recomputed - total).abs() < 1e-9);
        assert!((total - brute_min_cost(&cost)).abs() < 1e-9, "trial {trial}");
    }
    // integer costs, where ties are common
    for _ in 0..100 {
        let cost: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.random_range(0..4) as f64).collect()).collect();
        assert_eq!(hungarian(&cost).unwrap().1, brute_min_cost(&cost));
    }
}

#[test]
fn accuracy_matches_best_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for trial in 0..200 {
        let k = 1 + trial % 6;
        let n = rng.random_range(1..=50);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        assert!((acc - brute_acc(&pred, &truth, k)).abs() < 1e-12, "trial {trial}");
    }
}

#[test]
fn nmi_extremes() {
    let a = [0, 0, 1, 1, 2, 2, 3, 3];
    assert!((nmi(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    // product partition: every (u, v) pair equally often
    let u: Vec<usize> = (0..36).map(|i| i % 3).collect();
    let v: Vec<usize> = (0..36).map(|i| (i / 3) % 4).collect();
    assert!(nmi(&u, &v).unwrap().abs() < 1e-12);
    assert!(nmi_with(&u, &v, NmiNormalization::Geometric).unwrap().abs() < 1e-12);
}

fn labels_strategy() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
    (1usize..6, 1usize..40).prop_flat_map(|(k, n)| {
        (
            proptest::collection::vec(0..k, n),
            proptest::collection::vec(0..k, n),
            Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

proptest! {
    #[test]
    fn accuracy_ignores_relabeling((pred, truth, perm) in labels_strategy()) {
        let base = clustering_accuracy(&pred, &truth).unwrap();
        let relabeled: Vec<usize> = pred.iter().map(|&l| perm[l]).collect();
        let retruth: Vec<usize> = truth.iter().map(|&l| perm[l]).collect();
        prop_assert!((clustering_accuracy(&relabeled, &truth).unwrap() - base).abs() < 1e-12);
        prop_assert!((clustering_accuracy(&pred, &retruth).unwrap() - base).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn nmi_is_symmetric((a, b, _) in labels_strategy()) {
        for norm in [NmiNormalization::Arithmetic, NmiNormalization::Geometric] {
            let ab = nmi_with(&a, &b, norm).unwrap();
            prop_assert!((ab - nmi_with(&b, &a, norm).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}

/// Linkage distance between two clusters computed from its definition.
fn linkage_distance(x: &Tensor, a: &[usize], b: &[usize], linkage: Linkage) -> f64 {
    let dist = |i: usize, j: usize| -> f64 {
        x.row(i).iter().zip(x.row(j)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };
    match linkage {
        Linkage::Average => {
            a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| dist(i, j)).sum::<f64>()
                / (a.len() * b.len()) as f64
        }
        Linkage::Complete => {
            a.iter().flat_map(|&i| b.iter().map(move |&j| (i, j))).map(|(i, j)| dist(i, j)).fold(0.0, f64::max)
        }
        Linkage::Ward => {
            let m = x.cols();
            let mean = |c: &[usize]| -> Vec<f64> {
                (0..m).map(|f| c.iter().map(|&i| x.at(i, f)).sum::<f64>() / c.len() as f64).collect()
            };
            let (ca, cb) = (mean(a), mean(b));
            let sq: f64 = ca.iter().zip(&cb).map(|(p, q)| (p - q) * (p - q)).sum();
            let (na, nb) = (a.len() as f64, b.len() as f64);
            // increase in within-cluster sum of squares, on the same scale as the engine's heights
            (2.0 * na * nb / (na + nb) * sq).sqrt()
        }
    }
}

/// Greedy merging recomputing every linkage from scratch. Returns the
/// partition at every cluster count from n down to 1 and the merge heights.
fn brute_force_dendrogram(x: &Tensor, linkage: Linkage) -> (Vec<Vec<usize>>, Vec<f64>) {
    let n = x.rows();
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut partitions = vec![canonical(&clusters, n)];
    let mut heights = Vec::new();
    while clusters.len() > 1 {
        // clusters stay sorted by their smallest member, so (i, j) order is lexicographic
        let mut best = (f64::INFINITY, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = linkage_distance(x, &clusters[i], &clusters[j], linkage);
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (h, i, j) = best;
        let moved = clusters.remove(j);
        clusters[i].extend(moved);
        heights.push(h);
        partitions.push(canonical(&clusters, n));
    }
    partitions.reverse();
    (partitions, heights)
}

fn canonical(clusters: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut owner = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            owner[i] = c;
        }
    }
    relabel(&owner)
}

fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Tensor {
    let data = (0..n * m).map(|_| rng.random_range(-3.0..3.0)).collect();
    Tensor::new(vec![n, m], data).unwrap()
}

#[test]
fn agglomerative_matches_brute_force_merges() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..100 {
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=3);
        let x = random_points(&mut rng, n, m);
        for linkage in Linkage::ALL {
            let (partitions, heights) = brute_force_dendrogram(&x, linkage);
            let merges = agglomerative_merges(&x, linkage, 1).unwrap();
            for (merge, h) in merges.iter().zip(&heights) {
                assert!((merge.height - h).abs() < 1e-9 * (1.0 + h), "trial {trial} {linkage:?}");
            }
            for k in 1..=n {
                let got = agglomerative(&x, k, linkage).unwrap().labels;
                assert_eq!(got, partitions[k - 1], "trial {trial} {linkage:?} k={k}");
            }
        }
    }
}

#[test]
fn ward_heights_never_decrease() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..30 {
        let x = random_points(&mut rng, 40, 3);
        let merges = agglomerative_merges(&x, Linkage::Ward, 1).unwrap();
        assert!(merges.windows(2).all(|w| w[1].height >= w[0].height - 1e-12));
    }
}

#[test]
fn lloyd_inertia_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let n = rng.random_range(5..60);
        let k = rng.random_range(1..=5.min(n));
        let x = random_points(&mut rng, n, 2);
        let init = kmeans_plus_plus(&x, k, &mut rng).unwrap();
        let (_, history) = kmeans_lloyd(&x, init, 300, 0.0).unwrap();
        for w in history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{history:?}");
        }
    }
}

fn blobs(rng: &mut ChaCha8Rng, k: usize, per: usize) -> (Tensor, Vec<usize>) {
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for i in 0..k * per {
        let c = i % k;
        data.push(10.0 * c as f64 + rng.random_range(-0.5..0.5));
        data.push(-7.0 * c as f64 + rng.random_range(-0.5..0.5));
        truth.push(c);
    }
    (Tensor::new(vec![k * per, 2], data).unwrap(), truth)
}

#[test]
fn kmeans_is_row_order_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (x, truth) = blobs(&mut rng, 4, 25);
    let base = kmeans(&x, 4, 3, &KMeansConfig::default()).unwrap();
    assert_eq!(clustering_accuracy(&base.labels, &truth).unwrap(), 1.0);
    for _ in 0..5 {
        let mut order: Vec<usize> = (0..x.rows()).collect();
        order.shuffle(&mut rng);
        let shuffled = x.select_rows(&order);
        let r = kmeans(&shuffled, 4, 3, &KMeansConfig::default()).unwrap();
        let mut back = vec![0; order.len()];
        for (pos, &orig) in order.iter().enumerate() {
            back[orig] = r.labels[pos];
        }
        assert_eq!(relabel(&back), relabel(&base.labels));
        assert!((r.inertia.unwrap() - base.inertia.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn kmeans_fixed_seed_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random_points(&mut rng, 50, 3);
    let cfg = KMeansConfig::default();
    assert_eq!(kmeans(&x, 4, 9, &cfg).unwrap(), kmeans(&x, 4, 9, &cfg).unwrap());
}
