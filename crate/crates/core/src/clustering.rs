//! Per-class clustering of client prototypes: k-means with Davies-Bouldin
//! model selection, plus the Hopkins clustering-tendency statistic.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;
use crate::Scalar;

const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T> {
    /// Cluster index of each point.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment<T> {
    pub label: usize,
    /// Client ids per cluster, each sorted ascending.
    pub clusters: Vec<Vec<usize>>,
    pub centroids: Vec<Vec<T>>,
    /// Davies-Bouldin score of the chosen configuration (`None` for one cluster).
    pub score: Option<T>,
}

impl<T> ClusterAssignment<T> {
    pub fn cluster_of(&self, client: usize) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(&client).is_ok())
    }
}

#[inline]
pub fn sq_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    sq_distance(a, b).sqrt()
}

fn mean_of<T: Scalar>(points: &[Vec<T>], members: impl Iterator<Item = usize>) -> Vec<T> {
    let dim = points[0].len();
    let mut sum = vec![T::zero(); dim];
    let mut n = 0usize;
    for i in members {
        for (s, &x) in sum.iter_mut().zip(&points[i]) {
            *s += x;
        }
        n += 1;
    }
    let n = T::lit(n as f64);
    sum.into_iter().map(|s| s / n).collect()
}

fn check_points<T: Scalar>(points: &[Vec<T>]) -> Result<()> {
    let dim = points.first().ok_or(Error::EmptyDataset)?.len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points of differing dimension".into()));
    }
    Ok(())
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_distance(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centroid uniform, the rest proportional to the
/// squared distance to the nearest chosen centroid.
fn seed_centroids<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut impl Rng) -> Vec<Vec<T>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_distance(p, &centroids[0]).as_f64()).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_distance(p, &centroids[centroids.len() - 1]).as_f64());
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. Stops when assignments are
/// stable or after 100 iterations. An empty cluster takes the point farthest
/// from its centroid among clusters with more than one member.
pub fn kmeans<T: Scalar>(points: &[Vec<T>], k: usize, rng_seed: u64) -> Result<KMeans<T>> {
    check_points(points)?;
    if k == 0 || k > points.len() {
        return Err(Error::Parameter(format!("k = {k} must be in [1, {}]", points.len())));
    }
    let mut rng = seed::rng(rng_seed, &[seed::stream::CLUSTER]);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; points.len()];

    for _ in 0..MAX_ITERATIONS {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        repair_empty(points, &centroids, &mut next, k);
        let stable = next == assignment;
        assignment = next;
        centroids = (0..k)
            .map(|c| mean_of(points, assignment.iter().enumerate().filter(|(_, &a)| a == c).map(|(i, _)| i)))
            .collect();
        if stable {
            break;
        }
    }
    Ok(KMeans { assignment, centroids })
}

fn repair_empty<T: Scalar>(points: &[Vec<T>], centroids: &[Vec<T>], assignment: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&a| sizes[a] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let donor = (0..points.len())
            .filter(|&i| sizes[assignment[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_distance(&points[a], &centroids[assignment[a]]);
                let db = sq_distance(&points[b], &centroids[assignment[b]]);
                da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal).then(b.cmp(&a))
            })
            .expect("k <= number of points");
        assignment[donor] = empty;
    }
}

/// Davies-Bouldin index: mean over clusters of the worst
/// `(s_i + s_j) / d(c_i, c_j)`, with `s` the mean distance of a cluster's
/// points to its centroid. Coincident centroids contribute `+inf`.
pub fn davies_bouldin<T: Scalar>(points: &[Vec<T>], assignment: &[usize], centroids: &[Vec<T>]) -> Result<T> {
    check_points(points)?;
    let k = centroids.len();
    if k < 2 {
        return Err(Error::Parameter("Davies-Bouldin needs at least 2 clusters".into()));
    }
    if assignment.len() != points.len() || assignment.iter().any(|&a| a >= k) {
        return Err(Error::Shape("assignment does not match points/centroids".into()));
    }
    let mut scatter = vec![T::zero(); k];
    let mut sizes = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        scatter[a] += distance(p, &centroids[a]);
        sizes[a] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::Parameter("Davies-Bouldin needs non-empty clusters".into()));
    }
    for (s, &n) in scatter.iter_mut().zip(&sizes) {
        *s /= T::lit(n as f64);
    }
    let mut total = T::zero();
    for i in 0..k {
        let mut worst = T::neg_infinity();
        for j in (0..k).filter(|&j| j != i) {
            let d = distance(&centroids[i], &centroids[j]);
            let ratio = if d == T::zero() { T::infinity() } else { (scatter[i] + scatter[j]) / d };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / T::lit(k as f64))
}

/// Chooses k in `[2, min(k_max, m - 1)]` by minimal Davies-Bouldin score
/// (ties toward smaller k). Fewer than 3 prototypes, or prototypes with no
/// spread at all, give a single cluster.
pub fn select_clusters<T: Scalar>(
    label: usize,
    prototypes: &[(usize, Vec<T>)],
    k_max: usize,
    rng_seed: u64,
) -> Result<ClusterAssignment<T>> {
    let points: Vec<Vec<T>> = prototypes.iter().map(|(_, p)| p.clone()).collect();
    check_points(&points)?;
    let ids: Vec<usize> = prototypes.iter().map(|(c, _)| *c).collect();
    let m = points.len();

    let single = |score| {
        let mut all = ids.clone();
        all.sort_unstable();
        ClusterAssignment { label, clusters: vec![all], centroids: vec![mean_of(&points, 0..m)], score }
    };
    let degenerate = points.iter().all(|p| p == &points[0]);
    let upper = k_max.min(m.saturating_sub(1));
    if m < 3 || degenerate || upper < 2 {
        return Ok(single(None));
    }

    let mut best: Option<(T, KMeans<T>)> = None;
    for k in 2..=upper {
        let run = kmeans(&points, k, seed::derive(rng_seed, &[k as u64]))?;
        let score = davies_bouldin(&points, &run.assignment, &run.centroids)?;
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, run));
        }
    }
    let (score, run) = best.expect("at least k = 2 evaluated");
    let mut clusters = vec![Vec::new(); run.centroids.len()];
    for (&id, &a) in ids.iter().zip(&run.assignment) {
        clusters[a].push(id);
    }
    clusters.iter_mut().for_each(|c| c.sort_unstable());
    Ok(ClusterAssignment { label, clusters, centroids: run.centroids, score: Some(score) })
}

/// Default Hopkins sample size: `min(50, n / 2)`.
pub fn hopkins_sample_size(n: usize) -> usize {
    (n / 2).min(50)
}

/// Hopkins statistic `sum(u) / (sum(u) + sum(w))`: `u` are nearest-data
/// distances of `sample_m` uniform points drawn in the data's bounding box,
/// `w` nearest-neighbour distances of `sample_m` sampled data points to the
/// rest of the data. Near 0.5 for uniform data, near 1 for clustered data.
pub fn hopkins<T: Scalar>(points: &[Vec<T>], sample_m: usize, rng_seed: u64) -> Result<T> {
    check_points(points)?;
    let n = points.len();
    if sample_m == 0 || n < 2 * sample_m {
        return Err(Error::Parameter(format!("need sample_m >= 1 and at least {} points, got {n}", 2 * sample_m)));
    }
    let dim = points[0].len();
    let lo: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d].as_f64()).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> =
        (0..dim).map(|d| points.iter().map(|p| p[d].as_f64()).fold(f64::NEG_INFINITY, f64::max)).collect();

    let mut rng = seed::rng(rng_seed, &[seed::stream::HOPKINS]);
    let mut u_sum = T::zero();
    for _ in 0..sample_m {
        let probe: Vec<T> = lo
            .iter()
            .zip(&hi)
            .map(|(&a, &b)| T::lit(if b > a { rng.random_range(a..b) } else { a }))
            .collect();
        u_sum += points.iter().map(|p| distance(&probe, p)).fold(T::infinity(), T::min);
    }
    let picked: BTreeSet<usize> = index::sample(&mut rng, n, sample_m).into_iter().collect();
    let mut w_sum = T::zero();
    for &i in &picked {
        w_sum += (0..n).filter(|&j| j != i).map(|j| distance(&points[i], &points[j])).fold(T::infinity(), T::min);
    }
    let total = u_sum + w_sum;
    if total == T::zero() {
        return Ok(T::lit(0.5));
    }
    Ok(u_sum / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn k1_centroid_is_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 4.0], vec![4.0, 2.0]];
        let r = kmeans(&pts, 1, 0).unwrap();
        assert_eq!(r.assignment, vec![0, 0, 0]);
        assert_eq!(r.centroids[0], vec![2.0, 2.0]);
    }

    #[test]
    fn two_pairs_are_separated() {
        let pts = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]];
        for s in 0..10 {
            let r = kmeans(&pts, 2, s).unwrap();
            assert_eq!(r.assignment[0], r.assignment[1]);
            assert_eq!(r.assignment[2], r.assignment[3]);
            assert_ne!(r.assignment[0], r.assignment[2]);
            let mut c = r.centroids.clone();
            c.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
            assert_eq!(c, vec![vec![0.0, 0.5], vec![10.0, 0.5]]);
        }
    }

    #[test]
    fn k_equals_n_is_singletons() {
        let pts = vec![vec![0.0], vec![1.0], vec![5.0], vec![6.0]];
        let r = kmeans(&pts, 4, 3).unwrap();
        let distinct: BTreeSet<_> = r.assignment.iter().collect();
        assert_eq!(distinct.len(), 4);
        assert!(kmeans(&pts, 5, 0).is_err());
        assert!(kmeans(&pts, 0, 0).is_err());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = vec![vec![1.0]; 5];
        let r = kmeans(&pts, 3, 1).unwrap();
        let distinct: BTreeSet<_> = r.assignment.iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    #[test]
    fn db_tight_distant_clusters() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![0.0, 0.1], vec![10.0, 0.0], vec![10.0, 0.1]];
        let centroids = vec![vec![0.0, 0.05], vec![10.0, 0.05]];
        let db = davies_bouldin(&pts, &[0, 0, 1, 1], &centroids).unwrap();
        // (0.05 + 0.05) / 10
        assert!((db - 0.01).abs() < 1e-12);
        assert!(db < 0.2);
    }

    #[test]
    fn db_singletons_and_errors() {
        let pts = vec![vec![0.0], vec![3.0]];
        assert_eq!(davies_bouldin(&pts, &[0, 1], &pts).unwrap(), 0.0f64);
        assert!(davies_bouldin(&pts, &[0, 0], &[vec![1.5]]).is_err());
        let same: Vec<Vec<f64>> = vec![vec![1.0], vec![1.0]];
        assert!(davies_bouldin(&same, &[0, 1], &same).unwrap().is_infinite());
    }

    #[test]
    fn select_small_and_degenerate() {
        let two = vec![(4, vec![0.0]), (1, vec![9.0])];
        let r = select_clusters(0, &two, 10, 0).unwrap();
        assert_eq!(r.clusters, vec![vec![1, 4]]);

        let same: Vec<_> = (0..6).map(|i| (i, vec![1.0, 1.0])).collect();
        assert_eq!(select_clusters(0, &same, 10, 0).unwrap().clusters.len(), 1);
    }

    #[test]
    fn select_recovers_two_groups() {
        let protos: Vec<(usize, Vec<f64>)> = (0..6)
            .map(|i| {
                let base = if i < 3 { 0.0 } else { 20.0 };
                (i, vec![base + 0.01 * i as f64, base - 0.02 * i as f64])
            })
            .collect();
        let r = select_clusters(2, &protos, 10, 7).unwrap();
        let mut clusters = r.clusters.clone();
        clusters.sort();
        assert_eq!(clusters, vec![vec![0, 1, 2], vec![3, 4, 5]]);
    }

    #[test]
    fn hopkins_coincident_and_errors() {
        let same = vec![vec![2.0, 2.0]; 10];
        assert_eq!(hopkins(&same, 5, 0).unwrap(), 0.5);
        assert!(hopkins(&same, 6, 0).is_err());
        assert!(hopkins(&same, 0, 0).is_err());
    }

    #[test]
    fn hopkins_blobs_are_clustered() {
        let mut rng = seed::rng(5, &[]);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 50.0 };
                vec![c + rng.random_range(-0.5..0.5), c + rng.random_range(-0.5..0.5)]
            })
            .collect();
        assert!(hopkins(&pts, 50, 1).unwrap() > 0.85);
    }

    fn points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 2), 3..12)
    }

    proptest! {
        #[test]
        fn kmeans_is_deterministic_partition(pts in points(), k in 1usize..4, s in 0u64..100) {
            let k = k.min(pts.len());
            let a = kmeans(&pts, k, s).unwrap();
            prop_assert_eq!(&a, &kmeans(&pts, k, s).unwrap());
            prop_assert_eq!(a.assignment.len(), pts.len());
            prop_assert!(a.assignment.iter().all(|&c| c < k));
            for c in 0..k {
                prop_assert!(a.assignment.contains(&c));
            }
        }

        #[test]
        fn selected_clusters_partition_clients(pts in points(), s in 0u64..50) {
            let protos: Vec<(usize, Vec<f64>)> = pts.into_iter().enumerate().map(|(i, p)| (i * 3, p)).collect();
            let r = select_clusters(0, &protos, 10, s).unwrap();
            let mut all: Vec<usize> = r.clusters.iter().flatten().copied().collect();
            prop_assert!(r.clusters.iter().all(|c| !c.is_empty()));
            all.sort_unstable();
            prop_assert_eq!(all, protos.iter().map(|(c, _)| *c).collect::<Vec<_>>());
        }
    }
}
