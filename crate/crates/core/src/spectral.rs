//! Spectral clustering for initialisation and for rounding SDP solutions.
//!
//! Both input modes reduce to the same recipe: double-centre an `n × n`
//! affinity (`P A P` with `P = I − 11ᵀ/n`), embed each observation with the
//! leading `K − 1` eigenvectors, and run seeded Lloyd K-means on the
//! embedding. For raw data the affinity is the Gram matrix `XᵀX`, so the
//! centred affinity equals the Gram matrix of the mean-removed data.

use nalgebra::DMatrix;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Assignment;
use crate::rng::{self, Rng};

#[derive(Debug, Clone)]
pub enum AffinityInput {
    /// `p × n` data matrix.
    RawData(DMatrix<f64>),
    /// `n × n` symmetric affinity such as an SDP solution.
    Membership(DMatrix<f64>),
}

impl AffinityInput {
    pub fn n(&self) -> usize {
        match self {
            AffinityInput::RawData(x) => x.ncols(),
            AffinityInput::Membership(z) => z.ncols(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { restarts: 10, max_iter: 100 }
    }
}

pub fn spectral_cluster(input: &AffinityInput, k: usize, seed: u64) -> Result<Assignment> {
    let n = input.n();
    if k == 0 || n < k {
        return Err(Error::arg(format!("need 1 <= K <= n, got K = {k}, n = {n}")));
    }
    if k == 1 {
        return Assignment::new(vec![1; n], 1);
    }
    let centred = match input {
        AffinityInput::RawData(x) => {
            let mean = x.column_mean();
            let mut xc = x.clone();
            for mut col in xc.column_iter_mut() {
                col -= &mean;
            }
            xc.transpose() * &xc
        }
        AffinityInput::Membership(z) => {
            if z.nrows() != z.ncols() {
                return Err(Error::arg("membership affinity must be square"));
            }
            if linalg::max_asymmetry(z) > 1e-8 {
                return Err(Error::arg("membership affinity is not symmetric"));
            }
            double_centre(z)
        }
    };
    let (_, embedding) = linalg::top_eigenvectors(&linalg::symmetrize(&centred), k - 1)?;
    let mut rng = rng::rng_from_seed(seed);
    let fit = kmeans(&embedding, k, KMeansOptions::default(), &mut rng)?;
    Ok(Assignment::from_zero_based(&fit.ids, k)?.canonical())
}

fn double_centre(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    let row_means = a.column_mean(); // mean over columns, per row
    let col_means = a.row_mean(); // mean over rows, per column
    let grand = row_means.sum() / n;
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        a[(i, j)] - row_means[i] - col_means[j] + grand
    })
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    /// 0-based cluster ids, every cluster non-empty.
    pub ids: Vec<usize>,
    pub sse: f64,
}

/// Lloyd K-means on the rows of `points` with k-means++ seeding; keeps the
/// restart with the smallest within-cluster sum of squares.
pub fn kmeans(points: &DMatrix<f64>, k: usize, opts: KMeansOptions, rng: &mut Rng) -> Result<KMeansFit> {
    let n = points.nrows();
    if k == 0 || n < k {
        return Err(Error::arg(format!("k-means needs 1 <= K <= n, got K = {k}, n = {n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("k-means input contains non-finite values".into()));
    }
    let mut best: Option<KMeansFit> = None;
    for _ in 0..opts.restarts.max(1) {
        let fit = lloyd(points, k, opts.max_iter, rng);
        if best.as_ref().map_or(true, |b| fit.sse < b.sse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(points: &DMatrix<f64>, i: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(d, cv)| (points[(i, d)] - cv).powi(2)).sum()
}

fn seed_plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let row = |i: usize| points.row(i).iter().copied().collect::<Vec<f64>>();
    let mut centres = vec![row(rng.gen_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &c));
        }
        centres.push(c);
    }
    centres
}

fn lloyd(points: &DMatrix<f64>, k: usize, max_iter: usize, rng: &mut Rng) -> KMeansFit {
    let (n, dim) = points.shape();
    let mut centres = seed_plus_plus(points, k, rng);
    let mut ids = vec![usize::MAX; n];
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        for i in 0..n {
            let mut best = (0, f64::INFINITY);
            for (c, centre) in centres.iter().enumerate() {
                let d = sq_dist(points, i, centre);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if ids[i] != best.0 {
                ids[i] = best.0;
                changed = true;
            }
        }
        repair_empty(points, &mut ids, &centres, k);
        centres = centroids(points, &ids, k, dim);
        if !changed {
            break;
        }
    }
    repair_empty(points, &mut ids, &centres, k);
    let centres = centroids(points, &ids, k, dim);
    let sse = (0..n).map(|i| sq_dist(points, i, &centres[ids[i]])).sum();
    KMeansFit { ids, sse }
}

/// Moves the point farthest from its centroid into each empty cluster,
/// taking only from clusters with more than one member.
fn repair_empty(points: &DMatrix<f64>, ids: &mut [usize], centres: &[Vec<f64>], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &c in ids.iter() {
            sizes[c] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut far = None;
        let mut far_d = f64::NEG_INFINITY;
        for (i, &c) in ids.iter().enumerate() {
            if sizes[c] < 2 {
                continue;
            }
            let d = sq_dist(points, i, &centres[c]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        match far {
            Some(i) => ids[i] = empty,
            None => return,
        }
    }
}

fn centroids(points: &DMatrix<f64>, ids: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &c) in ids.iter().enumerate() {
        counts[c] += 1;
        for d in 0..dim {
            sums[c][d] += points[(i, d)];
        }
    }
    for (s, &cnt) in sums.iter_mut().zip(&counts) {
        if cnt > 0 {
            s.iter_mut().for_each(|v| *v /= cnt as f64);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{membership_from_labels, misclustering_rate};
    use rand_distr::{Distribution, Normal};

    /// Best 2-partition of 1-d points by exhaustive enumeration.
    fn brute_force_two_means(x: &[f64]) -> Vec<usize> {
        let n = x.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 0u64..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| if mask >> i & 1 == 1 { 2 } else { 1 }).collect();
            if !labels.contains(&2) {
                continue;
            }
            let mut cost = 0.0;
            for l in [1, 2] {
                let g: Vec<f64> = x.iter().zip(&labels).filter(|(_, &c)| c == l).map(|(v, _)| *v).collect();
                let m = g.iter().sum::<f64>() / g.len() as f64;
                cost += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, labels);
            }
        }
        best.1
    }

    #[test]
    fn exact_block_membership_is_recovered() {
        let truth = Assignment::new(vec![1, 1, 2, 2], 2).unwrap();
        let z = membership_from_labels(&truth).unwrap().into_inner();
        let got = spectral_cluster(&AffinityInput::Membership(z), 2, 1).unwrap();
        assert_eq!(misclustering_rate(&got, &truth).unwrap(), 0.0);
    }

    #[test]
    fn separated_one_dimensional_clusters() {
        let mut rng = rng::rng_from_seed(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let x: Vec<f64> = (0..20)
            .map(|i| if i < 10 { 10.0 } else { -10.0 } + noise.sample(&mut rng))
            .collect();
        let oracle = Assignment::new(brute_force_two_means(&x), 2).unwrap();
        let truth = Assignment::halves(20);
        assert_eq!(misclustering_rate(&oracle, &truth).unwrap(), 0.0);
        let data = DMatrix::from_row_slice(1, 20, &x);
        let got = spectral_cluster(&AffinityInput::RawData(data), 2, 9).unwrap();
        assert_eq!(misclustering_rate(&got, &oracle).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_constant_affinity_still_splits() {
        let n = 6;
        let z = DMatrix::from_element(n, n, 1.0 / n as f64);
        let got = spectral_cluster(&AffinityInput::Membership(z), 2, 0).unwrap();
        assert!(!got.has_empty_cluster());
        assert_eq!(got.n(), n);
    }

    #[test]
    fn exact_membership_recovered_for_many_k() {
        let mut rng = rng::rng_from_seed(17);
        for k in 2..=8usize {
            for _ in 0..3 {
                let n = rng.gen_range(k..=64);
                // every cluster non-empty: first k observations seed each label
                let mut labels: Vec<usize> = (1..=k).collect();
                labels.extend((k..n).map(|_| rng.gen_range(1..=k)));
                let truth = Assignment::new(labels, k).unwrap();
                let z = membership_from_labels(&truth).unwrap().into_inner();
                let got = spectral_cluster(&AffinityInput::Membership(z), k, 5).unwrap();
                assert_eq!(misclustering_rate(&got, &truth).unwrap(), 0.0, "k = {k}, n = {n}");
            }
        }
    }

    #[test]
    fn column_permutation_permutes_labels() {
        let mut rng = rng::rng_from_seed(8);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let (p, n) = (5, 30);
        let x = DMatrix::from_fn(p, n, |r, c| {
            let centre = if c < n / 2 { 3.0 } else { -3.0 };
            (if r < 2 { centre } else { 0.0 }) + noise.sample(&mut rng)
        });
        let base = spectral_cluster(&AffinityInput::RawData(x.clone()), 2, 4).unwrap();
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = linalg::select_columns(&x, &perm);
        let permuted = spectral_cluster(&AffinityInput::RawData(xp), 2, 4).unwrap();
        let back = Assignment::new(perm.iter().map(|&i| base.labels()[i]).collect(), 2).unwrap();
        assert_eq!(misclustering_rate(&permuted, &back).unwrap(), 0.0);
    }

    #[test]
    fn asymmetric_membership_rejected() {
        let mut z = DMatrix::identity(3, 3);
        z[(0, 1)] = 0.1;
        assert!(spectral_cluster(&AffinityInput::Membership(z), 2, 0).is_err());
    }

    #[test]
    fn kmeans_repairs_identical_points() {
        let pts = DMatrix::from_element(5, 1, 2.0);
        let mut rng = rng::rng_from_seed(0);
        let fit = kmeans(&pts, 3, KMeansOptions::default(), &mut rng).unwrap();
        let mut sizes = [0; 3];
        fit.ids.iter().for_each(|&c| sizes[c] += 1);
        assert!(sizes.iter().all(|&s| s > 0));
    }
}
