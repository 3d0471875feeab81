//! Oversmoothing instrumentation.
//!
//! Repeated multiplication by the normalized adjacency `Ã_sym` drives every
//! feature column toward the direction `π_i ∝ √d̃_i`, whatever the input.
//! The functions here compute that direction, apply the smoothing, and
//! measure how far a set of node features has collapsed.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::graphnet::Graph;
use crate::scalar::Scalar;

const ZERO_NORM: f64 = 1e-12;

/// Feature-diversity summary of one layer's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub layer: usize,
    pub mean_pairwise_distance: f64,
    pub mad: f64,
    /// Mean L1 gap between sum-normalized feature columns and `π`; absent
    /// when the graph is disconnected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_to_stationary: Option<f64>,
}

fn require_loops<T: Scalar>(g: &Graph<T>) -> Result<()> {
    let mut looped = vec![false; g.num_nodes()];
    for &(s, d) in g.edges() {
        if s == d {
            looped[s] = true;
        }
    }
    match looped.iter().position(|&l| !l) {
        Some(i) => Err(Error::Contract(format!("node {i} has no self-loop"))),
        None => Ok(()),
    }
}

/// `π_i = √d̃_i / Σ_j √d̃_j` for a connected graph with self-loops.
pub fn stationary_pi<T: Scalar>(g: &Graph<T>) -> Result<Vec<f64>> {
    require_loops(g)?;
    let comps = g.components();
    if comps.len() > 1 {
        return Err(Error::Disconnected {
            sizes: comps.iter().map(Vec::len).collect(),
        });
    }
    let roots: Vec<f64> = g.degrees().iter().map(|&d| (d as f64).sqrt()).collect();
    let total: f64 = roots.iter().sum();
    Ok(roots.into_iter().map(|r| r / total).collect())
}

/// Applies `Ã_sym` to `x` exactly `k` times, one sparse pass per step.
pub fn power_smooth<T: Scalar>(g: &Graph<T>, x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    require_loops(g)?;
    if x.rank() != 2 || x.rows() != g.num_nodes() {
        return Err(Error::dim("power_smooth", x.shape(), &[g.num_nodes()]));
    }
    let deg = g.degrees();
    let weights: Vec<T> = g
        .edges()
        .iter()
        .map(|&(s, d)| T::one() / T::lit((deg[s] * deg[d]) as f64).sqrt())
        .collect();
    let mut cur = x.clone();
    for _ in 0..k {
        let mut next = Tensor::zeros(x.shape());
        for (&(s, d), &w) in g.edges().iter().zip(&weights) {
            for (o, &v) in next.row_mut(d).iter_mut().zip(cur.row(s)) {
                *o += w * v;
            }
        }
        cur = next;
    }
    Ok(cur)
}

fn row_dist<T: Scalar>(h: &Tensor<T>, i: usize, j: usize) -> f64 {
    h.row(i)
        .iter()
        .zip(h.row(j))
        .map(|(&a, &b)| {
            let d = (a - b).as_f64();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Mean Euclidean distance over all unordered pairs of rows.
pub fn mean_pairwise_distance<T: Scalar>(h: &Tensor<T>) -> Result<f64> {
    let n = h.rows();
    if h.rank() != 2 || n < 2 {
        return Err(Error::Degenerate(format!(
            "pairwise distance needs at least 2 rows, got shape {:?}",
            h.shape()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += row_dist(h, i, j);
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

/// Mean squared Euclidean distance over unordered pairs of rows, in
/// `O(n·d)`: it equals `2n/(n−1)` times the total per-column variance.
pub fn mean_pairwise_sq_distance<T: Scalar>(h: &Tensor<T>) -> Result<f64> {
    let (n, d) = (h.rows(), h.cols());
    if h.rank() != 2 || n < 2 {
        return Err(Error::Degenerate(format!(
            "pairwise distance needs at least 2 rows, got shape {:?}",
            h.shape()
        )));
    }
    let nf = n as f64;
    let mut var_total = 0.0;
    for c in 0..d {
        let mean = (0..n).map(|i| h.get(i, c).as_f64()).sum::<f64>() / nf;
        var_total += (0..n).map(|i| (h.get(i, c).as_f64() - mean).powi(2)).sum::<f64>() / nf;
    }
    Ok(2.0 * nf / (nf - 1.0) * var_total)
}

/// Mean cosine distance over the graph's non-loop edges, plus the number of
/// near-zero rows that were skipped.
pub fn mad_with_skipped<T: Scalar>(h: &Tensor<T>, g: &Graph<T>) -> Result<(f64, usize)> {
    if h.rank() != 2 || h.rows() != g.num_nodes() {
        return Err(Error::dim("mad", h.shape(), &[g.num_nodes()]));
    }
    let norms: Vec<f64> = (0..h.rows())
        .map(|i| h.row(i).iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt())
        .collect();
    let skipped = norms.iter().filter(|&&n| n < ZERO_NORM).count();
    if skipped == norms.len() {
        return Err(Error::Degenerate("every feature row is zero".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for &(s, d) in g.edges() {
        if s == d || norms[s] < ZERO_NORM || norms[d] < ZERO_NORM {
            continue;
        }
        let dot: f64 = h.row(s).iter().zip(h.row(d)).map(|(&a, &b)| (a * b).as_f64()).sum();
        total += 1.0 - dot / (norms[s] * norms[d]);
        pairs += 1;
    }
    if pairs == 0 {
        return Err(Error::Degenerate("no edge joins two nonzero rows".into()));
    }
    Ok((total / pairs as f64, skipped))
}

/// Mean cosine distance between the features of connected nodes.
pub fn mad<T: Scalar>(h: &Tensor<T>, g: &Graph<T>) -> Result<f64> {
    mad_with_skipped(h, g).map(|(v, _)| v)
}

/// Mean over feature columns of `‖col / Σ col − π‖₁`; columns summing to
/// (nearly) zero are skipped. `g` must carry self-loops and be connected.
pub fn distance_to_stationary<T: Scalar>(h: &Tensor<T>, g: &Graph<T>) -> Result<f64> {
    let pi = stationary_pi(g)?;
    if h.rows() != pi.len() {
        return Err(Error::dim("distance_to_stationary", h.shape(), &[pi.len()]));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..h.cols() {
        let sum: f64 = (0..h.rows()).map(|i| h.get(i, c).as_f64()).sum();
        if sum.abs() < ZERO_NORM {
            continue;
        }
        total += (0..h.rows())
            .map(|i| (h.get(i, c).as_f64() / sum - pi[i]).abs())
            .sum::<f64>();
        used += 1;
    }
    Ok(if used == 0 { 0.0 } else { total / used as f64 })
}

/// Report for one layer's features on graph `g` (self-loops are added for
/// the stationary comparison).
pub fn smoothness_report<T: Scalar>(layer: usize, h: &Tensor<T>, g: &Graph<T>) -> Result<SmoothnessReport> {
    let looped = g.add_self_loops();
    let distance_to_stationary = match distance_to_stationary(h, &looped) {
        Ok(v) => Some(v),
        Err(Error::Disconnected { .. }) => None,
        Err(e) => return Err(e),
    };
    let mad = match mad(h, g) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(SmoothnessReport {
        layer,
        mean_pairwise_distance: mean_pairwise_distance(h)?,
        mad,
        distance_to_stationary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn looped(n: usize, pairs: &[(usize, usize)]) -> Graph<f64> {
        Graph::structure(n, pairs).unwrap().add_self_loops()
    }

    /// Power iteration on the dense normalized adjacency, normalized to unit
    /// L1 norm. Independent of the closed form.
    fn power_iteration_pi(g: &Graph<f64>) -> Vec<f64> {
        let m = g.normalized_adjacency().unwrap();
        let n = g.num_nodes();
        let mut v = Tensor::<f64>::ones(&[n, 1]);
        for _ in 0..2000 {
            v = m.matmul(&v).unwrap();
            let s = v.sum();
            v.scale_in_place(1.0 / s);
        }
        v.into_data()
    }

    #[test]
    fn triangle_is_uniform() {
        let g = looped(3, &[(0, 1), (1, 2), (0, 2)]);
        let pi = stationary_pi(&g).unwrap();
        for p in pi {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn path_and_star_match_power_iteration() {
        for (n, pairs) in [
            (3usize, vec![(0usize, 1usize), (1, 2)]),
            (4, vec![(0, 1), (0, 2), (0, 3)]),
        ] {
            let g = looped(n, &pairs);
            let pi = stationary_pi(&g).unwrap();
            let oracle = power_iteration_pi(&g);
            for (a, b) in pi.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "{pi:?} vs {oracle:?}");
            }
        }
        let path = stationary_pi(&looped(3, &[(0, 1), (1, 2)])).unwrap();
        assert!((path[0] - 0.3101).abs() < 1e-4 && (path[1] - 0.3798).abs() < 1e-4);
        let star = stationary_pi(&looped(4, &[(0, 1), (0, 2), (0, 3)])).unwrap();
        let denom = 2.0 + 3.0 * 2f64.sqrt();
        assert!((star[0] - 2.0 / denom).abs() < 1e-15);
        assert!((star[1] - 2f64.sqrt() / denom).abs() < 1e-15);
    }

    #[test]
    fn disconnected_graph_names_components() {
        let g = looped(4, &[(0, 1), (2, 3)]);
        match stationary_pi(&g) {
            Err(Error::Disconnected { sizes }) => assert_eq!(sizes, vec![2, 2]),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn power_smooth_zero_and_one_step() {
        let g = looped(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)]);
        let mut rng = RngStream::new(1);
        let x = Tensor::<f64>::matrix(5, 3, (0..15).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        assert_eq!(power_smooth(&g, &x, 0).unwrap(), x);
        let dense = g.normalized_adjacency().unwrap().matmul(&x).unwrap();
        assert!(power_smooth(&g, &x, 1).unwrap().max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn pairwise_distance_cases() {
        let same = Tensor::<f64>::from_rows(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert_eq!(mean_pairwise_distance(&same).unwrap(), 0.0);
        let two = Tensor::<f64>::from_rows(&[&[0.0, 0.0], &[3.0, 4.0]]);
        assert_eq!(mean_pairwise_distance(&two).unwrap(), 5.0);
        assert!(mean_pairwise_distance(&Tensor::<f64>::from_rows(&[&[1.0]])).is_err());
    }

    #[test]
    fn moment_identity_matches_exact_pairs() {
        let mut rng = RngStream::new(8);
        let h = Tensor::<f64>::matrix(50, 8, (0..400).map(|_| rng.normal()).collect()).unwrap();
        let mut exact = 0.0;
        for i in 0..50 {
            for j in i + 1..50 {
                exact += row_dist(&h, i, j).powi(2);
            }
        }
        exact /= (50 * 49 / 2) as f64;
        let fast = mean_pairwise_sq_distance(&h).unwrap();
        assert!(((fast - exact) / exact).abs() < 1e-10);
    }

    #[test]
    fn mad_cases() {
        let g = Graph::<f64>::structure(3, &[(0, 1), (1, 2)]).unwrap();
        let equal = Tensor::from_rows(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        assert!(mad(&equal, &g).unwrap().abs() < 1e-15);
        let single = Graph::<f64>::structure(2, &[(0, 1)]).unwrap();
        let ortho = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(mad(&ortho, &single).unwrap(), 1.0);
        let zeros = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(mad(&zeros, &single), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mad_skips_zero_rows() {
        let g = Graph::<f64>::structure(3, &[(0, 1), (1, 2)]).unwrap();
        let h = Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[0.0, 0.0]]);
        let (v, skipped) = mad_with_skipped(&h, &g).unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn mad_matches_brute_force() {
        let mut rng = RngStream::new(4);
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)];
        let g = Graph::<f64>::structure(6, &pairs).unwrap();
        let h = Tensor::<f64>::matrix(6, 4, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let mut total = 0.0;
        let mut count = 0;
        for &(a, b) in &pairs {
            for (i, j) in [(a, b), (b, a)] {
                let (hi, hj) = (h.row(i), h.row(j));
                let dot: f64 = hi.iter().zip(hj).map(|(x, y)| x * y).sum();
                let ni: f64 = hi.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nj: f64 = hj.iter().map(|x| x * x).sum::<f64>().sqrt();
                total += 1.0 - dot / (ni * nj);
                count += 1;
            }
        }
        assert!((mad(&h, &g).unwrap() - total / count as f64).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let mut rng = RngStream::new(12);
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (1, 4)];
        let g = Graph::<f64>::structure(5, &pairs).unwrap();
        let h = Tensor::<f64>::matrix(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
        let g = g.with_node_features(h.clone()).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let p = g.permuted(&perm).unwrap();
        let ph = p.node_features().clone();
        assert!((mean_pairwise_distance(&h).unwrap() - mean_pairwise_distance(&ph).unwrap()).abs() < 1e-12);
        assert!((mad(&h, &g).unwrap() - mad(&ph, &p).unwrap()).abs() < 1e-12);
        let (l, pl) = (g.add_self_loops(), p.add_self_loops());
        assert!(
            (distance_to_stationary(&h, &l).unwrap() - distance_to_stationary(&ph, &pl).unwrap()).abs() < 1e-12
        );
    }
}
