//! Local-linearity diagnostics for cue vectors: mutual nearest-neighbor
//! graphs, LTSA and PCA embeddings, and trustworthiness.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Mutual k-nearest-neighbor graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    pub n_points: usize,
    /// Sorted neighbor indices of each point.
    pub adjacency: Vec<Vec<usize>>,
    /// Points without any edge.
    pub isolated: Vec<usize>,
}

impl NeighborGraph {
    /// Connected components, largest first (ties by smallest member).
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n_points];
        let mut comps = Vec::new();
        for s in 0..self.n_points {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = vec![s];
            label[s] = id;
            let mut i = 0;
            while i < members.len() {
                for &j in &self.adjacency[members[i]] {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        members.push(j);
                    }
                }
                i += 1;
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }
}

fn sq_dist(points: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    points.row(i).iter().zip(points.row(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Indices of the `k` nearest other points of each row, nearest first.
/// Equal distances go to the lower index.
fn knn_lists(points: &DMatrix<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(points, i, j), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|x| x.1).collect()
        })
        .collect()
}

/// Edge `i–j` iff each of `i`, `j` is among the other's `k` nearest
/// neighbors. Rows of `points` are the samples.
pub fn symmetric_knn(points: &DMatrix<f64>, k: usize) -> Result<NeighborGraph> {
    let n = points.nrows();
    if k == 0 || n <= k {
        return Err(Error::InvalidArgument(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let lists = knn_lists(points, k);
    let adjacency: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut nb: Vec<usize> = lists[i].iter().copied().filter(|&j| lists[j].contains(&i)).collect();
            nb.sort_unstable();
            nb
        })
        .collect();
    let isolated = (0..n).filter(|&i| adjacency[i].is_empty()).collect();
    Ok(NeighborGraph { n_points: n, adjacency, isolated })
}

/// Which end of the alignment spectrum supplies the coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum EigenSelection {
    /// Smallest eigenvalues after the constant vector (standard LTSA).
    #[default]
    Smallest,
    Largest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// One row per kept point.
    pub coords: DMatrix<f64>,
    pub eigvals: Vec<f64>,
    /// Input rows that were embedded, ascending.
    pub kept_indices: Vec<usize>,
    /// Isolated points and points outside the largest component.
    pub excluded: Vec<usize>,
}

/// Makes the largest-magnitude entry of every column positive.
fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let i = col.iamax();
        if col[i] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Eigenpairs of a symmetric matrix in ascending eigenvalue order.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Local tangent space alignment on the largest component of the mutual
/// kNN graph. Each neighborhood is the point and its graph neighbors;
/// `intrinsic_dim` tangent directions are kept locally and `out_dim`
/// global coordinates are returned.
pub fn ltsa_embed(
    points: &DMatrix<f64>,
    k: usize,
    intrinsic_dim: usize,
    out_dim: usize,
    selection: EigenSelection,
) -> Result<Embedding> {
    if intrinsic_dim == 0 || out_dim == 0 || k < intrinsic_dim + 1 {
        return Err(Error::InvalidArgument(format!(
            "need k >= L + 1 and positive dimensions, got k={k}, L={intrinsic_dim}, out={out_dim}"
        )));
    }
    let graph = symmetric_knn(points, k)?;
    let mut usable = vec![true; graph.n_points];
    for (i, nb) in graph.adjacency.iter().enumerate() {
        if nb.len() + 1 < intrinsic_dim + 1 {
            usable[i] = false;
        }
    }
    let pruned = NeighborGraph {
        n_points: graph.n_points,
        adjacency: graph
            .adjacency
            .iter()
            .enumerate()
            .map(|(i, nb)| if usable[i] { nb.iter().copied().filter(|&j| usable[j]).collect() } else { Vec::new() })
            .collect(),
        isolated: Vec::new(),
    };
    let kept = pruned.components().into_iter().next().unwrap_or_default();
    let n = kept.len();
    if n <= out_dim + 1 {
        return Err(Error::InvalidArgument(format!("largest neighborhood component has only {n} points")));
    }
    let mut pos = vec![usize::MAX; graph.n_points];
    for (p, &i) in kept.iter().enumerate() {
        pos[i] = p;
    }
    let excluded = (0..graph.n_points).filter(|&i| pos[i] == usize::MAX).collect();
    if n < graph.n_points {
        log::warn!("ltsa: {} of {} points left out of the embedding", graph.n_points - n, graph.n_points);
    }

    let blocks: Vec<(Vec<usize>, DMatrix<f64>)> = kept
        .par_iter()
        .map(|&i| {
            let mut idx = vec![i];
            idx.extend(pruned.adjacency[i].iter().copied());
            let m = idx.len();
            let local = DMatrix::from_fn(m, points.ncols(), |r, c| points[(idx[r], c)]);
            let mean = local.row_mean();
            let centered = DMatrix::from_fn(m, points.ncols(), |r, c| local[(r, c)] - mean[c]);
            // leading left singular vectors via the small Gram matrix
            let (_, vecs) = sorted_eigen(&centered * centered.transpose());
            let mut g = DMatrix::zeros(m, intrinsic_dim + 1);
            g.column_mut(0).fill(1.0 / (m as f64).sqrt());
            for j in 0..intrinsic_dim.min(m) {
                g.set_column(j + 1, &vecs.column(m - 1 - j));
            }
            let w = DMatrix::identity(m, m) - &g * g.transpose();
            (idx.iter().map(|&j| pos[j]).collect(), w)
        })
        .collect();
    let mut b: DMatrix<f64> = DMatrix::zeros(n, n);
    for (idx, w) in &blocks {
        for (r, &i) in idx.iter().enumerate() {
            for (c, &j) in idx.iter().enumerate() {
                b[(i, j)] += w[(r, c)];
            }
        }
    }
    // Lift the constant vector out of the bottom of the spectrum.
    let lift = match selection {
        EigenSelection::Smallest => b.trace().max(1.0),
        EigenSelection::Largest => 0.0,
    };
    b.add_scalar_mut(lift / n as f64);
    let (vals, vecs) = sorted_eigen(b);
    let cols: Vec<usize> = match selection {
        EigenSelection::Smallest => (0..out_dim).collect(),
        EigenSelection::Largest => (0..out_dim).map(|j| n - 1 - j).collect(),
    };
    let mut coords = DMatrix::from_fn(n, out_dim, |r, c| vecs[(r, cols[c])]);
    fix_signs(&mut coords);
    let eigvals = cols.iter().map(|&c| vals[c]).collect();
    Ok(Embedding { coords, eigvals, kept_indices: kept, excluded })
}

/// Principal component projection with the full covariance spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub embedding: Embedding,
    pub mean: DVector<f64>,
    /// Principal axes as columns, leading first.
    pub axes: DMatrix<f64>,
    /// All covariance eigenvalues, descending.
    pub spectrum: Vec<f64>,
}

/// Projection of centered rows onto the `out_dim` leading principal axes.
/// Covariance uses the `1/n` normalization.
pub fn pca_embed(points: &DMatrix<f64>, out_dim: usize) -> Result<Pca> {
    let (n, d) = points.shape();
    if out_dim == 0 || n <= out_dim || out_dim > d {
        return Err(Error::InvalidArgument(format!("cannot project {n} points of dimension {d} onto {out_dim} axes")));
    }
    let mean = points.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |r, c| points[(r, c)] - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;
    let (vals, vecs) = sorted_eigen(cov);
    let spectrum: Vec<f64> = vals.iter().rev().map(|v| v.max(0.0)).collect();
    let mut axes = DMatrix::from_fn(d, out_dim, |r, c| vecs[(r, d - 1 - c)]);
    fix_signs(&mut axes);
    let scale = spectrum[0].max(f64::MIN_POSITIVE);
    if spectrum[out_dim - 1] <= 1e-12 * scale {
        log::warn!("pca: only some of the {out_dim} requested axes carry variance");
    }
    let coords = &centered * &axes;
    Ok(Pca {
        embedding: Embedding { coords, eigvals: spectrum[..out_dim].to_vec(), kept_indices: (0..n).collect(), excluded: Vec::new() },
        mean,
        axes,
        spectrum,
    })
}

/// Rank of every other point by distance from each point (1 = nearest).
fn rank_table(points: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = points.nrows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (sq_dist(points, i, j), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut rank = vec![0; n];
            for (r, (_, j)) in d.into_iter().enumerate() {
                rank[j] = r + 1;
            }
            rank
        })
        .collect()
}

/// Trustworthiness of an embedding at neighborhood size `k`: one minus a
/// normalized penalty for embedded neighbors that are far in the input.
/// Rows of `original` and `embedded` correspond.
pub fn trustworthiness(original: &DMatrix<f64>, embedded: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = original.nrows();
    if embedded.nrows() != n {
        return Err(Error::Shape(format!("{n} input points but {} embedded", embedded.nrows())));
    }
    if k == 0 || 2 * n < 3 * k + 2 {
        return Err(Error::InvalidArgument(format!("k={k} too large for {n} points")));
    }
    let ranks = rank_table(original);
    let emb = knn_lists(embedded, k);
    let penalty: f64 = (0..n)
        .map(|i| emb[i].iter().map(|&j| ranks[i][j].saturating_sub(k) as f64).sum::<f64>())
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}

/// Root-mean-square residual of the best affine map from `from` onto
/// `to`, relative to the spread of `to`.
pub fn affine_residual(from: &DMatrix<f64>, to: &DMatrix<f64>) -> Result<f64> {
    let n = from.nrows();
    if to.nrows() != n {
        return Err(Error::Shape("point sets differ in size".into()));
    }
    let design = DMatrix::from_fn(n, from.ncols() + 1, |r, c| if c == 0 { 1.0 } else { from[(r, c - 1)] });
    let svd = design.clone().svd(true, true);
    let coef = svd.solve(to, 1e-12).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let resid = (&design * coef - to).norm();
    let mean = to.row_mean();
    let spread = DMatrix::from_fn(n, to.ncols(), |r, c| to[(r, c)] - mean[c]).norm();
    Ok(if spread > 0.0 { resid / spread } else { resid })
}
