//! Non-learned geometric kernels: farthest point sampling, kNN search,
//! multi-scale grouping, relative coordinates, pairwise squared distances,
//! Gaussian spatial similarity, and inverse-distance interpolation
//! weights.
//!
//! All functions are pure and deterministic. Distance ties break toward
//! the smaller index everywhere, so index outputs are reproducible across
//! platforms.

use crate::dataio::PointCloud;
use thiserror::Error;

/// Squared-distance singularity threshold for interpolation, in squared
/// units of normalized clouds.
pub const INTERP_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("cannot sample {m} points from a cloud of {n}")]
    SampleTooLarge { m: usize, n: usize },
    #[error("index {index} out of range for cloud of {n} points")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("operation requires a non-empty point set")]
    EmptyPointSet,
    #[error("scale sizes must be strictly increasing, got {0:?}")]
    ScalesNotIncreasing(Vec<usize>),
    #[error("centroid indices must be distinct")]
    DuplicateCentroids,
    #[error("region {region} at scale {scale} has {got} members, want {want}")]
    WrongScaleSize {
        region: usize,
        scale: usize,
        got: usize,
        want: usize,
    },
    #[error("region {region} does not contain its own centroid at scale {scale}")]
    CentroidNotInRegion { region: usize, scale: usize },
    #[error("similarity factor must be nonnegative, got {0}")]
    NegativeGamma(f64),
    #[error("distance matrix invalid: {0}")]
    BadDistanceMatrix(String),
}

/// Dense square matrix of pairwise quantities between sampled centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMat {
    m: usize,
    data: Vec<f64>,
}

impl SquareMat {
    pub fn zeros(m: usize) -> Self {
        Self {
            m,
            data: vec![0.0; m * m],
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }
}

/// Sampled centroids plus their multi-scale kNN neighborhoods.
///
/// `neighbors[j][t]` lists the `scales[t]` nearest cloud indices of
/// centroid `j`, ascending by distance. Because scale lists are prefixes
/// of one ordered search, every scale is a subset of the next.
#[derive(Debug, Clone)]
pub struct RegionIndex {
    pub centroids: Vec<usize>,
    pub neighbors: Vec<Vec<Vec<usize>>>,
    pub scales: Vec<usize>,
}

impl RegionIndex {
    pub fn new(
        centroids: Vec<usize>,
        neighbors: Vec<Vec<Vec<usize>>>,
        scales: Vec<usize>,
        cloud_len: usize,
    ) -> Result<Self, GeometryError> {
        if !scales.windows(2).all(|w| w[0] < w[1]) {
            return Err(GeometryError::ScalesNotIncreasing(scales));
        }
        let mut seen = vec![false; cloud_len];
        for &c in &centroids {
            if c >= cloud_len {
                return Err(GeometryError::IndexOutOfRange {
                    index: c,
                    n: cloud_len,
                });
            }
            if seen[c] {
                return Err(GeometryError::DuplicateCentroids);
            }
            seen[c] = true;
        }
        for (j, region) in neighbors.iter().enumerate() {
            for (t, members) in region.iter().enumerate() {
                if members.len() != scales[t] {
                    return Err(GeometryError::WrongScaleSize {
                        region: j,
                        scale: t,
                        got: members.len(),
                        want: scales[t],
                    });
                }
                for &idx in members {
                    if idx >= cloud_len {
                        return Err(GeometryError::IndexOutOfRange {
                            index: idx,
                            n: cloud_len,
                        });
                    }
                }
                if !members.contains(&centroids[j]) {
                    return Err(GeometryError::CentroidNotInRegion { region: j, scale: t });
                }
            }
        }
        Ok(Self {
            centroids,
            neighbors,
            scales,
        })
    }

    pub fn num_regions(&self) -> usize {
        self.centroids.len()
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }
}

/// Pairwise Gaussian similarity of centroids: V = exp(-gamma * U) where U
/// holds squared Euclidean distances. V is symmetric with unit diagonal
/// and entries in (0, 1]; gamma = 0 degrades to all-ones.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub u: SquareMat,
    pub v: SquareMat,
    pub gamma: f64,
}

impl SimilarityMatrix {
    /// Sum of each row of V. At least 1 because the diagonal is 1.
    pub fn row_sums(&self) -> Vec<f64> {
        let m = self.v.dim();
        (0..m).map(|i| self.v.row(i).iter().sum()).collect()
    }
}

#[inline]
fn sqdist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Iteratively select `m` indices, starting from `start`, each maximizing
/// the minimum squared distance to the already-selected set. Ties break
/// toward the smaller index.
pub fn farthest_point_sampling(
    cloud: &PointCloud,
    m: usize,
    start: usize,
) -> Result<Vec<usize>, GeometryError> {
    let n = cloud.len();
    if m > n || m == 0 {
        return Err(GeometryError::SampleTooLarge { m, n });
    }
    if start >= n {
        return Err(GeometryError::IndexOutOfRange { index: start, n });
    }
    let pts = &cloud.coords;
    let mut selected = Vec::with_capacity(m);
    selected.push(start);
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut last = start;
    for _ in 1..m {
        let last_pt = pts[last];
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0;
        for (i, (&p, slot)) in pts.iter().zip(min_d2.iter_mut()).enumerate() {
            let d = sqdist(p, last_pt);
            if d < *slot {
                *slot = d;
            }
            if i == last {
                *slot = 0.0;
            }
            // Strict > keeps the earliest (smallest-index) maximum.
            if *slot > best {
                best = *slot;
                best_idx = i;
            }
        }
        selected.push(best_idx);
        last = best_idx;
    }
    Ok(selected)
}

/// For each query index, the `k` cloud indices nearest to it, ascending
/// by squared distance with ties broken by smaller index. When `k`
/// exceeds the cloud size, the final neighbor is repeated to length `k`.
pub fn knn_indices(
    cloud: &PointCloud,
    query_idx: &[usize],
    k: usize,
) -> Result<Vec<Vec<usize>>, GeometryError> {
    let n = cloud.len();
    if n == 0 {
        return Err(GeometryError::EmptyPointSet);
    }
    for &q in query_idx {
        if q >= n {
            return Err(GeometryError::IndexOutOfRange { index: q, n });
        }
    }
    let mut out = Vec::with_capacity(query_idx.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n);
    for &q in query_idx {
        scratch.clear();
        let qp = cloud.coords[q];
        scratch.extend(
            cloud
                .coords
                .iter()
                .enumerate()
                .map(|(i, &p)| (sqdist(p, qp), i)),
        );
        scratch.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut row: Vec<usize> = scratch.iter().take(k.min(n)).map(|&(_, i)| i).collect();
        while row.len() < k {
            row.push(*row.last().unwrap());
        }
        out.push(row);
    }
    Ok(out)
}

/// Group each centroid's multi-scale neighborhoods. Scale t holds the
/// `scales[t]` nearest neighbors; one search at the largest scale with
/// prefixes taken per scale guarantees nesting.
pub fn group_areas(
    cloud: &PointCloud,
    centroid_idx: &[usize],
    scales: &[usize],
) -> Result<RegionIndex, GeometryError> {
    if scales.is_empty() {
        return Err(GeometryError::ScalesNotIncreasing(Vec::new()));
    }
    if !scales.windows(2).all(|w| w[0] < w[1]) {
        return Err(GeometryError::ScalesNotIncreasing(scales.to_vec()));
    }
    let largest = *scales.last().unwrap();
    let full = knn_indices(cloud, centroid_idx, largest)?;
    let neighbors = full
        .into_iter()
        .map(|row| scales.iter().map(|&kt| row[..kt].to_vec()).collect())
        .collect();
    RegionIndex::new(
        centroid_idx.to_vec(),
        neighbors,
        scales.to_vec(),
        cloud.len(),
    )
}

/// Neighbor coordinates expressed relative to their centroid:
/// out[j][t] is a `scales[t]` x 3 matrix of p - p_centroid rows.
pub fn to_relative(cloud: &PointCloud, region: &RegionIndex) -> Vec<Vec<Vec<[f64; 3]>>> {
    region
        .centroids
        .iter()
        .zip(&region.neighbors)
        .map(|(&c, scales)| {
            let cp = cloud.coords[c];
            scales
                .iter()
                .map(|members| {
                    members
                        .iter()
                        .map(|&i| {
                            let p = cloud.coords[i];
                            [p[0] - cp[0], p[1] - cp[1], p[2] - cp[2]]
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Symmetric matrix of squared Euclidean distances, zero diagonal. The
/// upper triangle is computed once and mirrored so symmetry is exact.
pub fn pairwise_sqdist(points: &[[f64; 3]]) -> SquareMat {
    let m = points.len();
    let mut out = SquareMat::zeros(m);
    for i in 0..m {
        for j in (i + 1)..m {
            let d = sqdist(points[i], points[j]);
            out.set(i, j, d);
            out.set(j, i, d);
        }
    }
    out
}

/// Convert squared distances to similarities: V = exp(-gamma * U).
pub fn similarity_matrix(u: SquareMat, gamma: f64) -> Result<SimilarityMatrix, GeometryError> {
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(GeometryError::NegativeGamma(gamma));
    }
    let m = u.dim();
    for i in 0..m {
        if u.at(i, i) != 0.0 {
            return Err(GeometryError::BadDistanceMatrix(format!(
                "nonzero diagonal at {i}"
            )));
        }
        for j in 0..m {
            let d = u.at(i, j);
            if d < 0.0 || !d.is_finite() {
                return Err(GeometryError::BadDistanceMatrix(format!(
                    "negative or non-finite entry at ({i}, {j})"
                )));
            }
            if u.at(i, j) != u.at(j, i) {
                return Err(GeometryError::BadDistanceMatrix(format!(
                    "asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut v = SquareMat::zeros(m);
    for i in 0..m {
        for j in 0..m {
            v.set(i, j, (-gamma * u.at(i, j)).exp());
        }
    }
    Ok(SimilarityMatrix { u, v, gamma })
}

/// For each target point, its `k` nearest sources with inverse squared
/// distance weights normalized to sum 1. A source closer than
/// sqrt(`eps`) takes weight 1 outright (the coincident-point rule). When
/// `k` exceeds the source count, the final source is repeated.
pub fn interp_weights(
    targets: &[[f64; 3]],
    sources: &[[f64; 3]],
    k: usize,
    eps: f64,
) -> Result<Vec<Vec<(usize, f64)>>, GeometryError> {
    if sources.is_empty() || k == 0 {
        return Err(GeometryError::EmptyPointSet);
    }
    assert!(eps > 0.0, "eps must be positive");
    let mut out = Vec::with_capacity(targets.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(sources.len());
    for &t in targets {
        scratch.clear();
        scratch.extend(sources.iter().enumerate().map(|(i, &s)| (sqdist(t, s), i)));
        scratch.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let nearest = &scratch[..k.min(sources.len())];
        let mut row: Vec<(usize, f64)> = if nearest[0].0 < eps {
            nearest
                .iter()
                .enumerate()
                .map(|(rank, &(_, i))| (i, if rank == 0 { 1.0 } else { 0.0 }))
                .collect()
        } else {
            let inv: Vec<f64> = nearest.iter().map(|&(d, _)| 1.0 / d).collect();
            let total: f64 = inv.iter().sum();
            nearest
                .iter()
                .zip(&inv)
                .map(|(&(_, i), &w)| (i, w / total))
                .collect()
        };
        // Pad to a fixed width with zero-weight repeats of the last
        // source so short source lists do not skew the blend.
        while row.len() < k {
            row.push((row.last().unwrap().0, 0.0));
        }
        out.push(row);
    }
    Ok(out)
}
