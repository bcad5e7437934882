//! Blackbox geometry recovery from correlation matrices: Gaussian-ansatz
//! distance fitting, metric multidimensional scaling, precision-matrix
//! coupling inference, and iterative coarse-graining into a bulk graph.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::correlations::CorrelationMatrix;
use crate::error::{Error, Result};
use crate::lattice::two_adic_norm;

/// Correlation magnitudes are clipped to this range before taking logs;
/// entries clipped up to the floor carry reduced weight in the distance fit.
pub const CLIP_FLOOR: f64 = 1e-4;
const FLOOR_WEIGHT: f64 = 0.1;
const RIDGE_SCALE: f64 = 1e-6;
const MAX_CONDITION: f64 = 1e12;

/// Result of the Gaussian-ansatz distance fit |C_ij| = exp(−a·δ(|i−j|)²).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFit {
    /// Full M×M distance matrix, constant along diagonals.
    pub distances: DMatrix<f64>,
    /// Per-separation distances δ(d) for d = 1..M−1 (δ(0) = 0 implied).
    pub delta: Vec<f64>,
    /// Gaussian decay scale; the strongest band sits at distance 1.
    pub a: f64,
    /// Weighted rms residual of log|C| against the fitted model.
    pub stress: f64,
}

/// Fit M−1 translationally invariant distances δ(d) plus the scale a to
/// |C_ij| = exp(−a·δ(|i−j|)²) by weighted least squares on the log scale.
/// The gauge is fixed so the strongest band maps to distance 1. The fit
/// always assumes open-chain invariance (separation |i−j|, not mod M);
/// periodic geometry shows up as δ(d) saturating at large d.
pub fn fit_distances(c: &CorrelationMatrix) -> Result<DistanceFit> {
    let m = c.m();
    if m < 2 {
        return Err(Error::domain("distance fit needs at least 2 sites"));
    }
    // Band-wise weighted means of log|C|; the per-band parameters decouple,
    // so the weighted mean is the exact least-squares solution.
    let mut band_mean = vec![0.0; m];
    let mut band_weight = vec![0.0; m];
    let mut any_above_floor = false;
    let log_clipped = |v: f64| -> (f64, f64) {
        let mag = v.abs();
        if !mag.is_finite() || mag < CLIP_FLOOR {
            (CLIP_FLOOR.ln(), FLOOR_WEIGHT)
        } else {
            (mag.min(1.0).ln(), 1.0)
        }
    };
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (y, w) = log_clipped(c.values[(i, j)]);
            if w == 1.0 {
                any_above_floor = true;
            }
            let d = i.abs_diff(j);
            band_mean[d] += w * y;
            band_weight[d] += w;
        }
    }
    if !any_above_floor {
        return Err(Error::DegenerateFit(
            "all off-diagonal correlations are below the clip floor".into(),
        ));
    }
    for d in 1..m {
        band_mean[d] /= band_weight[d];
    }
    let y_max = band_mean[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if y_max >= 0.0 {
        return Err(Error::DegenerateFit(
            "strongest correlation band is perfectly correlated; decay scale is undefined".into(),
        ));
    }
    let a = -y_max;
    let delta: Vec<f64> = (1..m).map(|d| (band_mean[d] / y_max).sqrt()).collect();
    let distances = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            0.0
        } else {
            delta[i.abs_diff(j) - 1]
        }
    });
    let mut sq = 0.0;
    let mut wsum = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let (y, w) = log_clipped(c.values[(i, j)]);
            let model = -a * delta[i.abs_diff(j) - 1].powi(2);
            sq += w * (y - model) * (y - model);
            wsum += w;
        }
    }
    Ok(DistanceFit { distances, delta, a, stress: (sq / wsum).sqrt() })
}

/// Coordinates from classical (metric) multidimensional scaling plus a
/// warning when the distances are detectably non-Euclidean.
#[derive(Debug, Clone, PartialEq)]
pub struct MdsEmbedding {
    /// M×D coordinates, columns ordered by decreasing singular value,
    /// column means zero, first nonzero entry of each column nonnegative.
    pub coordinates: DMatrix<f64>,
    /// Eigenvalues of the double-centered Gram matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub warning: Option<String>,
}

/// Classical MDS: double-center the squared distances, B = −½·H·D²·H with
/// H = I − 𝟙/M, and factor the top-D spectral part as ρ = U·Σ^{1/2}.
pub fn mds_embed(distances: &DMatrix<f64>, dim: usize) -> Result<MdsEmbedding> {
    let m = distances.nrows();
    if dim == 0 {
        return Err(Error::domain("embedding dimension must be at least 1"));
    }
    if distances.ncols() != m || m < 2 {
        return Err(Error::domain("distance matrix must be square with M >= 2"));
    }
    let scale = distances.amax().max(1e-300);
    for i in 0..m {
        if distances[(i, i)].abs() > 1e-9 * scale {
            return Err(Error::domain("distance matrix must have zero diagonal"));
        }
        for j in 0..m {
            if (distances[(i, j)] - distances[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::domain("distance matrix must be symmetric"));
            }
        }
    }
    let dsq = distances.map(|v| v * v);
    let h = DMatrix::identity(m, m) - DMatrix::from_element(m, m, 1.0 / m as f64);
    let b = -0.5 * &h * dsq * &h;
    let eig = nalgebra::SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut coordinates = DMatrix::zeros(m, dim);
    for (col, &src) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[src].max(0.0);
        let factor = lambda.sqrt();
        for row in 0..m {
            coordinates[(row, col)] = factor * eig.eigenvectors[(row, src)];
        }
    }
    // Re-center exactly and fix the column sign convention.
    for col in 0..dim {
        let mean: f64 = coordinates.column(col).sum() / m as f64;
        let mut norm = 0.0f64;
        for row in 0..m {
            coordinates[(row, col)] -= mean;
            norm = norm.max(coordinates[(row, col)].abs());
        }
        let first = (0..m)
            .map(|row| coordinates[(row, col)])
            .find(|v| v.abs() > 1e-12 * norm.max(1e-300));
        if matches!(first, Some(v) if v < 0.0) {
            for row in 0..m {
                coordinates[(row, col)] = -coordinates[(row, col)];
            }
        }
    }
    let most_negative = eigenvalues.last().copied().unwrap_or(0.0);
    let dth_positive = eigenvalues.get(dim - 1).copied().unwrap_or(0.0).max(0.0);
    let warning = if most_negative < 0.0 && -most_negative > dth_positive {
        Some(format!(
            "distances are non-Euclidean: negative Gram eigenvalue {most_negative:.3e} \
             exceeds the retained eigenvalue {dth_positive:.3e} in magnitude"
        ))
    } else {
        None
    };
    Ok(MdsEmbedding { coordinates, eigenvalues, warning })
}

/// Precision-matrix couplings J′ = (C + εI)⁻¹ with ridge ε = 1e−6·tr(C)/M.
/// A negative off-diagonal entry of J′ means positive partial correlation,
/// i.e. a ferromagnetic bond.
pub fn infer_couplings(c: &CorrelationMatrix) -> Result<DMatrix<f64>> {
    let m = c.m();
    let sym = (&c.values + c.values.transpose()) / 2.0;
    if sym.iter().any(|v| v.is_nan()) {
        return Err(Error::domain(
            "correlation matrix has flagged (zero-variance) entries; cannot invert",
        ));
    }
    let ridge = RIDGE_SCALE * sym.trace() / m as f64;
    let regularized = sym + DMatrix::identity(m, m) * ridge;
    let svd = regularized.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let cond = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(Error::Inversion { cond });
    }
    regularized
        .try_inverse()
        .ok_or(Error::Inversion { cond })
}

/// One node of the reconstructed bulk graph. Leaves are the physical sites
/// (level 0); internal nodes are coarse-grained groups created at
/// successive levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkNode {
    pub id: usize,
    pub level: usize,
    /// Physical sites contained in this node.
    pub sites: Vec<usize>,
    /// Mean coordinate of the member sites, when an embedding is supplied.
    pub coordinate: Option<Vec<f64>>,
}

/// Correlation edge drawn during reconstruction, connecting two nodes of
/// the same level. `sign` is the sign of the coarse-grained signed
/// correlation between the two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkEdge {
    pub a: usize,
    pub b: usize,
    pub level: usize,
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BulkGraph {
    pub nodes: Vec<BulkNode>,
    pub edges: Vec<BulkEdge>,
    /// Number of coarse-graining sweeps performed.
    pub levels: usize,
    /// Winning ring-distance class per level.
    pub chosen_distances: Vec<usize>,
    /// Levels where the maximizing distance was tied, with the tied
    /// classes; ties are broken toward the smallest class.
    pub ties: Vec<(usize, Vec<usize>)>,
}

impl BulkGraph {
    /// Depth of the hierarchy: number of internal levels above the leaves.
    pub fn depth(&self) -> usize {
        self.levels
    }

    pub fn internal_nodes_at(&self, level: usize) -> Vec<&BulkNode> {
        self.nodes.iter().filter(|n| n.level == level).collect()
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let root = self.find(self.0[i]);
            self.0[i] = root;
        }
        self.0[i]
    }
    fn union(&mut self, i: usize, j: usize) {
        let (ri, rj) = (self.find(i), self.find(j));
        if ri != rj {
            let (lo, hi) = (ri.min(rj), ri.max(rj));
            self.0[hi] = lo;
        }
    }
}

/// Iterative coarse-graining reconstruction of the bulk connectivity.
///
/// At each level the groups sit on a ring in inherited order; the
/// ring-distance class with the largest mean coarse-grained |C| is selected
/// (ties broken toward smaller distance and recorded), all pairs at that
/// distance are connected, and connected components become the next level's
/// groups. Terminates when a single component remains.
pub fn reconstruct_bulk(
    c: &CorrelationMatrix,
    embedding: Option<&DMatrix<f64>>,
) -> Result<BulkGraph> {
    let m = c.m();
    if m < 4 {
        return Err(Error::domain("bulk reconstruction needs at least 4 sites"));
    }
    if let Some(rho) = embedding {
        if rho.nrows() != m {
            return Err(Error::domain("embedding row count must match the site count"));
        }
    }
    let coordinate_of = |sites: &[usize]| -> Option<Vec<f64>> {
        embedding.map(|rho| {
            let mut mean = vec![0.0; rho.ncols()];
            for &s in sites {
                for (acc, v) in mean.iter_mut().zip(rho.row(s).iter()) {
                    *acc += v;
                }
            }
            mean.iter().map(|v| v / sites.len() as f64).collect()
        })
    };

    let mut nodes: Vec<BulkNode> = (0..m)
        .map(|i| BulkNode { id: i, level: 0, sites: vec![i], coordinate: coordinate_of(&[i]) })
        .collect();
    let mut edges = Vec::new();
    let mut chosen_distances = Vec::new();
    let mut ties = Vec::new();

    // Ring of current groups: node ids in ring order.
    let mut ring: Vec<usize> = (0..m).collect();
    let mut next_id = m;
    let mut level = 0usize;

    while ring.len() > 1 {
        level += 1;
        let g = ring.len();
        // Coarse-grained correlation between ring positions: mean |C| over
        // member pairs, with signs averaged separately for bond coloring.
        let group_sites: Vec<Vec<usize>> =
            ring.iter().map(|&id| nodes[id].sites.clone()).collect();
        let coarse = |p: usize, q: usize| -> (f64, f64) {
            let mut mag = 0.0;
            let mut signed = 0.0;
            let mut count = 0usize;
            for &i in &group_sites[p] {
                for &j in &group_sites[q] {
                    let v = c.values[(i, j)];
                    if v.is_nan() {
                        continue;
                    }
                    mag += v.abs();
                    signed += v;
                    count += 1;
                }
            }
            if count == 0 {
                (0.0, 0.0)
            } else {
                (mag / count as f64, signed / count as f64)
            }
        };
        let max_r = g / 2;
        let mut scores = vec![0.0; max_r + 1];
        for r in 1..=max_r {
            let mut sum = 0.0;
            for p in 0..g {
                sum += coarse(p, (p + r) % g).0;
            }
            scores[r] = sum / g as f64;
        }
        let best = scores[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> =
            (1..=max_r).filter(|&r| (scores[r] - best).abs() <= 1e-12 * best.abs().max(1e-300)).collect();
        let r_star = tied[0];
        if tied.len() > 1 {
            ties.push((level, tied));
        }
        chosen_distances.push(r_star);

        let mut uf = UnionFind::new(g);
        let mut seen = std::collections::BTreeSet::new();
        for p in 0..g {
            let q = (p + r_star) % g;
            let key = (p.min(q), p.max(q));
            if !seen.insert(key) {
                continue;
            }
            let (_, signed) = coarse(p, q);
            edges.push(BulkEdge {
                a: ring[p],
                b: ring[q],
                level,
                sign: signed.signum(),
            });
            uf.union(p, q);
        }

        // Components become the next level's groups, ordered by their
        // first appearance on the current ring.
        let mut component_order: Vec<usize> = Vec::new();
        let mut members: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for p in 0..g {
            let root = uf.find(p);
            if !members.contains_key(&root) {
                component_order.push(root);
            }
            members.entry(root).or_default().push(p);
        }
        let mut new_ring = Vec::with_capacity(component_order.len());
        for root in component_order {
            let mut sites = Vec::new();
            for &p in &members[&root] {
                sites.extend_from_slice(&group_sites[p]);
            }
            sites.sort_unstable();
            nodes.push(BulkNode {
                id: next_id,
                level,
                coordinate: coordinate_of(&sites),
                sites,
            });
            new_ring.push(next_id);
            next_id += 1;
        }
        ring = new_ring;
    }

    Ok(BulkGraph { nodes, edges, levels: level, chosen_distances, ties })
}

/// Mean |C| grouped by the 2-adic norm of the site separation, returned as
/// (norm, mean |C|) pairs with the norm descending.
pub fn monna_block_score(c: &CorrelationMatrix) -> Result<Vec<(f64, f64)>> {
    let m = c.m();
    if !m.is_power_of_two() || m < 2 {
        return Err(Error::domain(format!(
            "2-adic block score needs M a power of two, got {m}"
        )));
    }
    let mut groups: std::collections::BTreeMap<i32, (f64, usize)> = Default::default();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let norm = two_adic_norm(i as i64 - j as i64)?;
            let key = -norm.log2().round() as i32; // valuation, ascending = norm descending
            let entry = groups.entry(key).or_insert((0.0, 0));
            let v = c.values[(i, j)];
            if !v.is_nan() {
                entry.0 += v.abs();
                entry.1 += 1;
            }
        }
    }
    Ok(groups
        .into_iter()
        .map(|(val, (sum, count))| {
            (0.5f64.powi(val), if count == 0 { f64::NAN } else { sum / count as f64 })
        })
        .collect())
}

/// Residual of the best rigid alignment (rotation/reflection + translation)
/// of point set `a` onto `b`, per point. Zero when the sets differ only by
/// a rigid motion.
pub fn procrustes_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::domain("point sets must have identical shapes"));
    }
    let m = a.nrows() as f64;
    let center = |x: &DMatrix<f64>| -> DMatrix<f64> {
        let means: Vec<f64> = (0..x.ncols()).map(|c| x.column(c).sum() / m).collect();
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - means[j])
    };
    let ac = center(a);
    let bc = center(b);
    let svd = (ac.transpose() * &bc).svd(true, true);
    let u = svd.u.as_ref().ok_or_else(|| Error::domain("svd failed"))?;
    let vt = svd.v_t.as_ref().ok_or_else(|| Error::domain("svd failed"))?;
    let rot = u * vt;
    let aligned = ac * rot;
    let diff = aligned - bc;
    Ok((diff.norm_squared() / m).sqrt())
}

/// Full geometry product: distance fit, MDS coordinates, and precision
/// couplings derived from one correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryEmbedding {
    pub coordinates: DMatrix<f64>,
    pub a: f64,
    pub distances: DMatrix<f64>,
    pub stress: f64,
    pub inferred_couplings: DMatrix<f64>,
    pub warning: Option<String>,
}

pub fn embed_geometry(c: &CorrelationMatrix, dim: usize) -> Result<GeometryEmbedding> {
    let fit = fit_distances(c)?;
    let mds = mds_embed(&fit.distances, dim)?;
    let inferred = infer_couplings(c)?;
    Ok(GeometryEmbedding {
        coordinates: mds.coordinates,
        a: fit.a,
        distances: fit.distances,
        stress: fit.stress,
        inferred_couplings: inferred,
        warning: mds.warning,
    })
}

/// Radial deviation of embedded points from their common best-fit circle
/// center: max |r_i − r̄| / r̄ over sites, using the first two coordinate
/// columns.
pub fn radial_deviation(coordinates: &DMatrix<f64>) -> Result<f64> {
    if coordinates.ncols() < 2 {
        return Err(Error::domain("radial deviation needs at least 2 coordinate columns"));
    }
    let m = coordinates.nrows();
    let radii: Vec<f64> = (0..m)
        .map(|i| {
            let row = coordinates.row(i);
            (row[0] * row[0] + row[1] * row[1]).sqrt()
        })
        .collect();
    let mean = radii.iter().sum::<f64>() / m as f64;
    if mean <= 0.0 {
        return Err(Error::domain("degenerate embedding: zero mean radius"));
    }
    Ok(radii
        .iter()
        .map(|r| (r - mean).abs() / mean)
        .fold(0.0, f64::max))
}
