//! Correlation observables over ensembles of measurement records: Pearson
//! correlation matrices, population-normalized covariances, diagonal-band
//! distance profiles, the spin structure factor, and bipartite correlations
//! with jackknife errors.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::monna_map;
use crate::twa::EnsembleRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationKind {
    /// Pearson correlation of n₊ at site i with n₋ at site j.
    Pm,
    /// Pearson correlation of Fx_i with Fx_j.
    Xx,
    /// Covariance of Fx normalized by n², sensitive to absolute growth.
    Cxx,
}

/// M×M correlation matrix estimated over realizations. Channels with zero
/// variance produce NaN entries, which downstream consumers must treat as
/// flagged rather than zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub kind: CorrelationKind,
    pub values: DMatrix<f64>,
    pub sample_count: usize,
    /// Bloch periods at measurement.
    pub periods: f64,
    pub label: String,
}

impl CorrelationMatrix {
    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    /// Entries that could not be estimated (zero-variance channels).
    pub fn flagged(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                if self.values[(i, j)].is_nan() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Symmetrized matrix (C + Cᵀ)/2 (C^pm is generally non-symmetric).
    pub fn symmetrized(&self) -> CorrelationMatrix {
        let sym = (&self.values + self.values.transpose()) / 2.0;
        CorrelationMatrix { values: sym, ..self.clone() }
    }
}

fn channel_stats(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let m = data[0].len();
    let mut mean = vec![0.0; m];
    for row in data {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    for v in &mut mean {
        *v /= n;
    }
    let mut var = vec![0.0; m];
    for row in data {
        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    for v in &mut var {
        *v /= n;
    }
    (mean, var)
}

fn records_channel(records: &[EnsembleRecord], f: impl Fn(&EnsembleRecord) -> &[f64]) -> Vec<Vec<f64>> {
    records.iter().map(|r| f(r).to_vec()).collect()
}

fn pearson(a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    let n = a.len() as f64;
    let m = a[0].len();
    let (mean_a, var_a) = channel_stats(a);
    let (mean_b, var_b) = channel_stats(b);
    // Relative floor below which a channel is considered deterministic.
    let scale_a: f64 = mean_a.iter().map(|v| v * v).sum::<f64>() / m as f64;
    let scale_b: f64 = mean_b.iter().map(|v| v * v).sum::<f64>() / m as f64;
    let floor_a = 1e-24 * scale_a.max(1e-300);
    let floor_b = 1e-24 * scale_b.max(1e-300);
    DMatrix::from_fn(m, m, |i, j| {
        if var_a[i] <= floor_a || var_b[j] <= floor_b {
            return f64::NAN;
        }
        let mut cov = 0.0;
        for (ra, rb) in a.iter().zip(b) {
            cov += (ra[i] - mean_a[i]) * (rb[j] - mean_b[j]);
        }
        cov / n / (var_a[i] * var_b[j]).sqrt()
    })
}

fn ensure_samples(records: &[EnsembleRecord]) -> Result<()> {
    if records.len() < 2 {
        return Err(Error::domain("correlation estimation needs at least 2 records"));
    }
    Ok(())
}

/// Pearson correlation of n₊ at site i with n₋ at site j
/// (pair creation produces matched ±1 populations).
pub fn corr_pm(records: &[EnsembleRecord]) -> Result<CorrelationMatrix> {
    ensure_samples(records)?;
    let a = records_channel(records, |r| &r.n_plus);
    let b = records_channel(records, |r| &r.n_minus);
    Ok(CorrelationMatrix {
        kind: CorrelationKind::Pm,
        values: pearson(&a, &b),
        sample_count: records.len(),
        periods: records[0].periods,
        label: "pm".into(),
    })
}

/// Pearson correlation of the transverse spin between sites.
pub fn corr_xx(records: &[EnsembleRecord]) -> Result<CorrelationMatrix> {
    ensure_samples(records)?;
    let a = records_channel(records, |r| &r.fx);
    Ok(CorrelationMatrix {
        kind: CorrelationKind::Xx,
        values: pearson(&a, &a),
        sample_count: records.len(),
        periods: records[0].periods,
        label: "xx".into(),
    })
}

/// Population-normalized covariance c^xx_ij = Cov(Fx_i, Fx_j)/n².
pub fn cxx(records: &[EnsembleRecord], n: f64) -> Result<CorrelationMatrix> {
    ensure_samples(records)?;
    let a = records_channel(records, |r| &r.fx);
    let count = a.len() as f64;
    let m = a[0].len();
    let (mean, _) = channel_stats(&a);
    let values = DMatrix::from_fn(m, m, |i, j| {
        let mut cov = 0.0;
        for row in &a {
            cov += (row[i] - mean[i]) * (row[j] - mean[j]);
        }
        cov / count / (n * n)
    });
    Ok(CorrelationMatrix {
        kind: CorrelationKind::Cxx,
        values,
        sample_count: records.len(),
        periods: records[0].periods,
        label: "cxx".into(),
    })
}

/// Diagonal-band average C(d) for d = −(M−1)…(M−1). Open chains divide by
/// the band population (M−|d|); the periodic variant averages (i, i+d mod M)
/// over all i. Flagged (NaN) entries are excluded with the divisor adjusted.
pub fn distance_profile(c: &CorrelationMatrix, periodic: bool) -> Vec<(i64, f64)> {
    let m = c.m() as i64;
    (-(m - 1)..=(m - 1))
        .map(|d| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..m {
                let j = if periodic {
                    (i + d).rem_euclid(m)
                } else {
                    let j = i + d;
                    if !(0..m).contains(&j) {
                        continue;
                    }
                    j
                };
                let v = c.values[(i as usize, j as usize)];
                if v.is_nan() {
                    continue;
                }
                sum += v;
                count += 1;
            }
            (d, if count == 0 { f64::NAN } else { sum / count as f64 })
        })
        .collect()
}

/// Root-mean-square structure factor |F̃ᵡ_k| = ⟨|Σ_l e^{ikl} Fx_l/√M|²⟩^{1/2}
/// on the momentum grid k = 2πm/M.
pub fn structure_factor(records: &[EnsembleRecord]) -> Result<Vec<f64>> {
    ensure_samples(records)?;
    let m = records[0].fx.len();
    let mut acc = vec![0.0; m];
    for rec in records {
        for (k, a) in acc.iter_mut().enumerate() {
            let mut ft = Complex64::ZERO;
            for (l, &f) in rec.fx.iter().enumerate() {
                ft += Complex64::from_polar(f, 2.0 * PI * ((k * l) % m) as f64 / m as f64);
            }
            *a += ft.norm_sqr() / m as f64;
        }
    }
    Ok(acc.iter().map(|&s| (s / records.len() as f64).sqrt()).collect())
}

/// Bipartite correlation C_b = Corr(Σ_{i∈I} Fx_i, Σ_{j∉I} Fx_j) with
/// leave-one-realization-out jackknife standard deviation.
pub fn bipartite_correlation(
    records: &[EnsembleRecord],
    partition: &[usize],
) -> Result<(f64, f64)> {
    ensure_samples(records)?;
    let m = records[0].fx.len();
    if 2 * partition.len() != m {
        return Err(Error::domain(format!(
            "bipartition must be balanced: |I| = {} for M = {m}",
            partition.len()
        )));
    }
    let mut in_left = vec![false; m];
    for &i in partition {
        if i >= m || in_left[i] {
            return Err(Error::domain(format!("invalid partition site {i}")));
        }
        in_left[i] = true;
    }
    let sums: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let mut left = 0.0;
            let mut right = 0.0;
            for (i, &f) in r.fx.iter().enumerate() {
                if in_left[i] {
                    left += f;
                } else {
                    right += f;
                }
            }
            (left, right)
        })
        .collect();
    // Centered moments; leave-one-out values follow by O(1) downdating:
    // excluding record i shifts both means by -d_i/(N-1), giving
    // cov⁽ⁱ⁾ = A - dl_i·dr_i·N/(N-1) (and likewise for the variances).
    let n = sums.len();
    let nf = n as f64;
    let (ml, mr) = sums
        .iter()
        .fold((0.0, 0.0), |a, s| (a.0 + s.0 / nf, a.1 + s.1 / nf));
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    for s in &sums {
        let (dl, dr) = (s.0 - ml, s.1 - mr);
        a += dl * dr;
        b += dl * dl;
        c += dr * dr;
    }
    let full = a / (b * c).sqrt();
    let shrink = nf / (nf - 1.0);
    let loo: Vec<f64> = sums
        .iter()
        .map(|s| {
            let (dl, dr) = (s.0 - ml, s.1 - mr);
            (a - dl * dr * shrink)
                / ((b - dl * dl * shrink) * (c - dr * dr * shrink)).sqrt()
        })
        .collect();
    let mean_loo = loo.iter().sum::<f64>() / nf;
    let var: f64 = loo.iter().map(|&v| (v - mean_loo) * (v - mean_loo)).sum::<f64>()
        * (n as f64 - 1.0)
        / n as f64;
    Ok((full, var.sqrt()))
}

/// All balanced bipartitions of M sites, each represented by the half
/// containing site 0 (complementary cuts are identical), in deterministic
/// lexicographic order. C(16,8)/2 = 6435 cuts for M = 16.
pub fn balanced_bipartitions(m: usize) -> Result<Vec<Vec<usize>>> {
    if m % 2 != 0 || m < 2 {
        return Err(Error::domain(format!("balanced bipartition needs even M, got {m}")));
    }
    if m > 20 {
        return Err(Error::Unsupported(format!(
            "exhaustive bipartition scan is limited to M <= 20, got {m}"
        )));
    }
    let half = m / 2;
    let mut cuts = Vec::new();
    let mut current = vec![0usize];
    fn extend(cuts: &mut Vec<Vec<usize>>, current: &mut Vec<usize>, next: usize, m: usize, half: usize) {
        if current.len() == half {
            cuts.push(current.clone());
            return;
        }
        for i in next..m {
            current.push(i);
            extend(cuts, current, i + 1, m, half);
            current.pop();
        }
    }
    extend(&mut cuts, &mut current, 1, m, half);
    Ok(cuts)
}

/// Contiguous physical cut {0..M/2-1}.
pub fn physical_cut(m: usize) -> Vec<usize> {
    (0..m / 2).collect()
}

/// Cut that is contiguous in tree-leaf order: the Monna preimage of
/// {0..M/2-1}.
pub fn monna_cut(m: usize) -> Result<Vec<usize>> {
    let bits = m.trailing_zeros();
    if 1usize << bits != m {
        return Err(Error::domain(format!("Monna cut needs M a power of two, got {m}")));
    }
    let mut cut: Vec<usize> = (0..m)
        .filter(|&i| monna_map(i, bits).map(|j| j < m / 2).unwrap_or(false))
        .collect();
    cut.sort_unstable();
    Ok(cut)
}

/// Bipartite correlations for one ensemble: the physical cut, the Monna
/// cut, and the minimum over all balanced cuts (with the minimizing cut).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BipartitionSummary {
    pub physical: (f64, f64),
    pub monna: (f64, f64),
    pub min_all: (f64, f64),
    pub min_cut: Vec<usize>,
}

pub fn bipartition_summary(records: &[EnsembleRecord]) -> Result<BipartitionSummary> {
    let m = records[0].fx.len();
    let physical = bipartite_correlation(records, &physical_cut(m))?;
    let monna = bipartite_correlation(records, &monna_cut(m)?)?;
    let cuts = balanced_bipartitions(m)?;
    let evaluated: Vec<(f64, f64)> = cuts
        .par_iter()
        .map(|cut| bipartite_correlation(records, cut))
        .collect::<Result<_>>()?;
    let (best, &min_all) = evaluated
        .iter()
        .enumerate()
        .min_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
        .expect("at least one balanced cut");
    Ok(BipartitionSummary { physical, monna, min_all, min_cut: cuts[best].clone() })
}
