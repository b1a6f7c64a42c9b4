//! Small statistical helpers: mean/stderr accumulation, chi-square
//! goodness of fit, and the Mann–Whitney rank-sum test.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        Self::from_moments(std::iter::once((
            xs.len() as u64,
            xs.iter().sum(),
            xs.iter().map(|x| x * x).sum(),
        )))
    }

    /// Combine `(count, sum, sum_of_squares)` parts, in order.
    pub fn from_moments(parts: impl Iterator<Item = (u64, f64, f64)>) -> Self {
        let (mut n, mut sum, mut sq) = (0u64, 0.0, 0.0);
        for (k, s, q) in parts {
            n += k;
            sum += s;
            sq += q;
        }
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = sum / n as f64;
        let var = if n > 1 {
            ((sq - n as f64 * mean * mean) / (n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }

    /// `|mean - reference| <= k * stderr`, with a floor for zero-variance
    /// samples.
    pub fn within(&self, reference: f64, k: f64) -> bool {
        (self.mean - reference).abs() <= k * self.stderr + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of `counts` against `probs`. Cells with zero
/// expected probability must have zero counts (otherwise p = 0) and do not
/// contribute degrees of freedom.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> ChiSquareResult {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&c, &p) in counts.iter().zip(probs) {
        if p <= 0.0 {
            if c > 0 {
                return ChiSquareResult { statistic: f64::INFINITY, dof: 0, p_value: 0.0 };
            }
            continue;
        }
        let e = p * total as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells <= 1 {
        return ChiSquareResult { statistic: 0.0, dof: 0, p_value: 1.0 };
    }
    let dof = cells - 1;
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    ChiSquareResult { statistic: stat, dof, p_value: 1.0 - dist.cdf(stat) }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSumResult {
    /// Mann–Whitney U of the first sample.
    pub u: f64,
    pub z: f64,
    /// One-sided p-value for "first sample tends to be larger".
    pub p_greater: f64,
}

/// Mann–Whitney rank-sum test with mid-ranks for ties and the tie-corrected
/// normal approximation (with continuity correction).
pub fn rank_sum_greater(xs: &[f64], ys: &[f64]) -> RankSumResult {
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let mut all: Vec<(f64, bool)> = xs.iter().map(|&x| (x, true)).chain(ys.iter().map(|&y| (y, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let mut rank_sum_x = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &all[i..=j] {
            if item.1 {
                rank_sum_x += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_x - n1 * (n1 + 1.0) / 2.0;
    let mean = n1 * n2 / 2.0;
    let nf = n as f64;
    let var = n1 * n2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return RankSumResult { u, z: 0.0, p_greater: if u > mean { 0.0 } else { 1.0 } };
    }
    let z = (u - mean - 0.5) / var.sqrt();
    let normal = Normal::standard();
    RankSumResult { u, z, p_greater: 1.0 - normal.cdf(z) }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}
