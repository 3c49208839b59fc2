//! Goodness-of-fit and homogeneity tests used by the statistical checks.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Bins whose expected count falls below this are pooled into one bin.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Number of bins after pooling.
    pub bins: usize,
}

impl ChiSquareOutcome {
    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn upper_tail(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
    dist.sf(statistic)
}

/// Pearson goodness-of-fit of `observed` counts against `probs`.
///
/// Bins with expected count below [`MIN_EXPECTED`] are pooled; if the pooled
/// bin is itself still sparse it is merged into the smallest remaining bin.
/// Observations outside the support of `probs` must be counted by the caller
/// in `unexpected`; any such count yields an infinite statistic.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], unexpected: u64) -> ChiSquareOutcome {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum::<u64>() + unexpected;
    let n = total as f64;
    if unexpected > 0 {
        return ChiSquareOutcome {
            statistic: f64::INFINITY,
            dof: observed.len().saturating_sub(1),
            p_value: 0.0,
            bins: observed.len(),
        };
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * n;
        if e < MIN_EXPECTED {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            bins.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 || pooled.0 > 0.0 {
        if pooled.1 >= MIN_EXPECTED || bins.is_empty() {
            bins.push(pooled);
        } else {
            let smallest = bins
                .iter_mut()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            smallest.0 += pooled.0;
            smallest.1 += pooled.1;
        }
    }
    finish(&bins, bins.len().saturating_sub(1))
}

fn finish(bins: &[(f64, f64)], dof: usize) -> ChiSquareOutcome {
    let statistic: f64 = bins
        .iter()
        .map(|&(o, e)| {
            if e > 0.0 {
                (o - e).powi(2) / e
            } else if o > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    ChiSquareOutcome {
        statistic,
        dof,
        p_value: if statistic.is_finite() { upper_tail(statistic, dof) } else { 0.0 },
        bins: bins.len(),
    }
}

/// Goodness-of-fit over a keyed histogram against an exact law given as
/// `(key, probability)` pairs. Keys observed but absent from the law count as
/// unexpected.
pub fn chi_square_gof_keyed<K: Eq + Hash>(counts: &HashMap<K, u64>, law: &[(K, f64)]) -> ChiSquareOutcome {
    let observed: Vec<u64> = law.iter().map(|(k, _)| counts.get(k).copied().unwrap_or(0)).collect();
    let probs: Vec<f64> = law.iter().map(|(_, p)| *p).collect();
    let seen: u64 = observed.iter().sum();
    let total: u64 = counts.values().sum();
    chi_square_gof(&observed, &probs, total - seen)
}

/// Two-sample chi-square test of homogeneity on keyed histograms.
///
/// Keys whose combined count is below `2 * MIN_EXPECTED` are pooled into one
/// bin before the test.
pub fn chi_square_homogeneity<K: Eq + Hash + Clone>(a: &HashMap<K, u64>, b: &HashMap<K, u64>) -> ChiSquareOutcome {
    let mut keys: Vec<&K> = a.keys().collect();
    keys.extend(b.keys().filter(|k| !a.contains_key(*k)));
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for k in keys {
        let x = a.get(k).copied().unwrap_or(0) as f64;
        let y = b.get(k).copied().unwrap_or(0) as f64;
        if x + y < 2.0 * MIN_EXPECTED {
            pooled.0 += x;
            pooled.1 += y;
        } else {
            cells.push((x, y));
        }
    }
    if pooled.0 + pooled.1 > 0.0 {
        cells.push(pooled);
    }
    let na: f64 = cells.iter().map(|c| c.0).sum();
    let nb: f64 = cells.iter().map(|c| c.1).sum();
    let n = na + nb;
    let mut statistic = 0.0;
    for &(x, y) in &cells {
        let col = x + y;
        let ea = na * col / n;
        let eb = nb * col / n;
        if ea > 0.0 {
            statistic += (x - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            statistic += (y - eb).powi(2) / eb;
        }
    }
    let dof = cells.len().saturating_sub(1);
    ChiSquareOutcome {
        statistic,
        dof,
        p_value: upper_tail(statistic, dof),
        bins: cells.len(),
    }
}

/// Total variation distance between two empirical histograms.
pub fn empirical_tv<K: Eq + Hash>(a: &HashMap<K, u64>, b: &HashMap<K, u64>) -> f64 {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    let mut tv = 0.0;
    for (k, &x) in a {
        let y = b.get(k).copied().unwrap_or(0);
        tv += (x as f64 / na as f64 - y as f64 / nb as f64).abs();
    }
    for (k, &y) in b {
        if !a.contains_key(k) {
            tv += y as f64 / nb as f64;
        }
    }
    tv / 2.0
}

/// Normal-approximation standard error of a proportion.
pub fn proportion_se(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MeanSe {
        mean,
        se: (var / n).sqrt(),
    }
}
