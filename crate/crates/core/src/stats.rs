//! Group comparisons: Mann-Whitney U and the pooled-variance t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::StatsError;

/// Largest pooled sample for which the exact null distribution is enumerated.
pub const EXACT_MAX_N: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MannWhitneyU,
    IndependentT,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMode {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub effect_size: f64,
    /// Names the effect-size formula.
    pub effect_size_kind: String,
    pub method: Method,
    pub alternative: Alternative,
    pub n1: usize,
    pub n2: usize,
    /// Degrees of freedom for the t-test.
    pub df: Option<f64>,
}

fn check(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Doubled midranks of the pooled sample (always integers) and the tie-group sizes.
fn doubled_ranks(pooled: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let n = pooled.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[idx[j]] == pooled[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j share the midrank (i+1+j)/2.
        for &k in &idx[i..j] {
            ranks[k] = (i + 1 + j) as u64;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

/// U for `a`: the number of (a, b) pairs with a > b, ties counting one half.
pub fn u_statistic(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    check(a, b)?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, _) = doubled_ranks(&pooled);
    let r2: u64 = ranks[..a.len()].iter().sum();
    let n1 = a.len() as f64;
    Ok(r2 as f64 / 2.0 - n1 * (n1 + 1.0) / 2.0)
}

fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

fn tie_corrected_sd(n1: usize, n2: usize, ties: &[usize]) -> f64 {
    let (n1, n2) = (n1 as f64, n2 as f64);
    let n = n1 + n2;
    let tie_sum: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_sum / (n * (n - 1.0)).max(1.0));
    var.max(0.0).sqrt()
}

/// Counts of doubled rank sums over all `n1`-subsets of `ranks`.
fn subset_sum_counts(ranks: &[u64], n1: usize) -> Vec<u128> {
    let total: u64 = ranks.iter().sum();
    let width = total as usize + 1;
    let mut dp = vec![vec![0u128; width]; n1 + 1];
    dp[0][0] = 1;
    for &r in ranks {
        for k in (1..=n1).rev() {
            for s in (r as usize..width).rev() {
                let add = dp[k - 1][s - r as usize];
                dp[k][s] += add;
            }
        }
    }
    dp.swap_remove(n1)
}

pub fn mann_whitney_u(a: &[f64], b: &[f64], mode: UMode, alternative: Alternative) -> Result<TestResult, StatsError> {
    check(a, b)?;
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_ranks(&pooled);
    let r2_obs: u64 = ranks[..n1].iter().sum();
    let offset = (n1 * (n1 + 1)) as i64;
    // Doubled U, doubled mean.
    let u2_obs = r2_obs as i64 - offset;
    let mean2 = (n1 * n2) as i64;
    let u = u2_obs as f64 / 2.0;
    let mu = mean2 as f64 / 2.0;
    let sd = tie_corrected_sd(n1, n2, &ties);

    let p_value = match mode {
        UMode::Exact => {
            if n > EXACT_MAX_N {
                return Err(StatsError::ExactTooLarge { max: EXACT_MAX_N, got: n });
            }
            let counts = subset_sum_counts(&ranks, n1);
            let mut hit = 0u128;
            let mut all = 0u128;
            for (s, &c) in counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let u2 = s as i64 - offset;
                all += c;
                let extreme = match alternative {
                    Alternative::TwoSided => (u2 - mean2).abs() >= (u2_obs - mean2).abs(),
                    Alternative::Less => u2 <= u2_obs,
                    Alternative::Greater => u2 >= u2_obs,
                };
                if extreme {
                    hit += c;
                }
            }
            hit as f64 / all as f64
        }
        UMode::NormalApprox => {
            if sd == 0.0 {
                1.0
            } else {
                match alternative {
                    Alternative::TwoSided => (2.0 * normal_sf(((u - mu).abs() - 0.5).max(0.0) / sd)).min(1.0),
                    Alternative::Less => 1.0 - normal_sf((u - mu + 0.5) / sd),
                    Alternative::Greater => normal_sf((u - mu - 0.5) / sd),
                }
            }
        }
    };
    let z = if sd > 0.0 { (u - mu) / sd } else { 0.0 };
    Ok(TestResult {
        statistic: u,
        p_value: p_value.clamp(0.0, 1.0),
        effect_size: z * z / n as f64,
        effect_size_kind: "eta_squared_z2_over_n".into(),
        method: Method::MannWhitneyU,
        alternative,
        n1,
        n2,
        df: None,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0))
}

/// Pooled-variance two-sample t-test; effect size is Cohen's d.
pub fn independent_t(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult, StatsError> {
    check(a, b)?;
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooSmall { need: 2, got: s.len() });
        }
    }
    let (n1, n2) = (a.len(), b.len());
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let df = (n1 + n2 - 2) as f64;
    let pooled = ((n1 - 1) as f64 * v1 + (n2 - 1) as f64 * v2) / df;
    if !(pooled > 0.0) {
        return Err(StatsError::ZeroVariance);
    }
    let t = (m1 - m2) / (pooled * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| StatsError::NonFinite)?;
    let p = match alternative {
        Alternative::TwoSided => 2.0 * dist.sf(t.abs()),
        Alternative::Less => dist.cdf(t),
        Alternative::Greater => dist.sf(t),
    };
    Ok(TestResult {
        statistic: t,
        p_value: p.clamp(0.0, 1.0),
        effect_size: (m1 - m2) / pooled.sqrt(),
        effect_size_kind: "cohens_d_pooled".into(),
        method: Method::IndependentT,
        alternative,
        n1,
        n2,
        df: Some(df),
    })
}
