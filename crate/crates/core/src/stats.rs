//! Small statistical helpers shared by the experiment drivers.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(v: &[f64]) -> f64 {
    (sample_variance(v) / v.len() as f64).sqrt()
}

/// Outcome of a chi-squared goodness-of-fit test.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquaredTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub bins: usize,
}

/// Tests integer samples against the pmf `p(0), p(1), ...`. Consecutive
/// values are merged until each bin expects at least `min_expected`
/// counts; everything beyond the last explicit bin (including values past
/// the end of `pmf`) forms a tail bin.
pub fn chi_squared_gof(samples: &[u32], pmf: &[f64], min_expected: f64) -> Result<ChiSquaredTest> {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return Err(Error::InvalidParams("chi-squared test needs samples".into()));
    }
    let total_p: f64 = pmf.iter().sum();
    let max_k = samples.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0u64; max_k.max(pmf.len()) + 1];
    for &k in samples {
        hist[k as usize] += 1;
    }

    // Greedy left-to-right binning; each bin records its first value.
    let mut starts = Vec::new();
    let mut expected = Vec::new();
    let mut acc = 0.0;
    let mut start = 0;
    for (k, p) in pmf.iter().enumerate() {
        acc += p * n;
        if acc >= min_expected {
            starts.push(start);
            expected.push(acc);
            acc = 0.0;
            start = k + 1;
        }
    }
    // Remaining pmf mass plus the unlisted tail joins the last bin.
    let leftover = acc + (1.0 - total_p).max(0.0) * n;
    if expected.is_empty() {
        starts.push(0);
        expected.push(leftover);
    } else {
        *expected.last_mut().expect("non-empty") += leftover;
    }
    let bins = expected.len();
    let mut observed = vec![0f64; bins];
    for (k, &c) in hist.iter().enumerate() {
        let b = starts.partition_point(|&s| s <= k) - 1;
        observed[b] += c as f64;
    }
    if bins < 2 {
        return Ok(ChiSquaredTest {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
            bins,
        });
    }
    let statistic: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidParams(e.to_string()))?;
    Ok(ChiSquaredTest {
        statistic,
        dof,
        p_value: 1.0 - dist.cdf(statistic),
        bins,
    })
}

/// Contiguous blocks of `w` sites covering `1..=sites`; the last block
/// absorbs any remainder shorter than `w`.
pub fn site_blocks(sites: usize, w: usize) -> Vec<(usize, usize)> {
    let w = w.max(1).min(sites);
    let count = sites / w;
    (0..count)
        .map(|j| {
            let lo = 1 + j * w;
            let hi = if j + 1 == count { sites } else { lo + w - 1 };
            (lo, hi)
        })
        .collect()
}
