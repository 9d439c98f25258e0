//! Image metrics and the small statistics the experiments report.

use flashdiff_core::numerics::{RngStream, Tensor};

use crate::error::{HarnessError, Result};

pub fn mse(x_hat: &Tensor, x0: &Tensor) -> Result<f64> {
    if x_hat.shape() != x0.shape() {
        return Err(HarnessError::Invalid(format!(
            "metric shapes differ: {:?} vs {:?}",
            x_hat.shape(),
            x0.shape()
        )));
    }
    let n = x0.len().max(1) as f64;
    Ok(x_hat.data().iter().zip(x0.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// `10 log10(1 / mse)` for unit peak; infinite when `mse == 0`.
pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn metrics(x_hat: &Tensor, x0: &Tensor) -> Result<(f64, f64)> {
    let m = mse(x_hat, x0)?;
    Ok((m, psnr(m)))
}

/// Shortest round-trip decimal; infinities as `inf` / `-inf`.
pub fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

pub fn parse_f64(s: &str) -> Option<f64> {
    match s {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Pearson correlation; NaN when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "pearson inputs differ in length");
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// 1-based ranks with ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Percentile rank in `(0, 100)`: `100 (rank - 0.5) / n`.
pub fn percentiles(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    ranks(x).into_iter().map(|r| 100.0 * (r - 0.5) / n).collect()
}

/// One-sided permutation p-value for a positive Pearson correlation:
/// `(1 + #{perm: corr >= observed}) / (1 + permutations)`.
pub fn permutation_pvalue(x: &[f64], y: &[f64], permutations: usize, rng: &mut RngStream) -> f64 {
    let observed = pearson(x, y);
    let mut shuffled = y.to_vec();
    let mut hits = 0usize;
    for _ in 0..permutations {
        for i in (1..shuffled.len()).rev() {
            let j = rng.int_range(0, i);
            shuffled.swap(i, j);
        }
        if pearson(x, &shuffled) >= observed {
            hits += 1;
        }
    }
    (1 + hits) as f64 / (1 + permutations) as f64
}
