//! Small statistical helpers shared by the verification engine and the tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Sum by recursive halving; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample standard deviation.
    pub sd: f64,
    /// `sd / sqrt(n)`.
    pub stderr: f64,
}

/// Two-pass mean and standard error.
pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary {
            n,
            mean: f64::NAN,
            sd: f64::NAN,
            stderr: f64::NAN,
        };
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return Summary {
            n,
            mean,
            sd: 0.0,
            stderr: 0.0,
        };
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let sd = (pairwise_sum(&dev) / (n - 1) as f64).sqrt();
    Summary {
        n,
        mean,
        sd,
        stderr: sd / (n as f64).sqrt(),
    }
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Two-sided z threshold for `m` tests at family-wise level `alpha`.
pub fn bonferroni_z(alpha: f64, m: usize) -> f64 {
    normal_quantile(1.0 - alpha / (2.0 * m.max(1) as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson goodness of fit of `observed` counts against cell probabilities
/// `probs`. Any probability not covered by `probs` forms one extra tail cell
/// (whose observed count is whatever `observed` has beyond `probs`). Adjacent
/// cells are merged left to right until each expects at least 5.
pub fn chi_square(observed: &[u64], probs: &[f64]) -> ChiSquare {
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let mut cells: Vec<(f64, f64)> = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| (observed.get(i).copied().unwrap_or(0) as f64, p * nf))
        .collect();
    let tail_obs: u64 = observed.iter().skip(probs.len()).sum();
    let tail_p = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    cells.push((tail_obs as f64, tail_p * nf));

    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in cells {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= 5.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match merged.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => merged.push(acc),
        }
    }
    let statistic: f64 = merged
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else { 0.0 })
        .sum();
    let dof = merged.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(dof as f64).expect("positive dof").cdf(statistic)
    };
    ChiSquare {
        statistic,
        dof,
        p_value,
    }
}

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value `sqrt(-ln(alpha/2)/2) / sqrt(n)`.
pub fn ks_critical(n: usize, alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}
