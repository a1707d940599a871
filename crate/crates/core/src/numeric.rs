//! Small numerical helpers shared by the risk, prior and sampler modules.

/// Block size below which pairwise summation falls back to a plain loop.
const PAIRWISE_BLOCK: usize = 32;

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so results are reproducible bit for bit.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `f(i)` over `lo..hi` without materialising the terms.
pub fn pairwise_sum_by<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
    if hi - lo <= PAIRWISE_BLOCK {
        return (lo..hi).map(f).sum();
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_sum_by(lo, mid, f) + pairwise_sum_by(mid, hi, f)
}

/// `log(sum(exp(xs)))`, stable for large magnitudes. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = xs.iter().map(|&x| (x - max).exp()).sum();
    max + s.ln()
}

/// Natural log of the binomial coefficient `binom(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    statrs::function::factorial::ln_binomial(n as u64, k as u64)
}

/// Median of a sample (average of the two middle values for even length).
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). NaN for an empty sample.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = pairwise_sum(xs) / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss = pairwise_sum_by(0, xs.len(), &|i| (xs[i] - mean) * (xs[i] - mean));
    let var = ss / (m - 1.0);
    (mean, (var / m).sqrt())
}
