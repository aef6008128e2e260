//! Small sample statistics shared across modules.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator. Zero for fewer
/// than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    libm::sqrt(ss / (n - 1) as f64)
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_var(xs: &[f64]) -> f64 {
    let s = sample_std(xs);
    s * s
}

/// Sample standard deviation of one column of a row-major matrix.
pub fn column_std(rows: &[f64], k: usize, col: usize) -> f64 {
    let n = rows.len() / k;
    if n < 2 {
        return 0.0;
    }
    let mu = (0..n).map(|i| rows[i * k + col]).sum::<f64>() / n as f64;
    let ss: f64 = (0..n)
        .map(|i| {
            let d = rows[i * k + col] - mu;
            d * d
        })
        .sum();
    libm::sqrt(ss / (n - 1) as f64)
}

pub fn column_mean(rows: &[f64], k: usize, col: usize) -> f64 {
    let n = rows.len() / k;
    (0..n).map(|i| rows[i * k + col]).sum::<f64>() / n as f64
}
