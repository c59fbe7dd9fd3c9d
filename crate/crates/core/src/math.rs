//! Floating point helpers that work without `std`.

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// Index of the largest value; ties go to the lowest index.
///
/// NaN entries are never selected unless every entry is NaN.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b || (b.is_nan() && !v.is_nan()) => best = Some((i, v)),
            _ => {}
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin<I: IntoIterator<Item = f64>>(values: I) -> Option<usize> {
    argmax(values.into_iter().map(|v| -v))
}

/// Median of an odd-length slice. The slice is reordered.
pub fn median_odd(values: &mut [f64]) -> f64 {
    debug_assert!(values.len() % 2 == 1);
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Smallest odd integer that is at least `x` (and at least 1).
pub fn ceil_odd(x: f64) -> usize {
    let c = ceil(x).max(1.0) as usize;
    if c.is_multiple_of(2) {
        c + 1
    } else {
        c
    }
}

/// Sample mean and unbiased standard deviation (`None` for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    if values.is_empty() {
        return (f64::NAN, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(sqrt(var)))
}
