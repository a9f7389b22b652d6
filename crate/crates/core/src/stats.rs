//! Mean and normal-approximation confidence intervals.

/// z for a two-sided 95% interval.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 when n < 2.
    pub std_dev: f64,
    pub ci95_half_width: f64,
}

/// `None` for an empty sample.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std_dev = if n < 2 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        libm::sqrt(ss / (n - 1) as f64)
    };
    Some(Summary {
        n,
        mean,
        std_dev,
        ci95_half_width: Z95 * std_dev / libm::sqrt(n as f64),
    })
}
