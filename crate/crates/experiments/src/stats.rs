//! Estimators, confidence intervals and small regressions.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    pairwise_sum(&dev) / (values.len() as f64 - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Crude,
    Importance,
}

/// Probability estimate with a 95% interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub method: Method,
    pub p: f64,
    /// `ln p̂`, computed in log space.
    pub log_p: f64,
    pub lo: f64,
    pub hi: f64,
    pub std_err: f64,
    pub paths: usize,
    pub hits: usize,
    /// No hits: `p̂ = 0` and `hi` is a one-sided bound.
    pub floor: bool,
    /// Importance sampling only: effective sample size of the hit weights.
    pub ess: Option<f64>,
    /// Importance sampling only: mean likelihood ratio over all paths and its
    /// standard error.
    pub weight_mean: Option<f64>,
    pub weight_se: Option<f64>,
}

impl Estimate {
    /// Wilson score interval for `hits` out of `paths`.
    pub fn crude(hits: usize, paths: usize) -> Self {
        let n = paths as f64;
        let p = hits as f64 / n;
        let std_err = (p * (1.0 - p) / n).sqrt();
        if hits == 0 {
            return Self {
                method: Method::Crude,
                p: 0.0,
                log_p: f64::NEG_INFINITY,
                lo: 0.0,
                hi: 1.0 - 0.05f64.powf(1.0 / n),
                std_err: 0.0,
                paths,
                hits,
                floor: true,
                ess: None,
                weight_mean: None,
                weight_se: None,
            };
        }
        let z2 = Z95 * Z95;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = Z95 / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
        Self {
            method: Method::Crude,
            p,
            log_p: p.ln(),
            lo: (center - half).max(0.0),
            hi: (center + half).min(1.0),
            std_err,
            paths,
            hits,
            floor: false,
            ess: None,
            weight_mean: None,
            weight_se: None,
        }
    }

    /// Weighted estimate from per-path log likelihood ratios and indicators.
    pub fn importance(log_weights: &[f64], hit: &[bool]) -> Self {
        let paths = log_weights.len();
        let n = paths as f64;
        let shift = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = log_weights.iter().map(|&l| (l - shift).exp()).collect();
        let all_mean = mean(&scaled);
        let all_se = (variance(&scaled) / n).sqrt();
        let contrib: Vec<f64> = scaled.iter().zip(hit).map(|(&w, &h)| if h { w } else { 0.0 }).collect();
        let hits = hit.iter().filter(|&&h| h).count();
        let m = mean(&contrib);
        let se = (variance(&contrib) / n).sqrt();
        let scale = shift.exp();
        let hw: Vec<f64> = contrib.iter().copied().filter(|&w| w > 0.0).collect();
        let sq: Vec<f64> = hw.iter().map(|w| w * w).collect();
        let ess = if hw.is_empty() {
            0.0
        } else {
            pairwise_sum(&hw).powi(2) / pairwise_sum(&sq)
        };
        let p = m * scale;
        let std_err = se * scale;
        Self {
            method: Method::Importance,
            p,
            log_p: shift + m.ln(),
            lo: (p - Z95 * std_err).max(0.0),
            hi: if hits == 0 { f64::NAN } else { p + Z95 * std_err },
            std_err,
            paths,
            hits,
            floor: hits == 0,
            ess: Some(ess),
            weight_mean: Some(all_mean * scale),
            weight_se: Some(all_se * scale),
        }
    }

    /// Whether two intervals overlap.
    pub fn overlaps(&self, other: &Self) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Least-squares line `y = a + b x` with its coefficient of determination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let mx = mean(x);
    let my = mean(y);
    let sxy: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect();
    let sxx: Vec<f64> = x.iter().map(|a| (a - mx) * (a - mx)).collect();
    let syy: Vec<f64> = y.iter().map(|b| (b - my) * (b - my)).collect();
    let (sxy, sxx, syy) = (pairwise_sum(&sxy), pairwise_sum(&sxx), pairwise_sum(&syy));
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LineFit {
        intercept: my - slope * mx,
        slope,
        r2,
    }
}
