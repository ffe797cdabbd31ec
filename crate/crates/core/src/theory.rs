//! Entropy, predictability, and error lower bounds.
//!
//! Quantifies why predicting several simple factors separately can beat
//! predicting their mixture: each factor's next state is easier to guess
//! (higher Fano predictability), so its expected-squared-error floor is
//! lower, and the floors add up to less than the mixture's floor.
//!
//! Everything here works in `f64` regardless of the model scalar type —
//! the tolerances involved (1e-10 root finding, 1e-12 identities) are
//! below `f32` resolution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ── distributions ───────────────────────────────────────────────────────

/// Finite discrete distribution over real values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<f64>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    /// Validates that the support values are distinct and finite and the
    /// probabilities are nonnegative and sum to one within `1e-12`.
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::domain(
                "distribution",
                format!(
                    "{} support values, {} probabilities",
                    support.len(),
                    probs.len()
                ),
            ));
        }
        if support.is_empty() {
            return Err(Error::domain("distribution", "empty support"));
        }
        if support.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("distribution", "non-finite support value"));
        }
        for i in 0..support.len() {
            for j in (i + 1)..support.len() {
                if support[i] == support[j] {
                    return Err(Error::domain(
                        "distribution",
                        format!("duplicate support value {}", support[i]),
                    ));
                }
            }
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("distribution", "probability outside [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(
                "distribution",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        Ok(DiscreteDistribution { support, probs })
    }

    /// Empirical distribution of a sample, grouping exactly equal values.
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::domain("distribution", "empty sample"));
        }
        if xs.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("distribution", "non-finite sample value"));
        }
        let mut counts: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
        for &x in xs {
            // Key by bit pattern; +0.0 and -0.0 compare equal, so normalize.
            let x = if x == 0.0 { 0.0 } else { x };
            counts.entry(x.to_bits()).or_insert((x, 0)).1 += 1;
        }
        let n = xs.len() as f64;
        let (support, probs) = counts.values().map(|&(x, c)| (x, c as f64 / n)).unzip();
        DiscreteDistribution::new_unchecked(support, probs)
    }

    fn new_unchecked(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        Ok(DiscreteDistribution { support, probs })
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| x * p)
            .sum()
    }

    /// Population variance `E[(X - E X)^2]`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.support
            .iter()
            .zip(&self.probs)
            .map(|(x, p)| p * (x - m) * (x - m))
            .sum()
    }
}

/// Population variance of a raw series (divides by `n`, not `n - 1`).
pub fn population_variance(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::domain("variance", "empty series"));
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("variance", "non-finite value"));
    }
    let n = xs.len() as f64;
    let mean: f64 = xs.iter().sum::<f64>() / n;
    Ok(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n)
}

// ── quantization ────────────────────────────────────────────────────────

/// Discretizes a real series into `m` states with equal-width bins over
/// `[min, max]`; the maximum clamps into the top bin and a constant series
/// maps entirely to state zero. Monotone: `x <= y` implies
/// `state(x) <= state(y)`.
pub fn quantize(series: &[f64], m: usize) -> Result<Vec<usize>> {
    Ok(quantize_with_edges(series, m)?.0)
}

/// Like [`quantize`], also returning the `m + 1` bin edges.
pub fn quantize_with_edges(series: &[f64], m: usize) -> Result<(Vec<usize>, Vec<f64>)> {
    if m < 2 {
        return Err(Error::domain("quantize", "need at least 2 states"));
    }
    if series.is_empty() {
        return Err(Error::domain("quantize", "empty series"));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("quantize", "non-finite value"));
    }
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let edges: Vec<f64> = (0..=m).map(|i| lo + span * i as f64 / m as f64).collect();
    if span == 0.0 {
        return Ok((vec![0; series.len()], edges));
    }
    let states = series
        .iter()
        .map(|&x| (((x - lo) / span * m as f64) as usize).min(m - 1))
        .collect();
    Ok((states, edges))
}

// ── entropies ───────────────────────────────────────────────────────────

fn entropy_of_probs(probs: impl Iterator<Item = f64>) -> f64 {
    probs.filter(|&p| p > 0.0).map(|p| -p * p.log2()).sum()
}

/// Shannon entropy of a distribution, in bits; `0 log 0` counts as zero.
pub fn entropy(d: &DiscreteDistribution) -> f64 {
    entropy_of_probs(d.probs.iter().copied())
}

/// Shannon entropy of a state sequence's empirical distribution, in bits.
pub fn state_entropy(states: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::domain("entropy", "empty state sequence"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in states {
        *counts.entry(s).or_insert(0) += 1;
    }
    let n = states.len() as f64;
    Ok(entropy_of_probs(counts.values().map(|&c| c as f64 / n)))
}

/// Entropy of the empirical joint distribution over aligned tuples, in
/// bits. Never less than any marginal.
pub fn joint_entropy(sequences: &[Vec<usize>]) -> Result<f64> {
    let Some(first) = sequences.first() else {
        return Err(Error::domain("joint_entropy", "no sequences"));
    };
    if first.is_empty() {
        return Err(Error::domain("joint_entropy", "empty sequences"));
    }
    for (k, s) in sequences.iter().enumerate() {
        if s.len() != first.len() {
            return Err(Error::domain(
                "joint_entropy",
                format!(
                    "sequence {k} has length {}, expected {}",
                    s.len(),
                    first.len()
                ),
            ));
        }
    }
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for t in 0..first.len() {
        let tuple: Vec<usize> = sequences.iter().map(|s| s[t]).collect();
        *counts.entry(tuple).or_insert(0) += 1;
    }
    let n = first.len() as f64;
    Ok(entropy_of_probs(counts.values().map(|&c| c as f64 / n)))
}

// ── predictability ──────────────────────────────────────────────────────

/// Binary entropy in bits.
fn h2(p: f64) -> f64 {
    entropy_of_probs([p, 1.0 - p].into_iter())
}

/// Entropy implied by Fano's inequality at predictability `pi` over `m`
/// states: `H(pi) + (1 - pi) log2(m - 1)`. Strictly decreasing in `pi` on
/// `[1/m, 1]`, from `log2 m` down to `0`.
pub fn fano_entropy(pi: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain("fano_entropy", "need at least 2 states"));
    }
    let floor = 1.0 / m as f64;
    if !(floor..=1.0).contains(&pi) {
        return Err(Error::domain(
            "fano_entropy",
            format!("predictability {pi} outside [1/{m}, 1]"),
        ));
    }
    Ok(h2(pi) + (1.0 - pi) * ((m - 1) as f64).log2())
}

/// Maximum achievable probability of correctly predicting the next state
/// of a series with entropy `entropy_bits` over `m` states: the unique
/// root of [`fano_entropy`] on its decreasing branch, found by bisection.
///
/// The inversion is ill-conditioned where the curve flattens, within about
/// `1e-5` of `1/m`; there the recovered root can be off by a few parts in
/// `1e9` even though the residual is at machine precision.
pub fn max_predictability(entropy_bits: f64, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::domain(
            "max_predictability",
            "need at least 2 states",
        ));
    }
    let cap = (m as f64).log2();
    if !entropy_bits.is_finite() || entropy_bits < 0.0 {
        return Err(Error::domain(
            "max_predictability",
            format!("entropy {entropy_bits} is negative or non-finite"),
        ));
    }
    // Empirical entropies of m states can exceed log2(m) by rounding only.
    if entropy_bits > cap * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::domain(
            "max_predictability",
            format!("entropy {entropy_bits} exceeds log2({m}) = {cap}"),
        ));
    }
    let s = entropy_bits.min(cap);
    if s == 0.0 {
        return Ok(1.0);
    }
    if s == cap {
        return Ok(1.0 / m as f64);
    }

    let mut lo = 1.0 / m as f64; // fano_entropy(lo) = cap >= s
    let mut hi = 1.0; // fano_entropy(hi) = 0 <= s
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if fano_entropy(mid, m)? >= s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest possible rate of wrong next-state predictions:
/// `1 - max_predictability`.
pub fn min_error_rate(entropy_bits: f64, m: usize) -> Result<f64> {
    Ok(1.0 - max_predictability(entropy_bits, m)?)
}

// ── error floors ────────────────────────────────────────────────────────

/// `E[(X - Y)^2]` for independent `X, Y ~ d`, by full enumeration of
/// support pairs. Equals twice the variance; kept as an independent oracle
/// for that identity.
pub fn expected_squared_difference(d: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    for (xi, pi) in d.support.iter().zip(&d.probs) {
        for (xj, pj) in d.support.iter().zip(&d.probs) {
            total += pi * pj * (xj - xi) * (xj - xi);
        }
    }
    total
}

/// Expected-squared-error floor of predicting a series with error rate
/// `error_rate` and variance `variance`: a correct prediction costs zero,
/// a miss costs the expected squared difference of two independent draws,
/// `2 variance`.
pub fn error_floor(error_rate: f64, variance: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(Error::domain(
            "error_floor",
            format!("error rate {error_rate} outside [0, 1]"),
        ));
    }
    if !variance.is_finite() || variance < 0.0 {
        return Err(Error::domain(
            "error_floor",
            format!("variance {variance} is negative or non-finite"),
        ));
    }
    Ok(2.0 * error_rate * variance)
}

// ── report ──────────────────────────────────────────────────────────────

/// Entropy, predictability, and floor statistics for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesBound {
    pub entropy_bits: f64,
    pub max_predictability: f64,
    pub min_error_rate: f64,
    pub variance: f64,
    /// `2 * min_error_rate * variance`.
    pub error_floor: f64,
    /// The `m + 1` quantization bin edges this series was discretized with.
    pub bin_edges: Vec<f64>,
}

fn series_bound(series: &[f64], m: usize) -> Result<SeriesBound> {
    let (states, bin_edges) = quantize_with_edges(series, m)?;
    let entropy_bits = state_entropy(&states)?;
    let pi = max_predictability(entropy_bits, m)?;
    let e = 1.0 - pi;
    let variance = population_variance(series)?;
    Ok(SeriesBound {
        entropy_bits,
        max_predictability: pi,
        min_error_rate: e,
        variance,
        error_floor: error_floor(e, variance)?,
        bin_edges,
    })
}

/// Error-floor comparison between predicting factor series separately and
/// predicting their mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    /// Quantization state count used for every series.
    pub states: usize,
    pub factors: Vec<SeriesBound>,
    /// The elementwise sum of the factor series, treated as one series
    /// and quantized with its own equal-width bins.
    pub mixture: SeriesBound,
    /// Sum of the per-factor error floors.
    pub decomposed_floor: f64,
    /// The mixture's own error floor.
    pub mixture_floor: f64,
    pub sum_factor_variances: f64,
    /// `mixture variance - sum of factor variances`; near zero when the
    /// factors are uncorrelated, so a large gap flags dependence.
    pub variance_gap: f64,
}

impl TheoryReport {
    /// Whether the decomposed floor undercuts the mixture floor.
    pub fn decomposition_helps(&self) -> bool {
        self.decomposed_floor < self.mixture_floor
    }

    /// Flat `key=value` lines, full precision, for terminal output.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut num = |key: String, v: f64| out.push((key, format!("{v:.16e}")));
        for (k, f) in self.factors.iter().enumerate() {
            num(format!("factor_{k}.entropy_bits"), f.entropy_bits);
            num(
                format!("factor_{k}.max_predictability"),
                f.max_predictability,
            );
            num(format!("factor_{k}.min_error_rate"), f.min_error_rate);
            num(format!("factor_{k}.variance"), f.variance);
            num(format!("factor_{k}.error_floor"), f.error_floor);
        }
        num("mixture.entropy_bits".into(), self.mixture.entropy_bits);
        num(
            "mixture.max_predictability".into(),
            self.mixture.max_predictability,
        );
        num("mixture.min_error_rate".into(), self.mixture.min_error_rate);
        num("mixture.variance".into(), self.mixture.variance);
        num("mixture.error_floor".into(), self.mixture.error_floor);
        num("decomposed_floor".into(), self.decomposed_floor);
        num("mixture_floor".into(), self.mixture_floor);
        num("sum_factor_variances".into(), self.sum_factor_variances);
        num("variance_gap".into(), self.variance_gap);
        out.push(("states".into(), self.states.to_string()));
        out.push((
            "decomposition_helps".into(),
            self.decomposition_helps().to_string(),
        ));
        out
    }

    /// Two-column CSV (`key,value`) of [`Self::key_values`].
    pub fn to_csv(&self) -> String {
        let mut s = String::from("key,value\n");
        for (k, v) in self.key_values() {
            s.push_str(&k);
            s.push(',');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }
}

/// Builds the full comparison for `factor_series`, quantizing every series
/// (including the elementwise-sum mixture) with its own `m` equal-width
/// bins and taking variances from the raw values.
pub fn bounds_report(factor_series: &[Vec<f64>], m: usize) -> Result<TheoryReport> {
    if factor_series.is_empty() {
        return Err(Error::domain("bounds_report", "no factor series"));
    }
    let len = factor_series[0].len();
    for (k, s) in factor_series.iter().enumerate() {
        if s.len() != len {
            return Err(Error::domain(
                "bounds_report",
                format!("series {k} has length {}, expected {len}", s.len()),
            ));
        }
    }

    let factors: Vec<SeriesBound> = factor_series
        .iter()
        .map(|s| series_bound(s, m))
        .collect::<Result<_>>()?;

    let mixture_series: Vec<f64> = (0..len)
        .map(|t| factor_series.iter().map(|s| s[t]).sum())
        .collect();
    let mixture = series_bound(&mixture_series, m)?;

    let decomposed_floor = factors.iter().map(|f| f.error_floor).sum();
    let mixture_floor = mixture.error_floor;
    let sum_factor_variances: f64 = factors.iter().map(|f| f.variance).sum();
    let variance_gap = mixture.variance - sum_factor_variances;

    Ok(TheoryReport {
        states: m,
        factors,
        mixture,
        decomposed_floor,
        mixture_floor,
        sum_factor_variances,
        variance_gap,
    })
}
