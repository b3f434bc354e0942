//! Estimators, confidence intervals and goodness-of-fit tests.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

use crate::error::{BrwError, Result};
use crate::forward::GenStats;

/// Sample mean with its standard error, and optional quantiles.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateCI {
    pub mean: f64,
    pub std_error: f64,
    pub reps: usize,
    pub q10: Option<f64>,
    pub q50: Option<f64>,
    pub q90: Option<f64>,
}

impl EstimateCI {
    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(BrwError::Domain("an estimate needs at least two samples".into()));
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        Ok(EstimateCI { mean, std_error: (var / n).sqrt(), reps: xs.len(), q10: None, q50: None, q90: None })
    }

    pub fn with_quantiles(xs: &[f64]) -> Result<Self> {
        let mut e = Self::from_samples(xs)?;
        let mut s = xs.to_vec();
        s.sort_by(f64::total_cmp);
        e.q10 = Some(quantile_sorted(&s, 0.1));
        e.q50 = Some(quantile_sorted(&s, 0.5));
        e.q90 = Some(quantile_sorted(&s, 0.9));
        Ok(e)
    }

    /// Normal-approximation interval `mean +- 1.96 SE`.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.std_error, self.mean + 1.96 * self.std_error)
    }

    /// `|mean - target| <= k SE`.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }

    pub fn z_score(&self, target: f64) -> f64 {
        if self.std_error > 0.0 {
            (self.mean - target) / self.std_error
        } else if self.mean == target {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

/// One line of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tag: String,
    pub n: usize,
    pub d: usize,
    pub offspring: String,
    pub statistic: String,
    pub value: f64,
    pub band: String,
    pub pass: bool,
}

impl ReportRow {
    pub fn new(tag: &str, n: usize, d: usize, offspring: &str, statistic: &str, value: f64, band: &str, pass: bool) -> Self {
        ReportRow {
            tag: tag.into(),
            n,
            d,
            offspring: offspring.into(),
            statistic: statistic.into(),
            value,
            band: band.into(),
            pass,
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| BrwError::Config(e.to_string()))?;
    }
    wr.flush().map_err(|e| BrwError::Config(e.to_string()))?;
    Ok(())
}

/// Reads rows written by [`write_report_csv`]; lines starting with `#` are skipped.
pub fn read_report_csv<R: std::io::Read>(r: R) -> Result<Vec<ReportRow>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    rd.deserialize().map(|row| row.map_err(|e| BrwError::Config(e.to_string()))).collect()
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub n: usize,
    /// Asymptotic p-value with the usual small-sample correction.
    pub p_value: f64,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

/// One-sample Kolmogorov-Smirnov distance to the exponential law with mean `mu`.
pub fn ks_against_exponential(samples: &[f64], mu: f64) -> Result<KsResult> {
    if samples.len() < 100 {
        return Err(BrwError::Domain("KS test needs at least 100 samples".into()));
    }
    if mu <= 0.0 {
        return Err(BrwError::Domain("exponential mean must be positive".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let nf = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = if x <= 0.0 { 0.0 } else { -(-x / mu).exp_m1() };
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let sq = nf.sqrt();
    Ok(KsResult { d, n: s.len(), p_value: kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d) })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquare {
    pub stat: f64,
    pub dof: usize,
    pub p: f64,
    /// Bins after merging, as `(first index, last index)`.
    pub bins: Vec<(usize, usize)>,
}

/// Pearson test of observed counts against a pmf. Adjacent cells are merged
/// left to right until each expected count is at least 5; the remainder of
/// the pmf (and any observation beyond it) forms the last bin.
pub fn chi_square(observed: &[u64], pmf: &[f64]) -> Result<ChiSquare> {
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(BrwError::Domain("no observations".into()));
    }
    let t = total as f64;
    let len = observed.len().max(pmf.len());
    let obs = |i: usize| observed.get(i).copied().unwrap_or(0) as f64;
    let prob = |i: usize| pmf.get(i).copied().unwrap_or(0.0);
    let mut bins = Vec::new();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut start, mut o, mut e) = (0usize, 0.0, 0.0);
    for i in 0..len {
        o += obs(i);
        e += prob(i) * t;
        if e >= 5.0 {
            bins.push((start, i));
            cells.push((o, e));
            start = i + 1;
            o = 0.0;
            e = 0.0;
        }
    }
    // unassigned tail: leftover cells plus the pmf mass not listed
    let listed: f64 = pmf.iter().sum();
    e += (1.0 - listed).max(0.0) * t;
    if o > 0.0 || e > 0.0 {
        match cells.last_mut() {
            Some(last) if e < 5.0 => {
                last.0 += o;
                last.1 += e;
                bins.last_mut().expect("paired").1 = len - 1;
            }
            _ => {
                bins.push((start, len - 1));
                cells.push((o, e));
            }
        }
    }
    if cells.len() < 2 {
        return Err(BrwError::Domain("fewer than two bins with expected count >= 5".into()));
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let p = if stat > 0.0 { gamma_ur(dof as f64 / 2.0, stat / 2.0) } else { 1.0 };
    Ok(ChiSquare { stat, dof, p, bins })
}

/// Empirical histogram of nonnegative integers.
pub fn histogram(values: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let mut h = Vec::new();
    for v in values {
        let v = v as usize;
        if v >= h.len() {
            h.resize(v + 1, 0);
        }
        h[v] += 1;
    }
    h
}

/// Tightness summary: q90 of `X_n / f(n)` per `n`.
#[derive(Clone, Debug, Serialize)]
pub struct TightnessTable {
    pub rows: Vec<ReportRow>,
    pub q90: Vec<(usize, f64)>,
    pub ratio: f64,
    pub pass: bool,
}

/// `samples[k]` holds draws of the statistic at `n_grid[k]`. Passes when
/// `max q90 / min q90 <= bound`.
pub fn tightness_table(
    tag: &str,
    statistic: &str,
    d: usize,
    offspring: &str,
    n_grid: &[usize],
    samples: &[Vec<f64>],
    normalizer: impl Fn(usize) -> f64,
    bound: f64,
) -> Result<TightnessTable> {
    if n_grid.len() != samples.len() || n_grid.is_empty() {
        return Err(BrwError::Domain("one sample set per grid point".into()));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BrwError::Domain("n grid must be strictly increasing".into()));
    }
    let mut q90 = Vec::new();
    for (&n, xs) in n_grid.iter().zip(samples) {
        let f = normalizer(n);
        let scaled: Vec<f64> = xs.iter().map(|x| x / f).collect();
        q90.push((n, quantile(&scaled, 0.9)));
    }
    let hi = q90.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = q90.iter().map(|q| q.1).fold(f64::INFINITY, f64::min);
    let ratio = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let pass = ratio <= bound;
    let band = format!("max/min q90 <= {}", bound);
    let rows = q90.iter().map(|&(n, q)| ReportRow::new(tag, n, d, offspring, &format!("q90 {}", statistic), q, &band, pass)).collect();
    Ok(TightnessTable { rows, q90, ratio, pass })
}

/// `kappa_j` estimates at one `n`: means of `M_n(j) / Z_n` over conditioned runs.
#[derive(Clone, Debug, Serialize)]
pub struct KappaRow {
    pub n: usize,
    pub kappa: Vec<EstimateCI>,
    /// Mean of overflow mass over `Z_n`.
    pub overflow_share: f64,
    /// `sum_j j kappa_j + overflow share`.
    pub weighted_sum: f64,
    /// Sample SD of `M_n(1) / Z_n`.
    pub sd_m1: f64,
}

pub fn kappa_estimates(n: usize, runs: &[GenStats], j_max: usize) -> Result<KappaRow> {
    if runs.len() < 2 {
        return Err(BrwError::Domain("need at least two conditioned runs".into()));
    }
    if runs.iter().any(|r| r.z == 0) {
        return Err(BrwError::Precondition("kappa estimates need surviving runs".into()));
    }
    let j_max = j_max.min(crate::forward::J_MAX);
    let mut kappa = Vec::with_capacity(j_max);
    let mut weighted = 0.0;
    for j in 1..=j_max {
        let xs: Vec<f64> = runs.iter().map(|r| r.m[j - 1] as f64 / r.z as f64).collect();
        let e = EstimateCI::from_samples(&xs)?;
        weighted += j as f64 * e.mean;
        kappa.push(e);
    }
    // sites heavier than j_max count through their particles
    let rest: f64 = runs
        .iter()
        .map(|r| {
            let heavy: u64 = r.m.iter().enumerate().skip(j_max).map(|(i, c)| (i as u64 + 1) * c).sum();
            (heavy + r.overflow.mass) as f64 / r.z as f64
        })
        .sum::<f64>()
        / runs.len() as f64;
    let sd_m1 = {
        let xs: Vec<f64> = runs.iter().map(|r| r.m[0] as f64 / r.z as f64).collect();
        let e = EstimateCI::from_samples(&xs)?;
        e.std_error * (xs.len() as f64).sqrt()
    };
    Ok(KappaRow { n, kappa, overflow_share: rest, weighted_sum: weighted + rest, sd_m1 })
}

/// Fraction of `trials` 95% intervals, each from `reps` Bernoulli(`p`) draws,
/// that cover `p`.
pub fn ci_coverage<R: rand::Rng + ?Sized>(p: f64, reps: usize, trials: usize, rng: &mut R) -> f64 {
    let mut hits = 0;
    for _ in 0..trials {
        let xs: Vec<f64> = (0..reps).map(|_| f64::from(u8::from(rng.random::<f64>() < p))).collect();
        let e = EstimateCI::from_samples(&xs).expect("reps >= 2");
        let (lo, hi) = e.ci95();
        if lo <= p && p <= hi {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}
