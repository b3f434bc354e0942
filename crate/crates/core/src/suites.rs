//! Verification suites. Each suite runs one numbered check at fixed sample
//! sizes and returns report rows plus a verdict. Conditioned runs and spine
//! batches are cached by `(d, n)` so suites that share a grid share samples;
//! replicate `r` always uses the same substream, so a shorter request is a
//! prefix of a longer one.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::conditioned::{beta, endpoint_audit, sample_conditioned_batch, Target, UBank};
use crate::error::{BrwError, Result};
use crate::fields::{
    overlap_mean_exact, pmf_oracle_all, search_n0, survival_prob, survival_probs, verify_comparison,
    verify_supersolution, HittingSweep, HittingUpdate, OrthantSecondMomentSweep, SecondMomentSweep, SuperSolutionParams,
};
use crate::forward::{overlap_stat, run_conditioned, run_occupancy, GenStats, J_MAX};
use crate::lattice::{
    orthant_monotonicity_gap, return_probabilities_combinatorial, transition_field, ClampPolicy, Field, Site,
    TransitionSweep,
};
use crate::offspring::OffspringDist;
use crate::rng::{streams, substream, BrwRng};
use crate::spine::{exact_mean_gamma, sizebias_check, SpineBatch, SpineRecord};
use crate::stats::{
    chi_square, histogram, kappa_estimates, ks_against_exponential, tightness_table, EstimateCI, ReportRow,
};

/// Bands and tolerances.
pub mod bands {
    pub const PMF_TOL: f64 = 1e-9;
    pub const KPP_TOL: f64 = 1e-12;
    pub const SECOND_MOMENT_TOL: f64 = 1e-8;
    pub const IDENTITY_TOL: f64 = 1e-8;
    pub const SE_BAND: f64 = 3.0;
    pub const SIZEBIAS_Z: f64 = 4.0;
    pub const KOLMOGOROV_BAND: (f64, f64) = (1.85, 2.0);
    pub const KS_MAX: f64 = 0.05;
    pub const KAPPA_SUM_TOL: f64 = 0.02;
    pub const KAPPA1_DRIFT: f64 = 0.05;
    pub const TIGHTNESS_RATIO: f64 = 1.5;
    pub const GAMMA_SLOPE_TOL: f64 = 0.01;
    pub const CHI_SQUARE_P: f64 = 0.01;
    pub const OCCUPANCY_FACTOR: f64 = 2.0;
    pub const BALL_Q90: (f64, f64) = (0.02, 2.0);
    pub const MONOTONE_SLACK: f64 = 1e-12;
    /// `kappa_0 = 4 e^15`.
    pub const SUPERSOLUTION_KAPPA_LN: f64 = 15.0;
}

/// Sample sizes.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteSizes {
    pub pmf_degree: usize,
    pub fundamental_reps: u64,
    pub survival_reps: u64,
    pub yaglom_reps: u64,
    pub grid_reps: u64,
    pub sizebias_reps: u64,
    pub spine_mean_reps: u64,
    pub ball_reps: u64,
    pub chi_square_reps: u64,
    pub audit_paths: u64,
    pub audit_targets: usize,
    pub overlap_reps: u64,
    pub max_attempts: u64,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        SuiteSizes {
            pmf_degree: 64,
            fundamental_reps: 100_000,
            survival_reps: 1_000_000,
            yaglom_reps: 20_000,
            grid_reps: 2_000,
            sizebias_reps: 1_000_000,
            spine_mean_reps: 10_000,
            ball_reps: 2_000,
            chi_square_reps: 100_000,
            audit_paths: 1_000,
            audit_targets: 50,
            overlap_reps: 100_000,
            max_attempts: 1_000_000,
        }
    }
}

/// Suite names, in criterion order.
pub const SUITES: [&str; 14] = [
    "fundamental",
    "hitting",
    "second-moment",
    "kolmogorov",
    "yaglom",
    "kappa",
    "tightness",
    "sizebias",
    "spine-mean",
    "conditioned",
    "supersolution",
    "occupancy",
    "clustering",
    "monotonicity",
];

/// Suites whose verdict does not affect the exit status.
pub const SOFT_SUITES: [&str; 1] = ["clustering"];

#[derive(Clone, Debug, Serialize)]
pub struct SuiteOutcome {
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    pub soft: bool,
    pub skipped: bool,
    pub summary: String,
    pub seconds: f64,
    #[serde(skip)]
    pub rows: Vec<ReportRow>,
}

/// Runs suites against one master seed.
pub struct Verifier {
    pub seed: u64,
    pub sizes: SuiteSizes,
    conditioned: Mutex<HashMap<(usize, usize), Vec<GenStats>>>,
    spine: Mutex<HashMap<usize, Vec<SpineRecord>>>,
}

fn ok_row(rows: &mut Vec<ReportRow>, tag: &str, n: usize, d: usize, stat: &str, value: f64, band: &str, pass: bool) -> bool {
    rows.push(ReportRow::new(tag, n, d, "binary", stat, value, band, pass));
    pass
}

fn fmt_sig(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        format!("{:.4}", x)
    } else {
        format!("{:.3e}", x)
    }
}

/// Spine ball radius `ceil(ln n)`.
pub fn ball_radius(n: usize) -> f64 {
    (n as f64).ln().ceil()
}

impl Verifier {
    pub fn new(seed: u64) -> Self {
        Self::with_sizes(seed, SuiteSizes::default())
    }

    pub fn with_sizes(seed: u64, sizes: SuiteSizes) -> Self {
        Verifier { seed, sizes, conditioned: Mutex::new(HashMap::new()), spine: Mutex::new(HashMap::new()) }
    }

    fn rng(&self, stream: u64, purpose: u64, r: u64) -> BrwRng {
        substream(self.seed, stream, (purpose << 40) | r)
    }

    /// First `reps` runs conditioned on survival to `n`.
    pub fn conditioned_runs(&self, dim: usize, n: usize, reps: u64) -> Result<Vec<GenStats>> {
        let mut cache = self.conditioned.lock().expect("cache lock");
        let have = cache.get(&(dim, n)).map_or(0, |v| v.len() as u64);
        if have < reps {
            let b = OffspringDist::binary();
            let key = ((dim as u64) << 56) | ((n as u64) << 32);
            let max_attempts = self.sizes.max_attempts;
            let fresh: Vec<GenStats> = (have..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = substream(self.seed, streams::CONDITIONED_FORWARD, key | r);
                    run_conditioned(&b, n, dim, max_attempts, &mut rng).map(|c| c.stats)
                })
                .collect::<Result<_>>()?;
            cache.entry((dim, n)).or_default().extend(fresh);
        }
        Ok(cache[&(dim, n)][..reps as usize].to_vec())
    }

    /// First `reps` spine records at `n` (two dimensions, ball radius `ceil(ln n)`).
    pub fn spine_records(&self, n: usize, reps: u64) -> Result<Vec<SpineRecord>> {
        let mut cache = self.spine.lock().expect("cache lock");
        let have = cache.get(&n).map_or(0, |v| v.len() as u64);
        if have < reps {
            let mut batch = SpineBatch::new(n, 2);
            batch.ell = Some(ball_radius(n));
            // the batch is order-invariant, so rerunning from 0 reproduces the prefix
            let recs = batch.run(self.seed ^ (n as u64).rotate_left(40), reps)?;
            cache.insert(n, recs);
        }
        Ok(cache[&n][..reps as usize].to_vec())
    }

    /// Runs the named suite. Unknown names are a configuration error.
    pub fn run(&self, name: &str) -> Result<SuiteOutcome> {
        let id = SUITES
            .iter()
            .position(|s| *s == name)
            .ok_or_else(|| BrwError::Config(format!("unknown suite '{}'; expected one of {}", name, SUITES.join(", "))))?;
        let t = Instant::now();
        let mut rows = Vec::new();
        let (pass, summary) = match id {
            0 => self.fundamental(&mut rows)?,
            1 => self.hitting(&mut rows)?,
            2 => self.second_moment(&mut rows)?,
            3 => self.kolmogorov(&mut rows)?,
            4 => self.yaglom(&mut rows)?,
            5 => self.kappa(&mut rows)?,
            6 => self.tightness(&mut rows)?,
            7 => self.sizebias(&mut rows)?,
            8 => self.spine_mean(&mut rows)?,
            9 => self.conditioned_rep(&mut rows)?,
            10 => self.supersolution(&mut rows)?,
            11 => self.occupancy(&mut rows)?,
            12 => self.clustering(&mut rows)?,
            _ => self.monotonicity(&mut rows)?,
        };
        Ok(SuiteOutcome {
            id: id + 1,
            name: SUITES[id],
            pass,
            soft: SOFT_SUITES.contains(&SUITES[id]),
            skipped: false,
            summary,
            seconds: t.elapsed().as_secs_f64(),
            rows,
        })
    }

    /// Placeholder outcome for a suite not run because the budget ran out.
    pub fn skipped(name: &str) -> SuiteOutcome {
        let id = SUITES.iter().position(|s| *s == name).unwrap_or(0);
        SuiteOutcome {
            id: id + 1,
            name: SUITES[id],
            pass: false,
            soft: SOFT_SUITES.contains(&SUITES[id]),
            skipped: true,
            summary: "skipped: budget exceeded".into(),
            seconds: 0.0,
            rows: vec![ReportRow::new(SUITES[id], 0, 0, "binary", "skipped", f64::NAN, "budget exceeded", false)],
        }
    }

    fn fundamental(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "fundamental";
        let b = OffspringDist::binary();
        let pmfs = pmf_oracle_all(&b, 12, 2, self.sizes.pmf_degree)?;
        let mut worst: f64 = 0.0;
        for (p, pmf) in TransitionSweep::new(12, 2, ClampPolicy::Exact)?.zip(&pmfs).skip(1) {
            for s in pmf.sites() {
                worst = worst.max((pmf.mean(s) - p.get(s)).abs());
            }
        }
        let mut pass = ok_row(rows, tag, 12, 2, "max |E U_n(x) - P_n(x)|, n<=12", worst, "<= 1e-9", worst <= bands::PMF_TOL);
        let x = Site::new(&[1, 0]);
        let n = 32;
        let xs: Vec<f64> = (0..self.sizes.fundamental_reps)
            .into_par_iter()
            .map(|r| run_occupancy(&b, n, 2, &mut self.rng(streams::FORWARD, 1, r)).map(|o| o.get(x) as f64))
            .collect::<Result<_>>()?;
        let est = EstimateCI::from_samples(&xs)?;
        let exact = transition_field(n, 2, ClampPolicy::Exact)?.get(x);
        let z = est.z_score(exact);
        pass &= ok_row(rows, tag, n, 2, "MC mean U_32(1,0)", est.mean, &format!("P_32 = {:.6} +- 3 SE", exact), z.abs() <= bands::SE_BAND);
        Ok((pass, format!("pmf max err {}, MC z = {:.2}", fmt_sig(worst), z)))
    }

    fn hitting(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "hitting";
        let b = OffspringDist::binary();
        let pmfs = pmf_oracle_all(&b, 12, 2, self.sizes.pmf_degree)?;
        let mut worst: f64 = 0.0;
        for (u, pmf) in HittingSweep::new(&b, 12, 2, ClampPolicy::Exact, HittingUpdate::Pgf)?.zip(&pmfs).skip(1) {
            for s in pmf.sites() {
                worst = worst.max((1.0 - pmf.pmf(s)[0] - u.get(s)).abs());
            }
        }
        let mut pass = ok_row(rows, tag, 12, 2, "max |1 - p_0 - u_n|, n<=12", worst, "<= 1e-9", worst <= bands::PMF_TOL);
        let pgf = HittingSweep::new(&b, 256, 2, ClampPolicy::Exact, HittingUpdate::Pgf)?;
        let kpp = HittingSweep::new(&b, 256, 2, ClampPolicy::Exact, HittingUpdate::Kpp)?;
        let mut gap: f64 = 0.0;
        for (a, k) in pgf.zip(kpp) {
            gap = gap.max(a.values().iter().zip(k.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
        pass &= ok_row(rows, tag, 256, 2, "max |u_pgf - u_kpp|, n<=256", gap, "<= 1e-12", gap <= bands::KPP_TOL);
        Ok((pass, format!("oracle err {}, kpp gap {}", fmt_sig(worst), fmt_sig(gap))))
    }

    fn second_moment(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "second-moment";
        let b = OffspringDist::binary();
        let pmfs = pmf_oracle_all(&b, 12, 2, self.sizes.pmf_degree)?;
        let mut worst: f64 = 0.0;
        for ((_, f), pmf) in SecondMomentSweep::new(&b, 12, 2, ClampPolicy::Exact)?.zip(&pmfs) {
            for s in pmf.sites() {
                worst = worst.max((pmf.second_moment(s) - f.get(s)).abs());
            }
        }
        let mut pass = ok_row(rows, tag, 12, 2, "max |E U_n^2 - f_n|, n<=12", worst, "<= 1e-8", worst <= bands::SECOND_MOMENT_TOL);
        let n_max = 512;
        let clamp = ClampPolicy::TailEps(1e-13);
        let mut errs = Vec::new();
        for dim in [2usize, 3] {
            let ret = return_probabilities_combinatorial(2 * n_max, dim)?;
            let sums: Vec<f64> = if dim == 2 {
                SecondMomentSweep::new(&b, n_max, dim, clamp)?.map(|(_, f)| f.sum()).collect()
            } else {
                OrthantSecondMomentSweep::new(&b, n_max, dim, clamp)?.map(|(_, f)| f.sum()).collect()
            };
            let mut acc = 0.0;
            let mut err: f64 = 0.0;
            for (n, s) in sums.iter().enumerate() {
                if n >= 1 {
                    acc += ret[2 * n];
                }
                err = err.max((s - 1.0 - b.sigma2() * acc).abs());
            }
            pass &= ok_row(rows, tag, n_max, dim, "max |sum EU_n^2 - 1 - s2 sum P_2j(0)|", err, "<= 1e-8", err <= bands::IDENTITY_TOL);
            errs.push(err);
        }
        Ok((pass, format!("pmf err {}, identity err d2 {} d3 {}", fmt_sig(worst), fmt_sig(errs[0]), fmt_sig(errs[1]))))
    }

    fn kolmogorov(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "kolmogorov";
        let b = OffspringDist::binary();
        let n = 256;
        let alive: Vec<f64> = (0..self.sizes.survival_reps)
            .into_par_iter()
            .map(|r| run_occupancy(&b, n, 2, &mut self.rng(streams::FORWARD, 4, r)).map(|o| f64::from(u8::from(!o.is_empty()))))
            .collect::<Result<_>>()?;
        let est = EstimateCI::from_samples(&alive)?;
        let exact = survival_prob(&b, n);
        let z = est.z_score(exact);
        let mut pass = ok_row(rows, tag, n, 2, "n pi_n (MC)", n as f64 * est.mean, &format!("n s_n = {:.5} +- 3 SE", n as f64 * exact), z.abs() <= bands::SE_BAND);
        let big = 10_000;
        let ns = big as f64 * survival_probs(&b, big)[big];
        let (lo, hi) = bands::KOLMOGOROV_BAND;
        pass &= ok_row(rows, tag, big, 0, "n s_n (exact)", ns, "[1.85, 2.0]", (lo..=hi).contains(&ns));
        Ok((pass, format!("z = {:.2}, 1e4 s_1e4 = {:.5}", z, ns)))
    }

    fn yaglom(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let n = 512;
        let runs = self.conditioned_runs(2, n, self.sizes.yaglom_reps)?;
        let xs: Vec<f64> = runs.iter().map(|r| r.z as f64 / n as f64).collect();
        let s2 = OffspringDist::binary().sigma2();
        let ks = ks_against_exponential(&xs, 2.0 / s2)?;
        let pass = ok_row(rows, "yaglom", n, 2, "KS distance Z_n/n vs Exp(mean 2/s2)", ks.d, "< 0.05", ks.d < bands::KS_MAX);
        // mean implied by n pi_n -> 2/s2; informational, does not enter the verdict
        let alt = ks_against_exponential(&xs, s2 / 2.0)?;
        ok_row(rows, "yaglom", n, 2, "KS distance Z_n/n vs Exp(mean s2/2)", alt.d, "< 0.05 (informational)", alt.d < bands::KS_MAX);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        Ok((pass, format!("D = {:.4} vs mean {}, D = {:.4} vs mean {}, sample mean {:.4} ({} samples)", ks.d, 2.0 / s2, alt.d, s2 / 2.0, mean, xs.len())))
    }

    fn kappa(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "kappa";
        let grid = [128usize, 256, 512];
        let mut table = Vec::new();
        for &n in &grid {
            let runs = self.conditioned_runs(3, n, self.sizes.grid_reps)?;
            table.push(kappa_estimates(n, &runs, J_MAX)?);
        }
        let mut pass = true;
        for k in &table {
            pass &= ok_row(rows, tag, k.n, 3, "sum_j j kappa_j + overflow", k.weighted_sum, "1 +- 0.02", (k.weighted_sum - 1.0).abs() <= bands::KAPPA_SUM_TOL);
            pass &= ok_row(rows, tag, k.n, 3, "min kappa_j", k.kappa.iter().map(|e| e.mean).fold(f64::INFINITY, f64::min), ">= 0", k.kappa.iter().all(|e| e.mean >= 0.0));
            rows.push(ReportRow::new(tag, k.n, 3, "binary", "kappa_1", k.kappa[0].mean, "reported", true));
            rows.push(ReportRow::new(tag, k.n, 3, "binary", "kappa_2", k.kappa[1].mean, "reported", true));
        }
        let (k256, k512) = (table[1].kappa[0].mean, table[2].kappa[0].mean);
        let drift = (k512 - k256).abs() / k256;
        pass &= ok_row(rows, tag, 512, 3, "|kappa_1(512) - kappa_1(256)| / kappa_1(256)", drift, "<= 0.05", drift <= bands::KAPPA1_DRIFT);
        let sds: Vec<f64> = table.iter().map(|k| k.sd_m1).collect();
        let decreasing = sds.windows(2).all(|w| w[1] < w[0]);
        for k in &table {
            pass &= ok_row(rows, tag, k.n, 3, "SD of M_n(1)/Z_n", k.sd_m1, "decreasing in n", decreasing);
        }
        Ok((pass, format!("kappa_1 = {:.4}/{:.4}/{:.4}, drift {:.4}, SD {:.4}/{:.4}/{:.4}", table[0].kappa[0].mean, k256, k512, drift, sds[0], sds[1], sds[2])))
    }

    fn tightness(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let grid = [128usize, 256, 512, 1024];
        let mut pass = true;
        let mut parts = Vec::new();
        for dim in [3usize, 2] {
            let mut samples = Vec::new();
            for &n in &grid {
                samples.push(self.conditioned_runs(dim, n, self.sizes.grid_reps)?.iter().map(|r| r.v as f64).collect::<Vec<_>>());
            }
            let (norm, label): (fn(usize) -> f64, &str) = if dim == 3 {
                (|n| (n as f64).ln(), "V_n/ln n")
            } else {
                (|n| (n as f64).ln().powi(2), "V_n/ln^2 n")
            };
            let t = tightness_table("tightness", label, dim, "binary", &grid, &samples, norm, bands::TIGHTNESS_RATIO)?;
            pass &= t.pass;
            rows.extend(t.rows);
            parts.push(format!("d={} ratio {:.3}", dim, t.ratio));
        }
        Ok((pass, parts.join(", ")))
    }

    fn sizebias(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "sizebias";
        let reps = self.sizes.sizebias_reps;
        let seed = self.seed ^ 0x5B;
        type Stat = fn(&GenStats) -> f64;
        let checks: [(&str, usize, Stat); 3] = [
            ("1{Z_2=2}", 2, |s| f64::from(u8::from(s.z == 2))),
            ("1{Z_2=4}", 2, |s| f64::from(u8::from(s.z == 4))),
            ("Z_3", 3, |s| s.z as f64),
        ];
        let mut pass = true;
        let mut zs = Vec::new();
        for (i, (name, n, f)) in checks.iter().enumerate() {
            let c = sizebias_check(f, *n, 2, reps, seed.wrapping_add(i as u64))?;
            pass &= ok_row(rows, tag, *n, 2, &format!("z-score E_H {} vs E[Z {}]", name, name), c.z_score, "|z| < 4", c.z_score.abs() < bands::SIZEBIAS_Z);
            if i < 2 {
                let z = (c.lhs - 0.5) / c.lhs_se;
                pass &= ok_row(rows, tag, *n, 2, &format!("P_H({})", &name[2..name.len() - 1]), c.lhs, "1/2 +- 3 SE", z.abs() <= bands::SE_BAND);
            }
            zs.push(c.z_score);
        }
        Ok((pass, format!("z = {:.2}/{:.2}/{:.2}", zs[0], zs[1], zs[2])))
    }

    fn spine_mean(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "spine-mean";
        let n = 512;
        let recs = self.spine_records(n, self.sizes.spine_mean_reps)?;
        let xs: Vec<f64> = recs.iter().map(|r| r.t_star as f64).collect();
        let est = EstimateCI::from_samples(&xs)?;
        let target = 1.2 + exact_mean_gamma(n, 2)?;
        let z = est.z_score(target);
        let mut pass = ok_row(rows, tag, n, 2, "mean T**_n", est.mean, &format!("1.2 + E Gamma_n = {:.5} +- 3 SE", target), z.abs() <= bands::SE_BAND);
        let slope = (exact_mean_gamma(1024, 2)? - exact_mean_gamma(512, 2)?) / 2f64.ln();
        let expect = 5.0 / (8.0 * std::f64::consts::PI);
        pass &= ok_row(rows, tag, 1024, 2, "(E Gamma_1024 - E Gamma_512) / ln 2", slope, "5/(8 pi) +- 0.01", (slope - expect).abs() < bands::GAMMA_SLOPE_TOL);
        Ok((pass, format!("z = {:.2}, slope {:.5} vs {:.5}", z, slope, expect)))
    }

    fn conditioned_rep(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "conditioned";
        let b = OffspringDist::binary();
        // n = 1: the sampler's law is 1 + Bernoulli(beta_0(0) P(xi = x)); the oracle's is 1 + Bernoulli(1/9)
        let bank1 = UBank::new(1, 2)?;
        let x1 = Site::new(&[1, 0]);
        let oracle1 = crate::fields::pmf_oracle(&b, 1, 2, 4)?.conditional_pmf(x1);
        let sampler_p2 = beta(0, Site::ORIGIN, Target { n: 1, x: x1 }, &bank1) / 5.0;
        let exact_err = (oracle1[2] - 1.0 / 9.0).abs().max((sampler_p2 - 1.0 / 9.0).abs()).max((oracle1[1] - 8.0 / 9.0).abs());
        let mut pass = ok_row(rows, tag, 1, 2, "n=1 law vs 1 + Bernoulli(1/9)", exact_err, "<= 1e-15", exact_err <= 1e-15);
        let recs = sample_conditioned_batch(Target { n: 1, x: x1 }, &bank1, self.seed, 10_000)?;
        let support_ok = recs.iter().all(|r| r.value == 1 || r.value == 2);
        pass &= ok_row(rows, tag, 1, 2, "n=1 samples in {1, 2}", f64::from(u8::from(support_ok)), "1", support_ok);
        let mut ps = Vec::new();
        for (n, x) in [(2usize, Site::new(&[1, 0])), (3, Site::new(&[1, 1]))] {
            let bank = UBank::new(n, 2)?;
            let recs = sample_conditioned_batch(Target { n, x }, &bank, self.seed.wrapping_add(n as u64), self.sizes.chi_square_reps)?;
            let pmf = crate::fields::pmf_oracle(&b, n, 2, 32)?.conditional_pmf(x);
            let obs = histogram(recs.iter().map(|r| r.value));
            let cs = chi_square(&obs, &pmf)?;
            pass &= ok_row(rows, tag, n, 2, &format!("chi-square p at x={:?}", &x.0[..2]), cs.p, "> 0.01", cs.p > bands::CHI_SQUARE_P);
            ps.push(cs.p);
        }
        let mut violations = 0;
        let mut max_err: f64 = 0.0;
        for n in [1usize, 2, 3, 4, 8, 16, 32] {
            let targets = audit_targets(n, self.sizes.audit_targets)?;
            let a = endpoint_audit(n, &targets, self.sizes.audit_paths, 2, self.seed.wrapping_add(100 + n as u64))?;
            violations += a.violations;
            max_err = max_err.max(a.max_row_error);
            ok_row(rows, tag, n, 2, "endpoint violations", a.violations as f64, "0", a.violations == 0);
        }
        pass &= violations == 0;
        Ok((pass, format!("n=1 err {}, chi-square p {:.3}/{:.3}, audit violations {} (row err {})", fmt_sig(exact_err), ps[0], ps[1], violations, fmt_sig(max_err))))
    }

    fn supersolution(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "supersolution";
        let params = SuperSolutionParams::new(4.0 * bands::SUPERSOLUTION_KAPPA_LN.exp());
        let Some(n0) = search_n0(&params, 64) else {
            ok_row(rows, tag, 0, 2, "N0 search", f64::NAN, "found <= 64", false);
            return Ok((false, "no N0 <= 64".into()));
        };
        let rep = verify_supersolution(&params, n0..=4 * n0);
        let mut pass = ok_row(rows, tag, n0, 2, "min relative margin on [N0, 4N0]", rep.min_margin, ">= 0", rep.holds);
        let n1 = n1_for(params.kappa).max(n0);
        let n_max = 512;
        let b = OffspringDist::binary();
        let u_seq = HittingSweep::new(&b, n_max, 2, ClampPolicy::Exact, HittingUpdate::Pgf)?;
        let v_seq = (0..=n_max).map(|n| {
            let mut f = Field::from_fn(2, n, |s| params.value(n1 + n, s)).expect("two dimensions");
            f.n = n;
            f
        });
        let cmp = verify_comparison(u_seq, v_seq);
        pass &= ok_row(rows, tag, n_max, 2, &format!("u_n <= v_(N1+n), N1 = {}", n1), f64::from(u8::from(cmp)), "1", cmp);
        Ok((pass, format!("N0 = {}, min margin {:.4}, N1 = {}, comparison {}", n0, rep.min_margin, n1, cmp)))
    }

    fn occupancy(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "occupancy";
        let grid = [128usize, 256, 512];
        let b = OffspringDist::binary();
        let sweep: Vec<f64> = HittingSweep::new(&b, 512, 2, ClampPolicy::Exact, HittingUpdate::Pgf)?.map(|u| u.sum()).collect();
        let scaled: Vec<f64> = grid.iter().map(|&n| sweep[n] * (n as f64).ln()).collect();
        let ratio_u = max_over_min(&scaled);
        let mut pass = true;
        for (&n, &v) in grid.iter().zip(&scaled) {
            pass &= ok_row(rows, tag, n, 2, "sum_x u_n(x) ln n", v, "max/min <= 2", ratio_u <= bands::OCCUPANCY_FACTOR);
        }
        let mut q = Vec::new();
        for &n in &grid {
            let runs = self.conditioned_runs(2, n, self.sizes.grid_reps)?;
            let xs: Vec<f64> = runs.iter().map(|r| r.omega as f64 * (n as f64).ln() / n as f64).collect();
            q.push(crate::stats::quantile(&xs, 0.9));
        }
        let ratio_o = max_over_min(&q);
        for (&n, &v) in grid.iter().zip(&q) {
            pass &= ok_row(rows, tag, n, 2, "q90 Omega_n ln n / n", v, "max/min <= 2", ratio_o <= bands::OCCUPANCY_FACTOR);
        }
        Ok((pass, format!("sum u ln n ratio {:.3}, Omega q90 ratio {:.3}", ratio_u, ratio_o)))
    }

    fn clustering(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "clustering";
        let grid = [128usize, 256, 512, 1024];
        let mut fractions = Vec::new();
        let mut pass = true;
        let mut qs = Vec::new();
        for &n in &grid {
            let recs = self.spine_records(n, self.sizes.ball_reps)?;
            let ell = ball_radius(n);
            let frac: Vec<f64> = recs.iter().map(|r| r.unoccupied.unwrap_or(0) as f64 / r.ball_sites.unwrap_or(1) as f64).collect();
            let e = EstimateCI::from_samples(&frac)?;
            fractions.push(e.mean);
            rows.push(ReportRow::new(tag, n, 2, "binary", "mean unoccupied fraction in B(S_n; ceil ln n)", e.mean, "decreasing 128 -> 1024", true));
            let norm = std::f64::consts::PI * ell * ell * (n as f64).ln();
            let ws: Vec<f64> = recs.iter().map(|r| r.w.unwrap_or(0) as f64 / norm).collect();
            let q90 = crate::stats::quantile(&ws, 0.9);
            let (lo, hi) = bands::BALL_Q90;
            pass &= ok_row(rows, tag, n, 2, "q90 W_n/(pi l^2 ln n)", q90, "[0.02, 2.0]", (lo..=hi).contains(&q90));
            qs.push(q90);
        }
        let dec = fractions.last() < fractions.first();
        pass &= ok_row(rows, tag, 1024, 2, "unoccupied fraction(1024) - fraction(128)", fractions[3] - fractions[0], "< 0", dec);
        Ok((pass, format!("unoccupied {:.4} -> {:.4}, q90 W {:.3}..{:.3}", fractions[0], fractions[3], qs.iter().cloned().fold(f64::INFINITY, f64::min), qs.iter().cloned().fold(0.0, f64::max))))
    }

    fn monotonicity(&self, rows: &mut Vec<ReportRow>) -> Result<(bool, String)> {
        let tag = "monotonicity";
        let b = OffspringDist::binary();
        let mut pass = true;
        let mut worst = f64::NEG_INFINITY;
        for dim in [2usize, 3] {
            let gp = TransitionSweep::new(64, dim, ClampPolicy::Exact)?.map(|p| orthant_monotonicity_gap(&p)).fold(f64::NEG_INFINITY, f64::max);
            let gu = HittingSweep::new(&b, 64, dim, ClampPolicy::Exact, HittingUpdate::Pgf)?
                .map(|u| orthant_monotonicity_gap(&u))
                .fold(f64::NEG_INFINITY, f64::max);
            pass &= ok_row(rows, tag, 64, dim, "max P_n(y) - P_n(x), x <= y", gp, "<= 1e-12", gp <= bands::MONOTONE_SLACK);
            pass &= ok_row(rows, tag, 64, dim, "max u_n(y) - u_n(x), x <= y", gu, "<= 1e-12", gu <= bands::MONOTONE_SLACK);
            worst = worst.max(gp).max(gu);
        }
        let n = 16;
        let (xu, xv) = (Site::ORIGIN, Site::new(&[2, 0]));
        let ds: Vec<f64> = (0..self.sizes.overlap_reps)
            .into_par_iter()
            .map(|r| overlap_stat(&b, n, 2, xu, xv, &mut self.rng(streams::OVERLAP, 14, r)).map(|d| d as f64))
            .collect::<Result<_>>()?;
        let est = EstimateCI::from_samples(&ds)?;
        let bound = 2.0 * transition_field(2 * n, 2, ClampPolicy::Exact)?.get(xv - xu);
        pass &= ok_row(rows, tag, n, 2, "MC mean D_n", est.mean, &format!("<= 2 P_2n = {:.5} + 3 SE", bound), est.mean <= bound + bands::SE_BAND * est.std_error);
        let exact = overlap_mean_exact(&b, n, 2, xu, xv)?;
        let z = est.z_score(exact);
        pass &= ok_row(rows, tag, n, 2, "MC mean D_n vs exact", est.mean, &format!("{:.5} +- 3 SE", exact), z.abs() <= bands::SE_BAND);
        Ok((pass, format!("max gap {}, E D_n {:.5} (exact {:.5}) <= {:.5}", fmt_sig(worst), est.mean, exact, bound)))
    }
}

fn max_over_min(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// Largest `N1` with `N1 ln N1 <= kappa`, so that `v_{N1}(0) >= 1`.
pub fn n1_for(kappa: f64) -> usize {
    let mut lo = 2usize;
    let mut hi = 2usize;
    while (hi as f64) * (hi as f64).ln() <= kappa {
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if (mid as f64) * (mid as f64).ln() <= kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Up to `k` reachable targets at step `n`, spread over the box.
fn audit_targets(n: usize, k: usize) -> Result<Vec<Site>> {
    let u = HittingSweep::new(&OffspringDist::binary(), n, 2, ClampPolicy::Exact, HittingUpdate::Pgf)?.last().expect("n + 1 fields");
    let sites: Vec<Site> = u.iter().filter(|(_, v)| *v > 0.0).map(|(s, _)| s).collect();
    let stride = sites.len().div_ceil(k).max(1);
    Ok(sites.into_iter().step_by(stride).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn n1_is_the_last_admissible_value() {
        let kappa = 4.0 * 15f64.exp();
        let n1 = n1_for(kappa);
        let f = |n: usize| n as f64 * (n as f64).ln();
        assert!(f(n1) <= kappa && f(n1 + 1) > kappa);
        let v = SuperSolutionParams::new(kappa).value(n1, Site::ORIGIN);
        assert!(v >= 1.0);
    }

    #[test]
    fn unknown_suite_is_a_config_error() {
        assert!(matches!(Verifier::new(1).run("nope"), Err(BrwError::Config(_))));
    }

    #[test]
    fn cache_prefixes_agree() {
        let v = Verifier::new(5);
        let a = v.conditioned_runs(2, 8, 5).unwrap();
        let b = v.conditioned_runs(2, 8, 12).unwrap();
        assert_eq!(a[..], b[..5]);
        let w = Verifier::new(5);
        assert_eq!(w.conditioned_runs(2, 8, 12).unwrap(), b);
    }
}
