//! Deterministic recursions: survival probabilities, hitting probabilities,
//! exponential-moment fields and their linear dominating fields, exact
//! second moments, a per-site pmf oracle, and the super-solution checks.

use std::ops::RangeInclusive;

use serde::Serialize;

use crate::error::{BrwError, Result};
use crate::lattice::{apply_markov, check_dim, return_probabilities, ClampPolicy, Field, OrthantField, Site};
use crate::offspring::OffspringDist;

/// `s_0, ..., s_n` with `s_{m+1} = 1 - Phi(1 - s_m)`.
pub fn survival_probs(dist: &OffspringDist, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut s = 1.0;
    out.push(s);
    for _ in 0..n {
        s = dist.pgf_complement(s);
        out.push(s);
    }
    out
}

/// `P(Z_n > 0)`.
pub fn survival_prob(dist: &OffspringDist, n: usize) -> f64 {
    *survival_probs(dist, n).last().expect("non-empty")
}

/// Which update produces `u_{m+1}` from `p = P u_m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HittingUpdate {
    /// `1 - Phi(1 - p)`: extinction probabilities through the generating function.
    Pgf,
    /// `p - p^2 / 2`: the binary reaction-diffusion form.
    Kpp,
}

/// Streams `u_0, u_1, ..., u_n` on a box clamped for horizon `n`.
pub struct HittingSweep<'a> {
    dist: &'a OffspringDist,
    update: HittingUpdate,
    next: Option<Field>,
    n_max: usize,
    radius: usize,
}

impl<'a> HittingSweep<'a> {
    pub fn new(dist: &'a OffspringDist, n_max: usize, dim: usize, clamp: ClampPolicy, update: HittingUpdate) -> Result<Self> {
        if update == HittingUpdate::Kpp && !dist.is_binary() {
            return Err(BrwError::Precondition("the p - p^2/2 update holds for binary offspring only".into()));
        }
        Ok(HittingSweep { dist, update, next: Some(Field::delta(dim)?), n_max, radius: clamp.radius(n_max, dim) })
    }
}

impl Iterator for HittingSweep<'_> {
    type Item = Field;
    fn next(&mut self) -> Option<Field> {
        let cur = self.next.take()?;
        if cur.n < self.n_max {
            let mut pu = apply_markov(&cur, Some(self.radius));
            match self.update {
                HittingUpdate::Pgf => pu.values_mut().iter_mut().for_each(|v| *v = self.dist.pgf_complement(*v)),
                HittingUpdate::Kpp => pu.values_mut().iter_mut().for_each(|v| *v -= 0.5 * *v * *v),
            }
            self.next = Some(pu);
        }
        Some(cur)
    }
}

/// Hitting probabilities `u_n(x) = P(U_n(x) >= 1)`.
pub fn hitting_field(dist: &OffspringDist, n: usize, dim: usize, clamp: ClampPolicy) -> Result<Field> {
    Ok(HittingSweep::new(dist, n, dim, clamp, HittingUpdate::Pgf)?.last().expect("non-empty"))
}

/// Binary-only `u_n` through `u_{m+1} = Pu_m - (Pu_m)^2 / 2`.
pub fn hitting_field_kpp(n: usize, dim: usize, clamp: ClampPolicy) -> Result<Field> {
    let b = OffspringDist::binary();
    Ok(HittingSweep::new(&b, n, dim, clamp, HittingUpdate::Kpp)?.last().expect("non-empty"))
}

/// Expected number of occupied sites `sum_x u_n(x)`, with the dropped mass.
pub fn mean_occupied(dist: &OffspringDist, n: usize, dim: usize, clamp: ClampPolicy) -> Result<(f64, f64)> {
    let u = hitting_field(dist, n, dim, clamp)?;
    Ok((u.sum(), u.tail_bound))
}

fn check_theta(dist: &OffspringDist, theta: f64) -> Result<()> {
    if !theta.is_finite() || theta < 0.0 || theta.exp() > dist.z_max() || (dist.z_max() == 1.0 && theta > 0.0) {
        return Err(BrwError::Domain(format!("theta {} outside the exponential domain of {}", theta, dist)));
    }
    Ok(())
}

/// Streams `G_0, ..., G_n` with `G_m(x) = E exp(theta U_m(x)) - 1`.
pub struct MgfSweep<'a> {
    dist: &'a OffspringDist,
    next: Option<Field>,
    n_max: usize,
    radius: usize,
    failed: bool,
}

impl<'a> MgfSweep<'a> {
    pub fn new(dist: &'a OffspringDist, n_max: usize, theta: f64, dim: usize, clamp: ClampPolicy) -> Result<Self> {
        check_theta(dist, theta)?;
        let mut g0 = Field::delta(dim)?;
        g0.values_mut()[0] = theta.exp_m1();
        Ok(MgfSweep { dist, next: Some(g0), n_max, radius: clamp.radius(n_max, dim), failed: false })
    }
}

impl Iterator for MgfSweep<'_> {
    type Item = Result<Field>;
    fn next(&mut self) -> Option<Result<Field>> {
        if self.failed {
            return None;
        }
        let cur = self.next.take()?;
        if cur.n < self.n_max {
            let step = cur.n + 1;
            let mut pg = apply_markov(&cur, Some(self.radius));
            for v in pg.values_mut() {
                match self.dist.pgf_shifted(*v) {
                    Ok(g) if g.is_finite() => *v = g,
                    _ => {
                        self.failed = true;
                        return Some(Err(BrwError::MgfBlowup { step }));
                    }
                }
            }
            self.next = Some(pg);
        }
        Some(Ok(cur))
    }
}

/// `G_n(x; theta)` via `G_{m+1} + 1 = Phi(P G_m + 1)`.
pub fn mgf_field(dist: &OffspringDist, n: usize, theta: f64, dim: usize, clamp: ClampPolicy) -> Result<Field> {
    let mut last = None;
    for g in MgfSweep::new(dist, n, theta, dim, clamp)? {
        last = Some(g?);
    }
    Ok(last.expect("non-empty"))
}

fn h_one(dist: &OffspringDist, theta: f64, dim: usize) -> Result<Field> {
    MgfSweep::new(dist, 1, theta, dim, ClampPolicy::Exact)?.nth(1).expect("two items")
}

/// Linear dominating fields: `H_1 = G_1`, `H_{m+1} = (P H_m) Phi'(1 + H_m(0))`.
pub fn dominating_field(dist: &OffspringDist, n: usize, theta: f64, dim: usize) -> Result<Field> {
    if n == 0 {
        return Err(BrwError::Domain("dominating fields start at n = 1".into()));
    }
    let mut h = h_one(dist, theta, dim)?;
    for m in 1..n {
        let z = 1.0 + h.get(Site::ORIGIN);
        let factor = dist.pgf_prime(z).map_err(|_| BrwError::MgfBlowup { step: m + 1 })?;
        let mut next = apply_markov(&h, None);
        next.values_mut().iter_mut().for_each(|v| *v *= factor);
        if !next.values().iter().all(|v| v.is_finite()) {
            return Err(BrwError::MgfBlowup { step: m + 1 });
        }
        h = next;
    }
    Ok(h)
}

/// Product form `H_n = (2d+1) H_1(0) P_n prod_{j<n} Phi'(1 + H_j(0))`, with
/// `H_j(0)` advanced through return probabilities only.
pub fn dominating_closed_form(dist: &OffspringDist, n: usize, theta: f64, dim: usize) -> Result<Field> {
    if n == 0 {
        return Err(BrwError::Domain("dominating fields start at n = 1".into()));
    }
    let h1 = h_one(dist, theta, dim)?.get(Site::ORIGIN);
    let q = (2 * dim + 1) as f64;
    let ret = return_probabilities(n, dim, ClampPolicy::Exact)?;
    let mut prod = 1.0;
    for j in 1..n {
        let hj0 = ret[j] * h1 * q * prod;
        prod *= dist.pgf_prime(1.0 + hj0).map_err(|_| BrwError::MgfBlowup { step: j + 1 })?;
        if !prod.is_finite() {
            return Err(BrwError::MgfBlowup { step: j + 1 });
        }
    }
    let mut p = crate::lattice::transition_field(n, dim, ClampPolicy::Exact)?;
    let scale = h1 * q * prod;
    p.values_mut().iter_mut().for_each(|v| *v *= scale);
    Ok(p)
}

/// Streams `(P_m, E U_m(x)^2)` for `m = 0..=n` using
/// `f_m = P f_{m-1} + sigma^2 P_m^2`.
pub struct SecondMomentSweep {
    sigma2: f64,
    next: Option<(Field, Field)>,
    n_max: usize,
    radius: usize,
}

impl SecondMomentSweep {
    pub fn new(dist: &OffspringDist, n_max: usize, dim: usize, clamp: ClampPolicy) -> Result<Self> {
        let d = Field::delta(dim)?;
        Ok(SecondMomentSweep { sigma2: dist.sigma2(), next: Some((d.clone(), d)), n_max, radius: clamp.radius(n_max, dim) })
    }
}

impl Iterator for SecondMomentSweep {
    type Item = (Field, Field);
    fn next(&mut self) -> Option<(Field, Field)> {
        let (p, f) = self.next.take()?;
        if p.n < self.n_max {
            let pn = apply_markov(&p, Some(self.radius));
            let mut fn_ = apply_markov(&f, Some(self.radius));
            for (o, &pv) in fn_.values_mut().iter_mut().zip(pn.values()) {
                *o += self.sigma2 * pv * pv;
            }
            fn_.tail_bound = fn_.tail_bound.max(pn.tail_bound);
            self.next = Some((pn, fn_));
        }
        Some((p, f))
    }
}

/// [`SecondMomentSweep`] on reflection-reduced storage.
pub struct OrthantSecondMomentSweep {
    sigma2: f64,
    next: Option<(OrthantField, OrthantField)>,
    n_max: usize,
    radius: usize,
}

impl OrthantSecondMomentSweep {
    pub fn new(dist: &OffspringDist, n_max: usize, dim: usize, clamp: ClampPolicy) -> Result<Self> {
        let d = OrthantField::delta(dim)?;
        Ok(OrthantSecondMomentSweep { sigma2: dist.sigma2(), next: Some((d.clone(), d)), n_max, radius: clamp.radius(n_max, dim) })
    }
}

impl Iterator for OrthantSecondMomentSweep {
    type Item = (OrthantField, OrthantField);
    fn next(&mut self) -> Option<Self::Item> {
        let (p, f) = self.next.take()?;
        if p.n < self.n_max {
            let pn = p.apply_markov(Some(self.radius));
            let mut fn_ = f.apply_markov(Some(self.radius));
            for (o, &pv) in fn_.values_mut().iter_mut().zip(pn.values()) {
                *o += self.sigma2 * pv * pv;
            }
            fn_.tail_bound = fn_.tail_bound.max(pn.tail_bound);
            self.next = Some((pn, fn_));
        }
        Some((p, f))
    }
}

/// `E U_n(x)^2`.
pub fn second_moment_field(dist: &OffspringDist, n: usize, dim: usize, clamp: ClampPolicy) -> Result<Field> {
    Ok(SecondMomentSweep::new(dist, n, dim, clamp)?.last().expect("non-empty").1)
}

/// Exact law of `U_n(x)` at every site, truncated at degree `D`.
#[derive(Clone, Debug)]
pub struct PmfField {
    dim: usize,
    radius: usize,
    degree: usize,
    n: usize,
    coeffs: Vec<f64>,
    truncated_mass: f64,
}

impl PmfField {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest mass beyond degree `D` over all sites.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    fn index(&self, s: Site) -> Option<usize> {
        if s.max_abs() as usize > self.radius || s.0[self.dim..].iter().any(|&c| c != 0) {
            return None;
        }
        let side = 2 * self.radius + 1;
        let mut idx = 0;
        for j in 0..self.dim {
            idx = idx * side + (s.0[j] + self.radius as i32) as usize;
        }
        Some(idx)
    }

    /// `P(U_n(x) = k)` for `k = 0..=D`.
    pub fn pmf(&self, s: Site) -> Vec<f64> {
        match self.index(s) {
            Some(i) => self.coeffs[i * (self.degree + 1)..(i + 1) * (self.degree + 1)].to_vec(),
            None => {
                let mut v = vec![0.0; self.degree + 1];
                v[0] = 1.0;
                v
            }
        }
    }

    pub fn mean(&self, s: Site) -> f64 {
        self.pmf(s).iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn second_moment(&self, s: Site) -> f64 {
        self.pmf(s).iter().enumerate().map(|(k, p)| (k * k) as f64 * p).sum()
    }

    /// Law of `U_n(x)` given `U_n(x) >= 1`, indexed from `k = 0` (entry 0 is zero).
    pub fn conditional_pmf(&self, s: Site) -> Vec<f64> {
        let mut p = self.pmf(s);
        let hit = 1.0 - p[0];
        p[0] = 0.0;
        if hit > 0.0 {
            p.iter_mut().for_each(|v| *v /= hit);
        }
        p
    }

    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        let f = Field::zeros(self.dim, self.radius).expect("valid dim");
        (0..f.len()).map(move |i| f.site_of(i))
    }
}

fn poly_mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let d = out.len();
    let la = a.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1);
    let lb = b.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1);
    for i in 0..la.min(d) {
        let ai = a[i];
        if ai == 0.0 {
            continue;
        }
        let top = lb.min(d - i);
        for j in 0..top {
            out[i + j] += ai * b[j];
        }
    }
}

/// Exact `E D_n = sum_x [P_n(x - x_u) u_n(x - x_v) + P_n(x - x_v) u_n(x - x_u)]`,
/// since the two processes are independent and `E[U 1{U > 0}] = E U`.
pub fn overlap_mean_exact(dist: &OffspringDist, n: usize, dim: usize, x_u: Site, x_v: Site) -> Result<f64> {
    let p = crate::lattice::transition_field(n, dim, ClampPolicy::Exact)?;
    let u = hitting_field(dist, n, dim, ClampPolicy::Exact)?;
    let r = (n as i32) + (x_u - x_v).max_abs() as i32;
    let mut total = 0.0;
    for s in Field::zeros(dim, r as usize)?.iter().map(|(s, _)| s) {
        let x = s + x_u;
        total += p.get(x - x_u) * u.get(x - x_v) + p.get(x - x_v) * u.get(x - x_u);
    }
    Ok(total)
}

/// Per-site generating polynomials `F_{m+1}(x) = Phi(avg_{e in N} F_m(x - e))`,
/// truncated at degree `D`. Coefficients up to degree `D` are exact, so the
/// truncated mass is `1 - sum of stored coefficients`; exceeding `1e-9` is an error.
pub fn pmf_oracle(dist: &OffspringDist, n: usize, dim: usize, degree: usize) -> Result<PmfField> {
    Ok(pmf_generations(dist, n, dim, degree, false)?.pop().expect("last generation"))
}

/// Oracle laws for generations `0..=n`.
pub fn pmf_oracle_all(dist: &OffspringDist, n: usize, dim: usize, degree: usize) -> Result<Vec<PmfField>> {
    pmf_generations(dist, n, dim, degree, true)
}

fn pmf_generations(dist: &OffspringDist, n: usize, dim: usize, degree: usize, keep: bool) -> Result<Vec<PmfField>> {
    check_dim(dim)?;
    if dist.tail_class() != crate::offspring::TailClass::FiniteSupport {
        return Err(BrwError::Domain("the pmf oracle needs a finite-support offspring law".into()));
    }
    let w = degree + 1;
    let lmax = dist.probs().last().map_or(0, |p| p.0) as usize;
    let qcoef: Vec<f64> = (0..=lmax).map(|l| dist.prob(l as u64)).collect();
    let mut one = vec![0.0; w];
    one[0] = 1.0;
    // generation 0: F(0) = s, F(x) = 1 elsewhere
    let mut coeffs = vec![0.0; w];
    if degree >= 1 {
        coeffs[1] = 1.0;
    } else {
        coeffs[0] = 0.0;
    }
    let finish = |coeffs: Vec<f64>, radius: usize, m: usize| -> Result<PmfField> {
        let truncated_mass = coeffs.chunks(w).map(|c| (1.0 - c.iter().sum::<f64>()).max(0.0)).fold(0.0, f64::max);
        if truncated_mass > 1e-9 {
            return Err(BrwError::Truncation { mass: truncated_mass, degree });
        }
        Ok(PmfField { dim, radius, degree, n: m, coeffs, truncated_mass })
    };
    let mut out = Vec::new();
    if keep || n == 0 {
        out.push(finish(coeffs.clone(), 0, 0)?);
    }
    let nb = crate::lattice::neighbourhood(dim);
    let inv = 1.0 / nb.len() as f64;
    let mut avg = vec![0.0; w];
    let mut acc = vec![0.0; w];
    let mut tmp = vec![0.0; w];
    let mut radius = 0usize;
    for m in 1..=n {
        let new_r = radius + 1;
        let old = Field::zeros(dim, radius)?;
        let newf = Field::zeros(dim, new_r)?;
        let mut next = vec![0.0; newf.len() * w];
        for i in 0..newf.len() {
            let x = newf.site_of(i);
            avg.iter_mut().for_each(|v| *v = 0.0);
            for e in nb {
                let src = match old.index_of(x - *e) {
                    Some(j) => &coeffs[j * w..(j + 1) * w],
                    None => &one[..],
                };
                for (a, &c) in avg.iter_mut().zip(src) {
                    *a += c;
                }
            }
            avg.iter_mut().for_each(|v| *v *= inv);
            // Horner: Phi(p) = sum_l Q_l p^l
            acc.iter_mut().for_each(|v| *v = 0.0);
            acc[0] = qcoef[lmax];
            for l in (0..lmax).rev() {
                poly_mul(&acc, &avg, &mut tmp);
                tmp[0] += qcoef[l];
                std::mem::swap(&mut acc, &mut tmp);
            }
            next[i * w..(i + 1) * w].copy_from_slice(&acc);
        }
        coeffs = next;
        radius = new_r;
        if keep || m == n {
            out.push(finish(coeffs.clone(), radius, m)?);
        }
    }
    Ok(out)
}

/// `v_n(x) = kappa / (n ln n) exp(-beta_n |x|^2 / (2n))`, `beta_n = beta (1 - 1/ln n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SuperSolutionParams {
    pub kappa: f64,
    pub beta: f64,
}

impl SuperSolutionParams {
    pub const BETA: f64 = 2.5;

    pub fn new(kappa: f64) -> Self {
        SuperSolutionParams { kappa, beta: Self::BETA }
    }

    /// `4 exp(6 beta)`.
    pub fn kappa0(&self) -> f64 {
        4.0 * (6.0 * self.beta).exp()
    }

    pub fn beta_n(&self, n: usize) -> f64 {
        self.beta * (1.0 - 1.0 / (n as f64).ln())
    }

    pub fn ln_value(&self, n: usize, norm2: f64) -> f64 {
        let nf = n as f64;
        (self.kappa / (nf * nf.ln())).ln() - self.beta_n(n) * norm2 / (2.0 * nf)
    }

    pub fn value(&self, n: usize, s: Site) -> f64 {
        if self.kappa == 0.0 {
            return 0.0;
        }
        self.ln_value(n, s.norm2() as f64).exp()
    }

    /// `(P v_n)(x) / v_n(x)`, a closed form because `v_n` is Gaussian.
    fn markov_ratio(&self, n: usize, s: Site) -> f64 {
        let b = self.beta_n(n) / (2.0 * n as f64);
        let mut w = 1.0;
        for &c in &s.0[..2] {
            let c = c as f64;
            w += (-b * (1.0 - 2.0 * c)).exp() + (-b * (1.0 + 2.0 * c)).exp();
        }
        w / 5.0
    }

    /// Relative and absolute margins of `v_{n+1} >= Pv_n (1 - Pv_n / 2)` at `x`.
    pub fn margins(&self, n: usize, s: Site) -> (f64, f64) {
        if self.kappa == 0.0 {
            return (0.0, 0.0);
        }
        let r2 = s.norm2() as f64;
        let lv = self.ln_value(n, r2);
        let lv1 = self.ln_value(n + 1, r2);
        let lpv = lv + self.markov_ratio(n, s).ln();
        let pv = lpv.exp();
        let rel = 1.0 - (lpv - lv1).exp() * (1.0 - 0.5 * pv);
        let abs = lv1.exp() - pv * (1.0 - 0.5 * pv);
        (rel, abs)
    }
}

/// `v_n` on a box (two dimensions).
pub fn supersolution_field(params: &SuperSolutionParams, n: usize, dim: usize, clamp: ClampPolicy) -> Result<Field> {
    if dim != 2 {
        return Err(BrwError::UnsupportedDim(dim));
    }
    if n < 2 {
        return Err(BrwError::Domain("v_n needs n >= 2".into()));
    }
    let r = clamp.radius(n, dim);
    let mut f = Field::from_fn(2, r, |s| params.value(n, s))?;
    f.n = n;
    Ok(f)
}

/// Diagnostic region labels for a site at step `n`.
pub fn regime_label(n: usize, s: Site) -> &'static str {
    const DELTA: f64 = 0.1;
    let r = (s.norm2() as f64).sqrt();
    let nf = n as f64;
    if r >= 3.0 * nf {
        "far"
    } else if r <= (10.0 * nf).sqrt() {
        "centre"
    } else if r <= DELTA * nf {
        "inner"
    } else {
        "outer"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Argmin {
    pub n: usize,
    pub x: [i32; 2],
    pub regime: &'static str,
}

#[derive(Clone, Debug, Serialize)]
pub struct SupersolutionReport {
    pub params: SuperSolutionParams,
    pub n_range: (usize, usize),
    pub holds: bool,
    /// Minimum of `1 - RHS / v_{n+1}` over the checked grid.
    pub min_margin: f64,
    pub argmin: Option<Argmin>,
    pub violations: usize,
}

fn octant_sites(limit: f64) -> impl Iterator<Item = Site> {
    let r = limit.floor() as i32;
    let lim2 = limit * limit;
    (0..=r).flat_map(move |a| (0..=a).map(move |b| Site::new(&[a, b]))).filter(move |s| s.norm2() as f64 <= lim2)
}

fn min_margin_at(params: &SuperSolutionParams, n: usize, x_limit: f64) -> (f64, Site, usize) {
    let mut best = (f64::INFINITY, Site::ORIGIN, 0usize);
    for s in octant_sites(x_limit) {
        let (rel, _) = params.margins(n, s);
        if rel < 0.0 {
            best.2 += 1;
        }
        if rel < best.0 {
            best.0 = rel;
            best.1 = s;
        }
    }
    best
}

/// Checks `v_{n+1}(x) >= (Pv_n)(x) (1 - (Pv_n)(x)/2)` for every `n` in range
/// and every `x` with `|x| <= 3n`, by direct evaluation in two dimensions.
pub fn verify_supersolution(params: &SuperSolutionParams, n_range: RangeInclusive<usize>) -> SupersolutionReport {
    let (lo, hi) = (*n_range.start(), *n_range.end());
    let mut report = SupersolutionReport { params: *params, n_range: (lo, hi), holds: true, min_margin: f64::INFINITY, argmin: None, violations: 0 };
    for n in n_range {
        if n < 2 {
            report.holds = false;
            continue;
        }
        let (m, s, v) = min_margin_at(params, n, 3.0 * n as f64);
        report.violations += v;
        if m < report.min_margin {
            report.min_margin = m;
            report.argmin = Some(Argmin { n, x: [s.0[0], s.0[1]], regime: regime_label(n, s) });
        }
    }
    if params.kappa <= 0.0 || report.min_margin < 0.0 || report.violations > 0 {
        report.holds = false;
    }
    report
}

/// Smallest `N0 >= 3` such that the inequality holds on `[N0, 4 N0]`.
pub fn search_n0(params: &SuperSolutionParams, max_n0: usize) -> Option<usize> {
    let mut memo: Vec<Option<bool>> = vec![None; 4 * max_n0 + 1];
    let mut holds = |n: usize| -> bool {
        *memo[n].get_or_insert_with(|| min_margin_at(params, n, 3.0 * n as f64).0 >= 0.0)
    };
    (3..=max_n0).find(|&n0| (n0..=4 * n0).all(&mut holds))
}

/// Absolute margins `v_{n+1} - Pv_n (1 - Pv_n/2)` on a box, as a field.
pub fn supersolution_margin_field(params: &SuperSolutionParams, n: usize, radius: usize) -> Result<Field> {
    let mut f = Field::from_fn(2, radius, |s| params.margins(n, s).1)?;
    f.n = n;
    Ok(f)
}

/// Comparison check: `u` must satisfy the binary hitting recursion exactly,
/// `v` the super-solution inequality on its box interior, `v_0 >= u_0`; then
/// `v_n >= u_n` must hold at every site of every supplied pair (slack 1e-12).
pub fn verify_comparison<U, V>(u_seq: U, v_seq: V) -> bool
where
    U: IntoIterator<Item = Field>,
    V: IntoIterator<Item = Field>,
{
    const SLACK: f64 = 1e-12;
    let mut prev: Option<(Field, Field)> = None;
    let mut any = false;
    for (u, v) in u_seq.into_iter().zip(v_seq) {
        any = true;
        if u.dim() != v.dim() {
            return false;
        }
        if let Some((pu, pv)) = &prev {
            let mut expect = apply_markov(pu, Some(u.radius()));
            expect.values_mut().iter_mut().for_each(|p| *p -= 0.5 * *p * *p);
            let expect = expect.resized(u.radius());
            if expect.values().iter().zip(u.values()).any(|(a, b)| (a - b).abs() > SLACK) {
                return false;
            }
            let pvf = apply_markov(pv, None);
            let inner = pv.radius().saturating_sub(1);
            for (s, vv) in v.iter() {
                if s.max_abs() as usize > inner {
                    continue;
                }
                let p = pvf.get(s);
                if vv < p * (1.0 - 0.5 * p) - SLACK {
                    return false;
                }
            }
        }
        for (s, uv) in u.iter() {
            if v.get(s) < uv - SLACK {
                return false;
            }
        }
        prev = Some((u, v));
    }
    any
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::transition_field;

    fn bin() -> OffspringDist {
        OffspringDist::binary()
    }

    #[test]
    fn survival_values() {
        let s = survival_probs(&bin(), 2);
        assert_eq!(s[0], 1.0);
        assert!((s[1] - 0.5).abs() < 1e-15);
        assert!((s[2] - 0.375).abs() < 1e-15);
    }

    #[test]
    fn hitting_first_steps() {
        let u1 = hitting_field(&bin(), 1, 2, ClampPolicy::Exact).unwrap();
        for (s, v) in u1.iter() {
            let expect = if s.norm2() <= 1 { 9.0 / 50.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
        let u2 = hitting_field(&bin(), 2, 2, ClampPolicy::Exact).unwrap();
        assert!((u2.get(Site::ORIGIN) - 0.1638).abs() < 1e-15);
    }

    #[test]
    fn hitting_below_survival() {
        let s = survival_probs(&bin(), 30);
        let b = bin();
        let sweep = HittingSweep::new(&b, 30, 2, ClampPolicy::Exact, HittingUpdate::Pgf).unwrap();
        for (n, u) in sweep.enumerate() {
            assert!(u.max_value() <= s[n] + 1e-15);
        }
    }

    #[test]
    fn kpp_requires_binary() {
        let g = OffspringDist::geometric(2.0).unwrap();
        assert!(HittingSweep::new(&g, 3, 2, ClampPolicy::Exact, HittingUpdate::Kpp).is_err());
    }

    #[test]
    fn mgf_zero_theta_and_first_step() {
        let g = mgf_field(&bin(), 5, 0.0, 2, ClampPolicy::Exact).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        let theta: f64 = 0.3;
        let g0 = mgf_field(&bin(), 0, theta, 2, ClampPolicy::Exact).unwrap();
        assert_eq!(g0.get(Site::ORIGIN), theta.exp_m1());
        let g1 = mgf_field(&bin(), 1, theta, 2, ClampPolicy::Exact).unwrap();
        let a = 1.0 + theta.exp_m1() / 5.0;
        assert!((g1.get(Site::ORIGIN) - (0.5 * (1.0 + a * a) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn mgf_blowup_is_signalled() {
        let g = OffspringDist::geometric(2.0).unwrap();
        match mgf_field(&g, 200, 0.6, 1, ClampPolicy::Exact) {
            Err(BrwError::MgfBlowup { step }) => assert!(step >= 1),
            other => panic!("expected blowup, got {:?}", other.map(|f| f.max_value())),
        }
        let z = OffspringDist::zeta_law(2.0).unwrap();
        assert!(matches!(mgf_field(&z, 3, 0.1, 2, ClampPolicy::Exact), Err(BrwError::Domain(_))));
    }

    #[test]
    fn dominating_matches_closed_form_and_dominates() {
        for (theta, dim) in [(0.05, 3), (0.2, 2), (0.0, 2)] {
            for n in [1, 2, 7, 20] {
                let h = dominating_field(&bin(), n, theta, dim).unwrap();
                let c = dominating_closed_form(&bin(), n, theta, dim).unwrap();
                let scale = h.max_value().max(1e-300);
                for (a, b) in h.values().iter().zip(c.values()) {
                    assert!((a - b).abs() <= 1e-10 * scale.max(1.0));
                }
                let g = mgf_field(&bin(), n, theta, dim, ClampPolicy::Exact).unwrap();
                for (s, gv) in g.iter() {
                    assert!(h.get(s) >= gv - 1e-15);
                }
                if theta == 0.0 {
                    assert!(h.values().iter().all(|&v| v == 0.0));
                }
            }
        }
        let h1 = dominating_field(&bin(), 1, 0.3, 2).unwrap();
        let g1 = mgf_field(&bin(), 1, 0.3, 2, ClampPolicy::Exact).unwrap();
        assert_eq!(h1.values(), g1.values());
    }

    #[test]
    fn second_moment_first_generation() {
        let f1 = second_moment_field(&bin(), 1, 2, ClampPolicy::Exact).unwrap();
        for (s, v) in f1.iter() {
            let expect = if s.norm2() <= 1 { 6.0 / 25.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn pmf_first_generation_and_truncation_error() {
        let p = pmf_oracle(&bin(), 1, 2, 8).unwrap();
        let v = p.pmf(Site::new(&[1, 0]));
        assert!((v[0] - 41.0 / 50.0).abs() < 1e-15);
        assert!((v[1] - 8.0 / 50.0).abs() < 1e-15);
        assert!((v[2] - 1.0 / 50.0).abs() < 1e-15);
        assert!(matches!(pmf_oracle(&bin(), 12, 2, 4), Err(BrwError::Truncation { .. })));
    }

    #[test]
    fn pmf_oracle_small_cases_against_fields() {
        let n = 5;
        let p = pmf_oracle(&bin(), n, 2, 64).unwrap();
        let pn = transition_field(n, 2, ClampPolicy::Exact).unwrap();
        let u = hitting_field(&bin(), n, 2, ClampPolicy::Exact).unwrap();
        let f = second_moment_field(&bin(), n, 2, ClampPolicy::Exact).unwrap();
        for s in p.sites() {
            assert!((p.mean(s) - pn.get(s)).abs() < 1e-12);
            assert!((1.0 - p.pmf(s)[0] - u.get(s)).abs() < 1e-12);
            assert!((p.second_moment(s) - f.get(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn supersolution_basics() {
        let params = SuperSolutionParams::new(4.0 * 15f64.exp());
        assert_eq!(params.kappa0(), 4.0 * 15f64.exp());
        let n = 10;
        let v = supersolution_field(&params, n, 2, ClampPolicy::Radius(4)).unwrap();
        let nf = n as f64;
        assert!((v.get(Site::ORIGIN) - params.kappa / (nf * nf.ln())).abs() < 1e-6);
        let zero = SuperSolutionParams::new(0.0);
        assert!(!verify_supersolution(&zero, 10..=20).holds);
    }

    #[test]
    fn comparison_trivial_cases() {
        let us: Vec<Field> = HittingSweep::new(&bin(), 6, 2, ClampPolicy::Exact, HittingUpdate::Kpp).unwrap().collect();
        assert!(verify_comparison(us.clone(), us.clone()));
        let zeros: Vec<Field> = us.iter().map(|u| u.map(|_| 0.0)).collect();
        assert!(!verify_comparison(us.clone(), zeros));
    }
}
