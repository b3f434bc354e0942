//! Lazy nearest-neighbour kernel on `Z^d` and dense fields on centred boxes.
//!
//! The kernel moves to each of the `2d+1` sites at distance at most one
//! (including the current site) with equal probability. Fields are stored as
//! dense arrays over `{-R..R}^d`; every operation that drops mass at the box
//! boundary adds exactly that mass to `tail_bound`.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BrwError, Result};

/// Lattice site. Coordinates beyond the working dimension are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub [i32; 3]);

impl Site {
    pub const ORIGIN: Site = Site([0, 0, 0]);

    pub fn new(coords: &[i32]) -> Site {
        let mut c = [0; 3];
        c[..coords.len()].copy_from_slice(coords);
        Site(c)
    }

    pub fn coords(&self, dim: usize) -> &[i32] {
        &self.0[..dim]
    }

    pub fn norm2(&self) -> i64 {
        self.0.iter().map(|&c| (c as i64) * (c as i64)).sum()
    }

    pub fn max_abs(&self) -> u32 {
        self.0.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0)
    }
}

impl std::ops::Add for Site {
    type Output = Site;
    fn add(self, o: Site) -> Site {
        Site([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl std::ops::Sub for Site {
    type Output = Site;
    fn sub(self, o: Site) -> Site {
        Site([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl std::ops::Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site([-self.0[0], -self.0[1], -self.0[2]])
    }
}

const NEIGHBOURS: [Site; 7] = [
    Site([0, 0, 0]),
    Site([-1, 0, 0]),
    Site([1, 0, 0]),
    Site([0, -1, 0]),
    Site([0, 1, 0]),
    Site([0, 0, -1]),
    Site([0, 0, 1]),
];

/// The neighbourhood `N` in its fixed order: origin, then `-e_j, +e_j` for each axis.
pub fn neighbourhood(dim: usize) -> &'static [Site] {
    &NEIGHBOURS[..2 * dim + 1]
}

pub fn check_dim(dim: usize) -> Result<()> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(BrwError::UnsupportedDim(dim))
    }
}

/// How a field box is truncated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ClampPolicy {
    /// Full support: radius `n`.
    Exact,
    /// Radius `ceil(c * sqrt(n ln(n+2)))`.
    Scaled(f64),
    /// Smallest radius whose maximal Bernstein tail bound is below `eps`.
    TailEps(f64),
    /// Fixed radius.
    Radius(usize),
}

impl Default for ClampPolicy {
    fn default() -> Self {
        ClampPolicy::Scaled(6.0)
    }
}

impl ClampPolicy {
    /// Box radius used for a run of `n` steps. Never exceeds `n`.
    pub fn radius(&self, n: usize, dim: usize) -> usize {
        let r = match *self {
            ClampPolicy::Exact => n,
            ClampPolicy::Scaled(c) => {
                let nf = n as f64;
                (c * (nf * (nf + 2.0).ln()).sqrt()).ceil() as usize
            }
            ClampPolicy::TailEps(eps) => {
                let mut r = ((n as f64).sqrt() as usize).max(1);
                while r < n && bernstein_tail(n, dim, r) > eps {
                    r += 1;
                }
                r
            }
            ClampPolicy::Radius(r) => r,
        };
        r.min(n)
    }
}

impl std::str::FromStr for ClampPolicy {
    type Err = BrwError;

    /// `exact`, `scaled:<c>`, `tail:<eps>` or `radius:<r>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || BrwError::Config(format!("bad clamp '{}': expected exact, scaled:<c>, tail:<eps> or radius:<r>", s));
        let s = s.trim();
        if s == "exact" {
            return Ok(ClampPolicy::Exact);
        }
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "scaled" => v.parse().map(ClampPolicy::Scaled).map_err(|_| bad()),
            "tail" => v.parse().map(ClampPolicy::TailEps).map_err(|_| bad()),
            "radius" => v.parse().map(ClampPolicy::Radius).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

/// Maximal Bernstein bound on the probability that an `n`-step walk ever
/// leaves the sup-norm box of radius `r`.
pub fn bernstein_tail(n: usize, dim: usize, r: usize) -> f64 {
    if r >= n {
        return 0.0;
    }
    let t = (r + 1) as f64;
    let var = 2.0 / (2 * dim + 1) as f64;
    let b = 2.0 * (n as f64 * var + t / 3.0);
    (2 * dim) as f64 * (-t * t / b).exp()
}

/// Hoeffding bound `2d exp(-(r+1)^2 / 2n)` for the same event.
pub fn hoeffding_tail(n: usize, dim: usize, r: usize) -> f64 {
    if r >= n {
        return 0.0;
    }
    let t = (r + 1) as f64;
    (2 * dim) as f64 * (-t * t / (2.0 * n as f64)).exp()
}

/// Dense real field on the box `{-R..R}^d`, zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    dim: usize,
    radius: usize,
    /// Generation label carried into CSV headers.
    pub n: usize,
    values: Vec<f64>,
    /// Mass that has been dropped at the box boundary (never decreases).
    pub tail_bound: f64,
}

impl Field {
    pub fn zeros(dim: usize, radius: usize) -> Result<Field> {
        check_dim(dim)?;
        let side = 2 * radius + 1;
        Ok(Field { dim, radius, n: 0, values: vec![0.0; side.pow(dim as u32)], tail_bound: 0.0 })
    }

    pub fn delta(dim: usize) -> Result<Field> {
        let mut f = Field::zeros(dim, 0)?;
        f.values[0] = 1.0;
        Ok(f)
    }

    pub fn constant(dim: usize, radius: usize, c: f64) -> Result<Field> {
        let mut f = Field::zeros(dim, radius)?;
        f.values.iter_mut().for_each(|v| *v = c);
        Ok(f)
    }

    /// Builds a field by evaluating `g` at every site of the box.
    pub fn from_fn(dim: usize, radius: usize, mut g: impl FnMut(Site) -> f64) -> Result<Field> {
        let mut f = Field::zeros(dim, radius)?;
        for i in 0..f.values.len() {
            let s = f.site_of(i);
            f.values[i] = g(s);
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, s: Site) -> bool {
        s.max_abs() as usize <= self.radius && s.0[self.dim..].iter().all(|&c| c == 0)
    }

    pub fn index_of(&self, s: Site) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let side = self.side();
        let r = self.radius as i64;
        let mut idx = 0usize;
        for j in 0..self.dim {
            idx = idx * side + (s.0[j] as i64 + r) as usize;
        }
        Some(idx)
    }

    pub fn site_of(&self, mut idx: usize) -> Site {
        let side = self.side();
        let mut c = [0i32; 3];
        for j in (0..self.dim).rev() {
            c[j] = (idx % side) as i32 - self.radius as i32;
            idx /= side;
        }
        Site(c)
    }

    /// Value at `s`, zero outside the box.
    pub fn get(&self, s: Site) -> f64 {
        self.index_of(s).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, s: Site, v: f64) -> Result<()> {
        let i = self
            .index_of(s)
            .ok_or_else(|| BrwError::Domain(format!("site {:?} outside box of radius {}", s, self.radius)))?;
        self.values[i] = v;
        Ok(())
    }

    /// Sites and values in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (Site, f64)> + '_ {
        self.values.iter().enumerate().map(move |(i, &v)| (self.site_of(i), v))
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, g: impl Fn(f64) -> f64) -> Field {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = g(*v));
        out
    }

    /// Pointwise combination over the larger of the two boxes.
    pub fn zip_with(&self, other: &Field, g: impl Fn(f64, f64) -> f64) -> Result<Field> {
        if self.dim != other.dim {
            return Err(BrwError::DimensionMismatch(self.dim, other.dim));
        }
        let r = self.radius.max(other.radius);
        let a = self.resized(r);
        let b = other.resized(r);
        let mut out = a.clone();
        for (o, (&x, &y)) in out.values.iter_mut().zip(a.values.iter().zip(b.values.iter())) {
            *o = g(x, y);
        }
        out.tail_bound = self.tail_bound.max(other.tail_bound);
        Ok(out)
    }

    /// Copy onto a box of a different radius (zero padding or cropping).
    /// Cropped mass is not accounted; callers that crop probability mass use
    /// [`apply_markov`] instead.
    pub fn resized(&self, radius: usize) -> Field {
        if radius == self.radius {
            return self.clone();
        }
        let mut out = Field::zeros(self.dim, radius).expect("dim checked at construction");
        out.n = self.n;
        out.tail_bound = self.tail_bound;
        let common = radius.min(self.radius);
        let (so, si) = (out.side(), self.side());
        let off_o = radius - common;
        let off_i = self.radius - common;
        let w = 2 * common + 1;
        match self.dim {
            1 => out.values[off_o..off_o + w].copy_from_slice(&self.values[off_i..off_i + w]),
            2 => {
                for a in 0..w {
                    let ro = (a + off_o) * so + off_o;
                    let ri = (a + off_i) * si + off_i;
                    out.values[ro..ro + w].copy_from_slice(&self.values[ri..ri + w]);
                }
            }
            _ => {
                for a in 0..w {
                    for b in 0..w {
                        let ro = ((a + off_o) * so + b + off_o) * so + off_o;
                        let ri = ((a + off_i) * si + b + off_i) * si + off_i;
                        out.values[ro..ro + w].copy_from_slice(&self.values[ri..ri + w]);
                    }
                }
            }
        }
        out
    }

    /// Field CSV: a header comment followed by `x1,...,xd,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# dim={} n={} radius={} tail_bound={:e}", self.dim, self.n, self.radius, self.tail_bound)?;
        for (s, v) in self.iter() {
            for c in s.coords(self.dim) {
                write!(w, "{},", c)?;
            }
            writeln!(w, "{}", v)?;
        }
        Ok(())
    }
}

/// Order-independent sum of three values, so axis permutations give identical bits.
#[inline]
fn sum3(a: f64, b: f64, c: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let (mid, hi) = if hi <= c { (hi, c) } else { (c, hi) };
    let (lo, mid) = if lo <= mid { (lo, mid) } else { (mid, lo) };
    (lo + mid) + hi
}

/// One application of the Markov operator: `out(x) = (2d+1)^{-1} sum_{e in N} f(x - e)`.
///
/// The output box has radius `R + 1`, or `clamp` if smaller; mass pushed out
/// of a clamped box is added to `tail_bound`. Every output cell is summed in
/// a fixed pairing of opposite neighbours, so results do not depend on traversal
/// order and are bitwise invariant under the lattice symmetries.
pub fn apply_markov(f: &Field, clamp: Option<usize>) -> Field {
    let full = f.radius + 1;
    let r_out = clamp.map_or(full, |c| c.min(full));
    let rp = r_out + 1;
    let pad = f.resized(rp);
    let pad = &pad.values;
    let sp = 2 * rp + 1;
    let so = 2 * r_out + 1;
    let dim = f.dim;
    let inv = 1.0 / (2 * dim + 1) as f64;
    let mut out = vec![0.0; so.pow(dim as u32)];
    match dim {
        1 => {
            for (i, o) in out.iter_mut().enumerate() {
                let p = i + 1;
                *o = (pad[p] + (pad[p - 1] + pad[p + 1])) * inv;
            }
        }
        2 => {
            for i in 0..so {
                let row = (i + 1) * sp + 1;
                let orow = &mut out[i * so..(i + 1) * so];
                for (j, o) in orow.iter_mut().enumerate() {
                    let p = row + j;
                    *o = (pad[p] + ((pad[p - sp] + pad[p + sp]) + (pad[p - 1] + pad[p + 1]))) * inv;
                }
            }
        }
        _ => {
            let sp2 = sp * sp;
            for i in 0..so {
                for k in 0..so {
                    let base = (i + 1) * sp2 + (k + 1) * sp + 1;
                    let orow = &mut out[(i * so + k) * so..(i * so + k + 1) * so];
                    for (j, o) in orow.iter_mut().enumerate() {
                        let p = base + j;
                        let s = sum3(pad[p - sp2] + pad[p + sp2], pad[p - sp] + pad[p + sp], pad[p - 1] + pad[p + 1]);
                        *o = (pad[p] + s) * inv;
                    }
                }
            }
        }
    }
    let mut tail = f.tail_bound;
    if r_out < full {
        let dropped = f.sum() - out.iter().sum::<f64>();
        tail += dropped.max(0.0);
    }
    Field { dim, radius: r_out, n: f.n + 1, values: out, tail_bound: tail }
}

/// Exact `n`-step transition probabilities `P_n` on the clamped box.
pub fn transition_field(n: usize, dim: usize, clamp: ClampPolicy) -> Result<Field> {
    let r = clamp.radius(n, dim);
    let mut f = Field::delta(dim)?;
    for _ in 0..n {
        f = apply_markov(&f, Some(r));
    }
    Ok(f)
}

/// Streams `P_0, P_1, ..., P_{n_max}` with a fixed clamp radius chosen for `n_max`.
pub struct TransitionSweep {
    next: Option<Field>,
    n_max: usize,
    radius: usize,
}

impl TransitionSweep {
    pub fn new(n_max: usize, dim: usize, clamp: ClampPolicy) -> Result<Self> {
        Ok(TransitionSweep { next: Some(Field::delta(dim)?), n_max, radius: clamp.radius(n_max, dim) })
    }
}

impl Iterator for TransitionSweep {
    type Item = Field;
    fn next(&mut self) -> Option<Field> {
        let cur = self.next.take()?;
        if cur.n < self.n_max {
            self.next = Some(apply_markov(&cur, Some(self.radius)));
        }
        Some(cur)
    }
}

/// Return probabilities `P_m(0)` for `m = 0..=m_max`, read off a transition sweep.
pub fn return_probabilities(m_max: usize, dim: usize, clamp: ClampPolicy) -> Result<Vec<f64>> {
    Ok(TransitionSweep::new(m_max, dim, clamp)?.map(|f| f.get(Site::ORIGIN)).collect())
}

/// A field invariant under every coordinate reflection, stored on
/// `{0..R}^d` only. Same recursion and boundary accounting as [`Field`], with
/// one eighth of the cells in three dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthantField {
    dim: usize,
    radius: usize,
    pub n: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    pub tail_bound: f64,
}

impl OrthantField {
    pub fn delta(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(OrthantField { dim, radius: 0, n: 0, values: vec![1.0], weights: vec![1.0], tail_bound: 0.0 })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    fn side(&self) -> usize {
        self.radius + 1
    }

    /// Reflected copy of `f` restricted to `{0..R}^d`; `f` must be symmetric.
    pub fn from_field(f: &Field) -> Self {
        let r = f.radius;
        let len = (r + 1).pow(f.dim as u32);
        let mut values = Vec::with_capacity(len);
        for i in 0..len {
            values.push(f.get(orthant_site(i, r + 1, f.dim)));
        }
        OrthantField { dim: f.dim, radius: r, n: f.n, weights: orthant_weights(r, f.dim), values, tail_bound: f.tail_bound }
    }

    pub fn get(&self, s: Site) -> f64 {
        let side = self.side();
        let mut idx = 0;
        for j in 0..self.dim {
            let c = s.0[j].unsigned_abs() as usize;
            if c > self.radius {
                return 0.0;
            }
            idx = idx * side + c;
        }
        self.values[idx]
    }

    /// Sum over the whole lattice.
    pub fn sum(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    /// Sum over the whole lattice of `g(value)`.
    pub fn sum_map(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.values.iter().zip(&self.weights).map(|(&v, w)| g(v) * w).sum()
    }

    pub fn map(&self, g: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = g(*v));
        out
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Full-box copy.
    pub fn to_field(&self) -> Field {
        let mut f = Field::from_fn(self.dim, self.radius, |s| self.get(s)).expect("valid dim");
        f.n = self.n;
        f.tail_bound = self.tail_bound;
        f
    }

    /// One application of the Markov operator, as [`apply_markov`].
    pub fn apply_markov(&self, clamp: Option<usize>) -> Self {
        let full = self.radius + 1;
        let r_out = clamp.map_or(full, |c| c.min(full));
        let (dim, so) = (self.dim, r_out + 1);
        let mut out = vec![0.0; so.pow(dim as u32)];
        if dim == 3 {
            self.markov3(&mut out, so);
        } else {
            self.markov_generic(&mut out, so);
        }
        let weights = orthant_weights(r_out, dim);
        let mut tail = self.tail_bound;
        if r_out < full {
            let after: f64 = out.iter().zip(&weights).map(|(v, w)| v * w).sum();
            tail += (self.sum() - after).max(0.0);
        }
        OrthantField { dim, radius: r_out, n: self.n + 1, values: out, weights, tail_bound: tail }
    }

    fn markov3(&self, out: &mut [f64], so: usize) {
        let inv = 1.0 / 7.0;
        let si = self.side();
        let sp = so + 1;
        let mut pad = vec![0.0; sp * sp * sp];
        let w = si.min(sp);
        for a in 0..w {
            for b in 0..w {
                let src = (a * si + b) * si;
                let dst = (a * sp + b) * sp;
                pad[dst..dst + w].copy_from_slice(&self.values[src..src + w]);
            }
        }
        for a in 0..so {
            let am = if a == 0 { 1 } else { a - 1 };
            for b in 0..so {
                let bm = if b == 0 { 1 } else { b - 1 };
                let base = (a * sp + b) * sp;
                let alo = (am * sp + b) * sp;
                let ahi = ((a + 1) * sp + b) * sp;
                let blo = (a * sp + bm) * sp;
                let bhi = (a * sp + b + 1) * sp;
                let orow = &mut out[(a * so + b) * so..(a * so + b + 1) * so];
                for (c, o) in orow.iter_mut().enumerate() {
                    let cm = if c == 0 { 1 } else { c - 1 };
                    *o = (pad[base + c]
                        + pad[alo + c]
                        + pad[ahi + c]
                        + pad[blo + c]
                        + pad[bhi + c]
                        + pad[base + cm]
                        + pad[base + c + 1])
                        * inv;
                }
            }
        }
    }

    fn markov_generic(&self, out: &mut [f64], so: usize) {
        let (dim, si) = (self.dim, self.side());
        let inv = 1.0 / (2 * dim + 1) as f64;
        let read = |c: [usize; 3]| -> f64 {
            let mut idx = 0;
            for &x in &c[..dim] {
                if x >= si {
                    return 0.0;
                }
                idx = idx * si + x;
            }
            self.values[idx]
        };
        for (i, o) in out.iter_mut().enumerate() {
            let mut c = [0usize; 3];
            let mut rest = i;
            for j in (0..dim).rev() {
                c[j] = rest % so;
                rest /= so;
            }
            let mut acc = read(c);
            for j in 0..dim {
                let x = c[j];
                let mut lo = c;
                lo[j] = if x == 0 { 1 } else { x - 1 };
                let mut hi = c;
                hi[j] = x + 1;
                acc += read(lo) + read(hi);
            }
            *o = acc * inv;
        }
    }
}

fn orthant_site(mut i: usize, side: usize, dim: usize) -> Site {
    let mut c = [0i32; 3];
    for j in (0..dim).rev() {
        c[j] = (i % side) as i32;
        i /= side;
    }
    Site(c)
}

/// Number of lattice sites each orthant cell stands for: `2^(nonzero coords)`.
fn orthant_weights(r: usize, dim: usize) -> Vec<f64> {
    let side = r + 1;
    (0..side.pow(dim as u32))
        .map(|i| {
            let s = orthant_site(i, side, dim);
            f64::from(1u32 << s.0.iter().filter(|&&c| c != 0).count())
        })
        .collect()
}

/// `out(y) = sum_x f(x) g(y - x)` over the stored supports.
pub fn convolve(f: &Field, g: &Field) -> Result<Field> {
    if f.dim != g.dim {
        return Err(BrwError::DimensionMismatch(f.dim, g.dim));
    }
    let mut out = Field::zeros(f.dim, f.radius + g.radius)?;
    for (x, fx) in f.iter() {
        if fx == 0.0 {
            continue;
        }
        for (z, gz) in g.iter() {
            let i = out.index_of(x + z).expect("sum of radii");
            out.values[i] += fx * gz;
        }
    }
    out.n = f.n + g.n;
    out.tail_bound = f.tail_bound + g.tail_bound;
    Ok(out)
}

/// Largest `f(y) - f(x)` over pairs `x <= y` (componentwise, `x != y`) in the
/// closed positive orthant of the box. Nonpositive iff `f` is orthant-monotone.
/// Uses prefix minima, so every pair is covered in one pass.
pub fn orthant_monotonicity_gap(f: &Field) -> f64 {
    let (d, r) = (f.dim, f.radius);
    let w = r + 1;
    let total = w.pow(d as u32);
    let mut pmin = vec![f64::INFINITY; total];
    let mut gap = f64::NEG_INFINITY;
    let stride = |j: usize| w.pow((d - 1 - j) as u32);
    for i in 0..total {
        let mut c = [0i32; 3];
        let mut k = i;
        for j in (0..d).rev() {
            c[j] = (k % w) as i32;
            k /= w;
        }
        let v = f.get(Site(c));
        let mut below = f64::INFINITY;
        for j in 0..d {
            if c[j] > 0 {
                below = below.min(pmin[i - stride(j)]);
            }
        }
        if below.is_finite() {
            gap = gap.max(v - below);
        }
        pmin[i] = v.min(below);
    }
    gap
}

/// Path `S_0 = 0, S_1, ..., S_n` of the lazy walk.
pub fn sample_srw<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Site> {
    let nb = neighbourhood(dim);
    let mut path = Vec::with_capacity(n + 1);
    let mut s = Site::ORIGIN;
    path.push(s);
    for _ in 0..n {
        s = s + nb[rng.random_range(0..nb.len())];
        path.push(s);
    }
    path
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(n + 1);
    t.push(0.0);
    let mut acc = 0.0;
    for k in 1..=n {
        acc += (k as f64).ln();
        t.push(acc);
    }
    t
}

/// Return probabilities of the non-lazy walk after `k` moves, `k = 0..=k_max`.
fn nonlazy_returns(k_max: usize, dim: usize, lf: &[f64]) -> Vec<f64> {
    let ln_binom = |a: usize, b: usize| lf[a] - lf[b] - lf[a - b];
    (0..=k_max)
        .map(|k| {
            if k % 2 == 1 {
                return 0.0;
            }
            let h = k / 2;
            let ln_r = match dim {
                1 => ln_binom(k, h) - k as f64 * 2f64.ln(),
                2 => 2.0 * (ln_binom(k, h) - k as f64 * 2f64.ln()),
                _ => {
                    let mut s = 0.0;
                    for i in 0..=h {
                        for j in 0..=h - i {
                            let l = h - i - j;
                            let t = lf[h] - lf[i] - lf[j] - lf[l];
                            s += (2.0 * t - 2.0 * h as f64 * 3f64.ln()).exp();
                        }
                    }
                    ln_binom(k, h) - k as f64 * 2f64.ln() + s.ln()
                }
            };
            ln_r.exp()
        })
        .collect()
}

/// `P_m(0)` for `m = 0..=m_max` by counting paths: the lazy walk is a
/// binomial mixture of the non-lazy walk, whose return probabilities have
/// closed multinomial forms. Independent of the stencil route.
pub fn return_probabilities_combinatorial(m_max: usize, dim: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    let lf = ln_factorials(2 * m_max + 2);
    let ln_binom = |a: usize, b: usize| lf[a] - lf[b] - lf[a - b];
    let r = nonlazy_returns(m_max, dim, &lf);
    let q = 2 * dim + 1;
    let ln_hold = (1.0 / q as f64).ln();
    let ln_move = ((q - 1) as f64 / q as f64).ln();
    Ok((0..=m_max)
        .map(|m| {
            (0..=m)
                .step_by(2)
                .map(|k| (ln_binom(m, k) + (m - k) as f64 * ln_hold + k as f64 * ln_move).exp() * r[k])
                .sum()
        })
        .collect())
}

/// Single-`m` form of [`return_probabilities_combinatorial`].
pub fn return_probability_combinatorial(m: usize, dim: usize) -> Result<f64> {
    Ok(*return_probabilities_combinatorial(m, dim)?.last().expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn clamp_specs() {
        assert_eq!("exact".parse::<ClampPolicy>().unwrap(), ClampPolicy::Exact);
        assert_eq!("scaled:6".parse::<ClampPolicy>().unwrap(), ClampPolicy::Scaled(6.0));
        assert_eq!("tail:1e-13".parse::<ClampPolicy>().unwrap(), ClampPolicy::TailEps(1e-13));
        assert_eq!("radius:40".parse::<ClampPolicy>().unwrap(), ClampPolicy::Radius(40));
        assert!("radius:-1".parse::<ClampPolicy>().is_err());
        assert!("wide".parse::<ClampPolicy>().is_err());
    }

    #[test]
    fn monotonicity_gap_sees_distant_pairs() {
        let f = Field::from_fn(2, 3, |s| 1.0 / (1.0 + s.norm2() as f64)).unwrap();
        assert!(orthant_monotonicity_gap(&f) < 0.0);
        let mut g = f.clone();
        g.set(Site::new(&[3, 2]), 2.0).unwrap();
        assert!((orthant_monotonicity_gap(&g) - (2.0 - 1.0 / 11.0)).abs() < 1e-15);
    }

    #[test]
    fn orthant_engine_matches_full_boxes() {
        for dim in 1..=3 {
            let mut f = Field::delta(dim).unwrap();
            let mut g = OrthantField::delta(dim).unwrap();
            for _ in 0..9 {
                f = apply_markov(&f, Some(6));
                g = g.apply_markov(Some(6));
            }
            for (s, v) in f.iter() {
                assert!((g.get(s) - v).abs() < 1e-15);
            }
            assert!((g.sum() - f.sum()).abs() < 1e-14);
            assert!((g.tail_bound - f.tail_bound).abs() < 1e-14);
            let h = OrthantField::from_field(&f);
            assert!(h.values().iter().zip(g.values()).all(|(a, b)| (a - b).abs() < 1e-15));
            assert_eq!(h.to_field().values().len(), f.values().len());
        }
    }

    #[test]
    fn one_step_from_delta_is_uniform_on_neighbourhood() {
        let p1 = apply_markov(&Field::delta(2).unwrap(), None);
        for (s, v) in p1.iter() {
            let expect = if neighbourhood(2).contains(&s) { 0.2 } else { 0.0 };
            assert!((v - expect).abs() < 1e-15, "{:?} {}", s, v);
        }
    }

    #[test]
    fn constant_field_is_fixed_in_interior() {
        let c = Field::constant(2, 6, 0.37).unwrap();
        let out = apply_markov(&c, None);
        for (s, v) in out.iter() {
            if s.max_abs() <= 5 {
                assert!((v - 0.37).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_step_values_from_path_enumeration() {
        // enumerate the 25 two-step paths
        let nb = neighbourhood(2);
        let mut counts = std::collections::HashMap::new();
        for a in nb {
            for b in nb {
                *counts.entry(*a + *b).or_insert(0u32) += 1;
            }
        }
        let p2 = transition_field(2, 2, ClampPolicy::Exact).unwrap();
        for (s, v) in p2.iter() {
            let c = counts.get(&s).copied().unwrap_or(0) as f64 / 25.0;
            assert!((v - c).abs() < 1e-15);
        }
        assert!((p2.get(Site::new(&[1, 1])) - 2.0 / 25.0).abs() < 1e-15);
        assert!((p2.get(Site::ORIGIN) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn delta_is_convolution_identity() {
        let p3 = transition_field(3, 2, ClampPolicy::Exact).unwrap();
        let c = convolve(&Field::delta(2).unwrap(), &p3).unwrap();
        assert_eq!(c.values(), p3.values());
    }

    #[test]
    fn self_convolution_at_origin_is_return_probability() {
        for n in [1, 4, 9] {
            let pn = transition_field(n, 2, ClampPolicy::Exact).unwrap();
            let c = convolve(&pn, &pn).unwrap();
            let p2n = transition_field(2 * n, 2, ClampPolicy::Exact).unwrap();
            assert!((c.get(Site::ORIGIN) - p2n.get(Site::ORIGIN)).abs() < 1e-15);
        }
    }

    #[test]
    fn combinatorial_return_probability_matches_stencil() {
        for dim in 1..=3 {
            let ret = return_probabilities(40, dim, ClampPolicy::Exact).unwrap();
            for m in [0, 1, 2, 7, 20, 40] {
                let c = return_probability_combinatorial(m, dim).unwrap();
                assert!((c - ret[m]).abs() < 1e-13 * ret[m].max(1e-3), "d={} m={} {} {}", dim, m, c, ret[m]);
            }
        }
    }

    #[test]
    fn clamped_field_accounts_dropped_mass() {
        let f = transition_field(200, 2, ClampPolicy::Radius(20)).unwrap();
        assert_eq!(f.radius(), 20);
        assert!(f.tail_bound > 0.0);
        assert!((f.sum() + f.tail_bound - 1.0).abs() < 1e-12);
        // the a-priori bound dominates the accounted loss
        assert!(f.tail_bound <= bernstein_tail(200, 2, 20));
        assert!(bernstein_tail(200, 2, 20) <= hoeffding_tail(200, 2, 20));
    }

    #[test]
    fn clamp_policies_never_exceed_n() {
        for n in [0, 1, 5, 100, 4096] {
            for p in [ClampPolicy::Exact, ClampPolicy::Scaled(6.0), ClampPolicy::TailEps(1e-14), ClampPolicy::Radius(7)] {
                assert!(p.radius(n, 2) <= n);
            }
        }
        assert!(bernstein_tail(4096, 2, ClampPolicy::TailEps(1e-14).radius(4096, 2)) <= 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Field::delta(2).unwrap();
        let b = Field::delta(3).unwrap();
        assert_eq!(convolve(&a, &b).unwrap_err(), BrwError::DimensionMismatch(2, 3));
        assert!(Field::delta(4).is_err());
    }

    #[test]
    fn srw_path_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_srw(0, 2, &mut rng), vec![Site::ORIGIN]);
        let p = sample_srw(50, 3, &mut rng);
        assert_eq!(p.len(), 51);
        for w in p.windows(2) {
            assert!(neighbourhood(3).contains(&(w[1] - w[0])));
        }
    }

    #[test]
    fn csv_header_and_rows() {
        let f = transition_field(1, 1, ClampPolicy::Exact).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# dim=1 n=1 radius=1 tail_bound=0e0");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("-1,"));
    }
}
