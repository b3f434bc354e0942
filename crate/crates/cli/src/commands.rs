use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::json;

use brwlab::conditioned::{sample_conditioned_batch, Target, UBank};
use brwlab::fields::{
    dominating_field, hitting_field, mean_occupied, mgf_field, pmf_oracle, search_n0, second_moment_field,
    supersolution_field, survival_prob, verify_supersolution, SuperSolutionParams,
};
use brwlab::forward::{run, run_conditioned, ReplicateRecord};
use brwlab::lattice::transition_field;
use brwlab::parallel::try_map_reps;
use brwlab::rng::{streams, substream};
use brwlab::spine::{exact_mean_gamma, exact_var_delta, SpineBatch};
use brwlab::stats::{chi_square, histogram, read_report_csv, write_report_csv};
use brwlab::suites::{Verifier, SUITES};
use brwlab::{BrwError, Field, Result};

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Quantity {
    /// P_n as a field
    PField,
    /// u_n(x) = P(U_n(x) >= 1)
    UField,
    /// E exp(theta U_n(x)) - 1
    MgfField,
    /// Linear dominating field of the mgf recursion
    DominatingField,
    /// E U_n(x)^2
    SecondMoment,
    /// Super-solution v_n (two dimensions)
    VField,
    /// s_n = P(Z_n > 0)
    Survival,
    /// sum_x u_n(x)
    MeanOccupied,
    /// sum_{i=2}^n P_{2i}(0)
    MeanGamma,
    /// Var of the spine fluctuation term (binary, two dimensions)
    VarDelta,
    /// Law of U_n(x) at the site given by --x
    Pmf,
    /// N0 search and super-solution check on [N0, 4 N0]
    Supersolution,
}

fn output(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_jsonl<T: Serialize>(w: &mut dyn Write, rows: &[T]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut *w, r).map_err(|e| BrwError::Io(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar JSON goes to `summary` if set, otherwise to stderr.
fn write_summary(cfg: &RunConfig, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| BrwError::Io(e.to_string()))?;
    match &cfg.summary {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => eprintln!("{}", text),
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let mut w = output(cfg)?;
    for n in cfg.generations()? {
        write_jsonl(&mut *w, &simulate_at(cfg, seed, n)?)?;
    }
    Ok(true)
}

fn simulate_at(cfg: &RunConfig, seed: u64, n: usize) -> Result<Vec<ReplicateRecord>> {
    let (dim, dist) = (cfg.dim, &cfg.offspring);
    try_map_reps(cfg.reps, |r| -> Result<ReplicateRecord> {
        if cfg.conditioned {
            let mut rng = substream(seed, streams::CONDITIONED_FORWARD, r);
            let c = run_conditioned(dist, n, dim, cfg.max_attempts, &mut rng)?;
            Ok(ReplicateRecord { rep: r, n, d: dim, seed, conditioned: true, attempts: c.attempts, stats: c.stats })
        } else {
            let mut rng = substream(seed, streams::FORWARD, r);
            let stats = run(dist, n, dim, &mut rng)?;
            Ok(ReplicateRecord { rep: r, n, d: dim, seed, conditioned: false, attempts: 1, stats })
        }
    })
}

pub fn spine(cfg: &RunConfig) -> Result<bool> {
    let seed = cfg.require_seed()?;
    if !cfg.offspring.is_binary() {
        return Err(BrwError::Config("the spine sampler is for binary offspring only".into()));
    }
    let mut w = output(cfg)?;
    for n in cfg.generations()? {
        let mut batch = SpineBatch::new(n, cfg.dim);
        batch.ell = cfg.ell;
        batch.clamp = cfg.clamp;
        write_jsonl(&mut *w, &batch.run(seed, cfg.reps)?)?;
    }
    Ok(true)
}

fn write_field(cfg: &RunConfig, f: &Field, what: &str) -> Result<bool> {
    let mut w = output(cfg)?;
    writeln!(w, "# quantity = {}", what)?;
    w.write_all(cfg.header().as_bytes())?;
    f.write_csv(&mut w)?;
    w.flush()?;
    Ok(true)
}

fn write_scalar(cfg: &RunConfig, v: serde_json::Value) -> Result<bool> {
    let mut w = output(cfg)?;
    serde_json::to_writer_pretty(&mut w, &v).map_err(|e| BrwError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(true)
}

pub fn exact(cfg: &RunConfig, q: Quantity) -> Result<bool> {
    let n = cfg.require_n()?;
    let (dim, dist, clamp) = (cfg.dim, &cfg.offspring, cfg.clamp);
    let name = q.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
    match q {
        Quantity::PField => write_field(cfg, &transition_field(n, dim, clamp)?, &name),
        Quantity::UField => write_field(cfg, &hitting_field(dist, n, dim, clamp)?, &name),
        Quantity::MgfField => write_field(cfg, &mgf_field(dist, n, cfg.theta, dim, clamp)?, &name),
        Quantity::DominatingField => write_field(cfg, &dominating_field(dist, n, cfg.theta, dim)?, &name),
        Quantity::SecondMoment => write_field(cfg, &second_moment_field(dist, n, dim, clamp)?, &name),
        Quantity::VField => {
            let params = SuperSolutionParams::new(4.0 * 15f64.exp());
            write_field(cfg, &supersolution_field(&params, n, dim, clamp)?, &name)
        }
        Quantity::Survival => {
            let s = survival_prob(dist, n);
            write_scalar(cfg, json!({"quantity": name, "offspring": dist.tag(), "n": n, "s_n": s, "n_s_n": n as f64 * s}))
        }
        Quantity::MeanOccupied => {
            let (sum, tail) = mean_occupied(dist, n, dim, clamp)?;
            write_scalar(cfg, json!({"quantity": name, "offspring": dist.tag(), "n": n, "d": dim, "sum_u": sum, "tail_bound": tail}))
        }
        Quantity::MeanGamma => {
            write_scalar(cfg, json!({"quantity": name, "n": n, "d": dim, "mean_gamma": exact_mean_gamma(n, dim)?}))
        }
        Quantity::VarDelta => write_scalar(cfg, json!({"quantity": name, "n": n, "d": dim, "var_delta": exact_var_delta(n, dim)?})),
        Quantity::Pmf => {
            let x = cfg.x.ok_or_else(|| BrwError::Config("pmf needs --x".into()))?;
            let p = pmf_oracle(dist, n, dim, 64)?;
            let mut pmf = p.pmf(x);
            while pmf.len() > 1 && pmf.last() == Some(&0.0) {
                pmf.pop();
            }
            write_scalar(cfg, json!({"quantity": name, "n": n, "d": dim, "x": &x.0[..dim], "pmf": pmf, "truncated_mass": p.truncated_mass()}))
        }
        Quantity::Supersolution => {
            let params = SuperSolutionParams::new(4.0 * 15f64.exp());
            let n0 = search_n0(&params, n.max(3));
            let report = n0.map(|n0| verify_supersolution(&params, n0..=4 * n0));
            write_scalar(cfg, json!({"quantity": name, "max_n0": n, "n0": n0, "report": report}))
        }
    }
}

pub fn conditioned(cfg: &RunConfig) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let n = cfg.require_n()?;
    let x = cfg.x.ok_or_else(|| BrwError::Config("conditioned needs --x".into()))?;
    if !cfg.offspring.is_binary() {
        return Err(BrwError::Config("the conditioned sampler is for binary offspring only".into()));
    }
    let bank = UBank::new(n, cfg.dim)?;
    let target = Target { n, x };
    let rows = sample_conditioned_batch(target, &bank, seed, cfg.reps)?;
    write_jsonl(&mut *output(cfg)?, &rows)?;
    if n <= 12 {
        let pmf = pmf_oracle(&cfg.offspring, n, cfg.dim, 64)?.conditional_pmf(x);
        let cs = chi_square(&histogram(rows.iter().map(|r| r.value)), &pmf)?;
        write_summary(cfg, &json!({"n": n, "x": &x.0[..cfg.dim], "reps": cfg.reps, "chi_square": cs}))?;
    }
    Ok(true)
}

pub fn verify(cfg: &RunConfig) -> Result<bool> {
    let seed = cfg.require_seed()?;
    let names: Vec<String> = if cfg.suite == "all" {
        SUITES.iter().map(|s| s.to_string()).collect()
    } else {
        cfg.suite.split(',').map(|s| s.trim().to_string()).collect()
    };
    for s in &names {
        if !SUITES.contains(&s.as_str()) {
            return Err(BrwError::Config(format!("unknown suite '{}'; expected 'all' or one of {}", s, SUITES.join(", "))));
        }
    }
    let v = Verifier::new(seed);
    let start = Instant::now();
    let mut outcomes = Vec::new();
    for s in &names {
        let over = cfg.budget_secs.is_some_and(|b| start.elapsed().as_secs_f64() >= b);
        let o = if over { Verifier::skipped(s) } else { v.run(s)? };
        eprintln!("[{}] {:>2} {}: {}", verdict(o.pass, o.skipped), o.id, o.name, o.summary);
        outcomes.push(o);
    }
    let mut w = output(cfg)?;
    w.write_all(cfg.header().as_bytes())?;
    writeln!(w, "# sizes = {}", serde_json::to_string(&v.sizes).map_err(|e| BrwError::Io(e.to_string()))?)?;
    let rows: Vec<_> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    write_report_csv(&rows, &mut w)?;
    w.flush()?;
    let partial = outcomes.iter().any(|o| o.skipped);
    let all_pass = outcomes.iter().all(|o| o.pass || o.soft);
    write_summary(cfg, &json!({"seed": seed, "all_pass": all_pass, "partial": partial, "suites": outcomes}))?;
    Ok(all_pass)
}

fn verdict(pass: bool, skipped: bool) -> &'static str {
    match (pass, skipped) {
        (_, true) => "SKIP",
        (true, _) => "PASS",
        _ => "FAIL",
    }
}

pub fn report(cfg: &RunConfig, input: &Path) -> Result<bool> {
    let rows = read_report_csv(File::open(input)?)?;
    let mut tags: Vec<(String, usize, usize)> = Vec::new();
    for r in &rows {
        match tags.iter_mut().find(|t| t.0 == r.tag) {
            Some(t) => {
                t.1 += 1;
                t.2 += usize::from(!r.pass);
            }
            None => tags.push((r.tag.clone(), 1, usize::from(!r.pass))),
        }
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
    let by_tag: Vec<_> = tags.iter().map(|(t, k, f)| json!({"tag": t, "rows": k, "failed": f, "pass": *f == 0})).collect();
    write_scalar(cfg, json!({"rows": rows.len(), "failed_rows": failed, "tags": by_tag, "all_pass": failed.is_empty()}))?;
    Ok(failed.is_empty())
}
