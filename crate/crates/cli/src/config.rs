//! Flat `key = value` run configuration. Command-line flags override file
//! entries; every resolved value is echoed into report headers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use brwlab::{BrwError, ClampPolicy, OffspringDist, Result, Site};

/// Accepted keys with a one-line description each.
pub const SCHEMA: &[(&str, &str)] = &[
    ("dim", "lattice dimension, 1..=3 (default 2)"),
    ("n", "generation count"),
    ("n_grid", "comma-separated strictly increasing generation counts"),
    ("offspring", "binary | geometric:<m> | zeta:<alpha> | table:<l>=<q>,... (default binary)"),
    ("reps", "replicate count (default 1000)"),
    ("seed", "64-bit master seed; required by stochastic commands"),
    ("conditioned", "true to condition forward runs on survival (default false)"),
    ("clamp", "exact | scaled:<c> | tail:<eps> | radius:<r> (default scaled:6)"),
    ("out", "primary output path (default stdout)"),
    ("summary", "sidecar JSON path for timings and summaries"),
    ("budget_secs", "wall-clock budget for verify; later suites are skipped"),
    ("max_attempts", "rejection budget per conditioned run (default 1000000)"),
    ("theta", "exponent for mgf and dominating fields (default 0)"),
    ("ell", "ball radius for spine ball counts"),
    ("x", "target site, comma-separated coordinates"),
    ("suite", "verify suite name or 'all' (default all)"),
];

pub fn schema_text() -> String {
    let mut s = String::from("config keys (file lines 'key = value', '#' comments):\n");
    for (k, d) in SCHEMA {
        let _ = writeln!(s, "  {:<13} {}", k, d);
    }
    s
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub dim: usize,
    pub n: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub offspring: OffspringDist,
    pub reps: u64,
    pub seed: Option<u64>,
    pub conditioned: bool,
    pub clamp: ClampPolicy,
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub budget_secs: Option<f64>,
    pub max_attempts: u64,
    pub theta: f64,
    pub ell: Option<f64>,
    pub x: Option<Site>,
    pub suite: String,
    /// Resolved `key = value` pairs, for headers.
    pub entries: BTreeMap<String, String>,
}

fn usage(msg: String) -> BrwError {
    BrwError::Config(format!("{}\n{}", msg, schema_text()))
}

/// Parses a config file body into raw entries.
pub fn parse_entries(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| usage(format!("line {}: expected 'key = value'", i + 1)))?;
        let k = k.trim().replace('-', "_");
        if !SCHEMA.iter().any(|(s, _)| *s == k) {
            return Err(usage(format!("line {}: unknown key '{}'", i + 1, k)));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

pub fn load_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {}", path.display(), e)))?;
    parse_entries(&text)
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| usage(format!("bad value '{}' for '{}'", v, key)))
}

fn parse_site(v: &str, dim: usize) -> Result<Site> {
    let coords: Vec<i32> = v.split(',').map(|c| parse("x", c.trim())).collect::<Result<_>>()?;
    if coords.len() != dim {
        return Err(usage(format!("x has {} coordinates, dim is {}", coords.len(), dim)));
    }
    Ok(Site::new(&coords))
}

impl RunConfig {
    /// Builds a config from raw entries, filling defaults.
    pub fn resolve(mut entries: BTreeMap<String, String>) -> Result<Self> {
        for k in entries.keys() {
            if !SCHEMA.iter().any(|(s, _)| s == k) {
                return Err(usage(format!("unknown key '{}'", k)));
            }
        }
        let defaults = [
            ("dim", "2"),
            ("offspring", "binary"),
            ("reps", "1000"),
            ("conditioned", "false"),
            ("clamp", "scaled:6"),
            ("max_attempts", "1000000"),
            ("theta", "0"),
            ("suite", "all"),
        ];
        for (k, v) in defaults {
            entries.entry(k.into()).or_insert_with(|| v.into());
        }
        let get = |k: &str| entries.get(k).map(String::as_str);
        let dim: usize = parse("dim", get("dim").unwrap())?;
        brwlab::lattice::check_dim(dim).map_err(|e| usage(e.to_string()))?;
        let n = get("n").map(|v| parse("n", v)).transpose()?;
        let n_grid = match get("n_grid") {
            Some(v) => {
                let g: Vec<usize> = v.split(',').map(|t| parse("n_grid", t.trim())).collect::<Result<_>>()?;
                if g.is_empty() || g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(usage("n_grid must be strictly increasing".into()));
                }
                Some(g)
            }
            None => None,
        };
        let offspring: OffspringDist = get("offspring").unwrap().parse().map_err(|e: BrwError| usage(e.to_string()))?;
        let reps: u64 = parse("reps", get("reps").unwrap())?;
        let seed = get("seed").map(|v| parse("seed", v)).transpose()?;
        let conditioned: bool = parse("conditioned", get("conditioned").unwrap())?;
        let clamp: ClampPolicy = get("clamp").unwrap().parse().map_err(|e: BrwError| usage(e.to_string()))?;
        let budget_secs = get("budget_secs").map(|v| parse("budget_secs", v)).transpose()?;
        let max_attempts: u64 = parse("max_attempts", get("max_attempts").unwrap())?;
        let theta: f64 = parse("theta", get("theta").unwrap())?;
        let ell = get("ell").map(|v| parse("ell", v)).transpose()?;
        let x = get("x").map(|v| parse_site(v, dim)).transpose()?;
        Ok(RunConfig {
            dim,
            n,
            n_grid,
            offspring,
            reps,
            seed,
            conditioned,
            clamp,
            out: get("out").map(PathBuf::from),
            summary: get("summary").map(PathBuf::from),
            budget_secs,
            max_attempts,
            theta,
            ell,
            x,
            suite: get("suite").unwrap().to_string(),
            entries,
        })
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| usage("this command is stochastic and needs a seed".into()))
    }

    pub fn require_n(&self) -> Result<usize> {
        self.n.ok_or_else(|| usage("missing n".into()))
    }

    /// `n_grid` if given, else `[n]`.
    pub fn generations(&self) -> Result<Vec<usize>> {
        match (&self.n_grid, self.n) {
            (Some(g), _) => Ok(g.clone()),
            (None, Some(n)) => Ok(vec![n]),
            (None, None) => Err(usage("missing n or n_grid".into())),
        }
    }

    /// `# key = value` lines. Output paths are left out so replays compare equal.
    pub fn header(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            if k != "out" && k != "summary" {
                let _ = writeln!(s, "# {} = {}", k, v);
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_defaults() {
        let e = parse_entries("# comment\nn = 8\nseed=42 # trailing\nn-grid = 4, 8, 16\n").unwrap();
        let c = RunConfig::resolve(e).unwrap();
        assert_eq!(c.n, Some(8));
        assert_eq!(c.seed, Some(42));
        assert_eq!(c.n_grid, Some(vec![4, 8, 16]));
        assert_eq!(c.dim, 2);
        assert_eq!(c.clamp, ClampPolicy::Scaled(6.0));
        assert!(c.header().contains("# reps = 1000\n"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_entries("colour = red").is_err());
        assert!(parse_entries("n 8").is_err());
        let grid = parse_entries("n_grid = 8, 8").unwrap();
        assert!(RunConfig::resolve(grid).is_err());
        let site = parse_entries("x = 1,0,0").unwrap();
        assert!(RunConfig::resolve(site).is_err());
        let c = RunConfig::resolve(BTreeMap::new()).unwrap();
        assert!(c.require_seed().is_err());
    }
}
