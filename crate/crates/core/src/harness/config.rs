//! Experiment configuration: a flat `key = value` text file.
//!
//! ```text
//! # 20-D ellipsoid, large population
//! algorithm   = stoch-ngd        # det-ngd | stoch-ngd | cma-es
//! dimension   = 20
//! objective   = ellipsoid        # ellipsoid | file
//! a_file      = a.txt            # required when objective = file
//! transform   = identity         # identity | power:<p> | log1p
//! n           = d^3              # integer | sqrt-d | d | d^1.5 | d^2 | d^2.5 | d^3
//! c_c         = 0.1              # number | matched-n-d (0.14) | matched-n-d2 (0.75)
//! alpha       = 0.1              # sets alpha_m and alpha_c (det-ngd)
//! m0          = zeros            # zeros | constant:<c> | <vector file>
//! c0          = identity         # identity | <matrix file>
//! trials      = 50
//! base_seed   = 0
//! target_j    = 1e-10
//! max_iters   = 100000
//! emit_theory = true
//! vhat_exponent = volume-pow-2-over-d   # | volume
//! n_grid      = 100, 1000, 10000, 100000  # consistency reports only
//! ```
//!
//! Blank lines and `#` comments are ignored, each key may appear once, and
//! relative file paths are resolved against the config file's directory.
//! Matrix files hold `d` whitespace-separated rows of `d` numbers; vector
//! files hold `d` numbers in any whitespace layout.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::GaussianParams;
use crate::objectives::{build_ellipsoid, QuadraticComposite, Transform};
use crate::stoch_ngd::VhatExponent;
use crate::trace::StopCriteria;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    DetNgd,
    StochNgd,
    CmaEs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DetNgd => "det-ngd",
            Algorithm::StochNgd => "stoch-ngd",
            Algorithm::CmaEs => "cma-es",
        }
    }
}

/// Sample size, either literal or a power of the dimension rounded up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleSize {
    Fixed(usize),
    PowerOfD(f64),
}

impl SampleSize {
    pub fn parse(s: &str) -> Option<Self> {
        let p = match s {
            "sqrt-d" => 0.5,
            "d" => 1.0,
            "d^1.5" => 1.5,
            "d^2" => 2.0,
            "d^2.5" => 2.5,
            "d^3" => 3.0,
            _ => return s.parse().ok().map(SampleSize::Fixed),
        };
        Some(SampleSize::PowerOfD(p))
    }

    /// `⌈d^p⌉`, snapping to the nearest integer when `d^p` is one up to
    /// round-off (so `16^{1/2}` is 4, not 5).
    pub fn resolve(self, d: usize) -> usize {
        match self {
            SampleSize::Fixed(n) => n,
            SampleSize::PowerOfD(p) => {
                let x = (d as f64).powf(p);
                let r = x.round();
                if (x - r).abs() <= 1e-9 * r.max(1.0) {
                    r as usize
                } else {
                    x.ceil() as usize
                }
            }
        }
    }
}

/// Stochastic-NGD `c_C` values matched to the rank-μ CMA-ES adaptation speed
/// on the 20-D ellipsoid, for `n = d` and `n = d²`.
pub const C_C_MATCHED_N_D: f64 = 0.14;
pub const C_C_MATCHED_N_D2: f64 = 0.75;

/// A validated configuration with every default filled and every file loaded.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub dimension: usize,
    pub objective: QuadraticComposite,
    /// Resolved sample size; `None` for the deterministic algorithm.
    pub n: Option<usize>,
    pub c_c: f64,
    pub alpha_m: f64,
    pub alpha_c: f64,
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
    pub trials: usize,
    pub base_seed: u64,
    pub stop: StopCriteria,
    pub emit_theory: bool,
    pub vhat_exponent: VhatExponent,
    pub n_grid: Vec<usize>,
}

impl ExperimentConfig {
    /// Defaults for `algorithm` on the `d`-dimensional ellipsoid.
    pub fn ellipsoid(algorithm: Algorithm, d: usize, n: Option<usize>) -> Result<Self> {
        Ok(Self {
            algorithm,
            dimension: d,
            objective: build_ellipsoid(d)?,
            n,
            c_c: 0.1,
            alpha_m: 0.1,
            alpha_c: 0.1,
            m0: DVector::zeros(d),
            c0: DMatrix::identity(d, d),
            trials: 50,
            base_seed: 0,
            stop: StopCriteria::default(),
            emit_theory: false,
            vhat_exponent: VhatExponent::default(),
            n_grid: vec![100, 1_000, 10_000, 100_000],
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        self.objective.a()
    }

    pub fn initial_params(&self) -> Result<GaussianParams> {
        GaussianParams::new(self.m0.clone(), self.c0.clone())
    }

    /// `n`, or an error naming the algorithm that needed it.
    pub fn sample_size(&self) -> Result<usize> {
        self.n.ok_or_else(|| {
            Error::invalid(format!("{} needs a sample size `n`", self.algorithm.name()))
        })
    }

    /// Checks the cross-field invariants; [`resolve_config`] calls this.
    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if d == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if self.a().nrows() != d || self.m0.len() != d || self.c0.shape() != (d, d) {
            return Err(Error::invalid("A, m0 and C0 must all match the dimension"));
        }
        self.initial_params()?;
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        match (self.algorithm, self.n) {
            (Algorithm::StochNgd, Some(n)) if n < 2 => {
                return Err(Error::invalid(format!("stoch-ngd needs n >= 2, got {n}")))
            }
            (Algorithm::CmaEs, Some(n)) if n < 4 => {
                return Err(Error::invalid(format!("cma-es needs n >= 4, got {n}")))
            }
            (Algorithm::StochNgd | Algorithm::CmaEs, None) => {
                self.sample_size()?;
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
}

fn config_err(key: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

const KEYS: &[&str] = &[
    "algorithm",
    "dimension",
    "objective",
    "a_file",
    "transform",
    "n",
    "c_c",
    "alpha",
    "alpha_m",
    "alpha_c",
    "m0",
    "c0",
    "trials",
    "base_seed",
    "target_j",
    "max_iters",
    "emit_theory",
    "vhat_exponent",
    "n_grid",
];

fn parse_entries(text: &str) -> Result<HashMap<String, Entry>> {
    let mut entries = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(config_err(content, line, "expected `key = value`"));
        };
        let key = key.trim();
        let value = value.trim();
        if !KEYS.contains(&key) {
            return Err(config_err(key, line, "unknown key"));
        }
        if value.is_empty() {
            return Err(config_err(key, line, "missing value"));
        }
        if let Some(prev) = entries.get(key) {
            let prev: &Entry = prev;
            return Err(config_err(
                key,
                line,
                format!("duplicate key (first set on line {})", prev.line),
            ));
        }
        entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(entries)
}

struct Fields {
    entries: HashMap<String, Entry>,
    base_dir: PathBuf,
}

impl Fields {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.entries.get(key).map(|e| (e.value.as_str(), e.line))
    }

    fn parse<T>(
        &self,
        key: &str,
        what: &str,
        f: impl FnOnce(&str) -> Option<T>,
    ) -> Result<Option<(T, usize)>> {
        match self.get(key) {
            None => Ok(None),
            Some((v, line)) => f(v)
                .map(|t| Some((t, line)))
                .ok_or_else(|| config_err(key, line, format!("expected {what}, got `{v}`"))),
        }
    }

    fn number(&self, key: &str) -> Result<Option<(f64, usize)>> {
        self.parse(key, "a finite number", |v| {
            v.parse::<f64>().ok().filter(|x| x.is_finite())
        })
    }

    fn path(&self, value: &str) -> PathBuf {
        let p = Path::new(value);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn line(&self, key: &str) -> usize {
        self.get(key).map_or(0, |(_, l)| l)
    }
}

fn read_numbers(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::invalid(format!("bad number `{tok}`")))
                })
                .collect()
        })
        .collect()
}

/// Reads a `d × d` whitespace-separated matrix.
pub fn read_matrix_file(path: &Path, d: usize) -> Result<DMatrix<f64>> {
    let rows = read_numbers(path)?;
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid(format!(
            "{} must hold {d} rows of {d} numbers",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

/// Reads `d` whitespace-separated numbers.
pub fn read_vector_file(path: &Path, d: usize) -> Result<DVector<f64>> {
    let values: Vec<f64> = read_numbers(path)?.into_iter().flatten().collect();
    if values.len() != d {
        return Err(Error::invalid(format!(
            "{} must hold {d} numbers, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(DVector::from_vec(values))
}

fn parse_transform(v: &str) -> Option<Transform> {
    match v {
        "identity" => Some(Transform::Identity),
        "log1p" => Some(Transform::Log1p),
        _ => {
            let p: f64 = v.strip_prefix("power:")?.trim().parse().ok()?;
            (p.is_finite() && p > 0.0).then_some(Transform::Power(p))
        }
    }
}

/// Reads, defaults and validates the configuration at `path`.
pub fn resolve_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &base_dir)
}

/// As [`resolve_config`] for in-memory text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let fields = Fields {
        entries: parse_entries(text)?,
        base_dir: base_dir.to_path_buf(),
    };

    let algorithm = fields
        .parse("algorithm", "det-ngd, stoch-ngd or cma-es", |v| match v {
            "det-ngd" => Some(Algorithm::DetNgd),
            "stoch-ngd" => Some(Algorithm::StochNgd),
            "cma-es" => Some(Algorithm::CmaEs),
            _ => None,
        })?
        .map_or(Algorithm::StochNgd, |(a, _)| a);

    let (d, _) = fields
        .parse("dimension", "a positive integer", |v| {
            v.parse::<usize>().ok().filter(|&d| d >= 1)
        })?
        .ok_or_else(|| config_err("dimension", 0, "required key is missing"))?;

    let a = match fields.get("objective") {
        None | Some(("ellipsoid", _)) => {
            if let Some((_, line)) = fields.get("a_file") {
                return Err(config_err("a_file", line, "only used with `objective = file`"));
            }
            build_ellipsoid(d)?.a().clone()
        }
        Some(("file", line)) => {
            let (file, fline) = fields
                .get("a_file")
                .ok_or_else(|| config_err("a_file", line, "required when `objective = file`"))?;
            read_matrix_file(&fields.path(file), d)
                .map_err(|e| config_err("a_file", fline, e.to_string()))?
        }
        Some((v, line)) => {
            return Err(config_err("objective", line, format!("expected ellipsoid or file, got `{v}`")))
        }
    };

    let transform = fields
        .parse("transform", "identity, log1p or power:<p> with p > 0", parse_transform)?
        .map_or(Transform::Identity, |(t, _)| t);
    let objective = QuadraticComposite::new(a, transform).map_err(|e| {
        let key = if fields.get("a_file").is_some() { "a_file" } else { "objective" };
        config_err(key, fields.line(key), e.to_string())
    })?;

    let n = fields
        .parse("n", "an integer or sqrt-d, d, d^1.5, d^2, d^2.5, d^3", SampleSize::parse)?
        .map(|(s, line)| (s.resolve(d), line));
    if let Some((n, line)) = n {
        let min = match algorithm {
            Algorithm::CmaEs => 4,
            Algorithm::StochNgd => 2,
            Algorithm::DetNgd => 0,
        };
        if n < min {
            return Err(config_err(
                "n",
                line,
                format!("{} needs n >= {min}, resolved to {n}", algorithm.name()),
            ));
        }
    } else if algorithm != Algorithm::DetNgd {
        return Err(config_err("n", 0, format!("required for {}", algorithm.name())));
    }

    let c_c = match fields.get("c_c") {
        None => 0.1,
        Some(("matched-n-d", _)) => C_C_MATCHED_N_D,
        Some(("matched-n-d2", _)) => C_C_MATCHED_N_D2,
        Some(_) => {
            let (c, line) = fields.number("c_c")?.expect("present");
            if !(c > 0.0 && c <= 1.0) {
                return Err(config_err("c_c", line, format!("must lie in (0, 1], got {c}")));
            }
            c
        }
    };

    let alpha = fields.number("alpha")?;
    let alpha_m = fields.number("alpha_m")?;
    let alpha_c = fields.number("alpha_c")?;
    if let (Some((_, line)), true) = (alpha, alpha_m.is_some() || alpha_c.is_some()) {
        return Err(config_err("alpha", line, "give either alpha or alpha_m/alpha_c, not both"));
    }
    let alpha_m = alpha_m.or(alpha);
    let alpha_c = alpha_c.or(alpha);
    let key_m = if fields.get("alpha_m").is_some() { "alpha_m" } else { "alpha" };
    let key_c = if fields.get("alpha_c").is_some() { "alpha_c" } else { "alpha" };
    if let Some((a, line)) = alpha_m {
        if !(a > 0.0 && a <= 1.0) {
            return Err(config_err(key_m, line, format!("alpha_m must lie in (0, 1], got {a}")));
        }
    }
    if let Some((a, line)) = alpha_c {
        if !(a > 0.0 && a <= 0.5) {
            return Err(config_err(key_c, line, format!("alpha_c must lie in (0, 1/2], got {a}")));
        }
    }

    let m0 = match fields.get("m0") {
        None | Some(("zeros", _)) => DVector::zeros(d),
        Some((v, line)) => match v.strip_prefix("constant:") {
            Some(c) => {
                let c: f64 = c
                    .trim()
                    .parse()
                    .ok()
                    .filter(|c: &f64| c.is_finite())
                    .ok_or_else(|| config_err("m0", line, format!("bad constant in `{v}`")))?;
                DVector::from_element(d, c)
            }
            None => read_vector_file(&fields.path(v), d)
                .map_err(|e| config_err("m0", line, e.to_string()))?,
        },
    };

    let c0 = match fields.get("c0") {
        None | Some(("identity", _)) => DMatrix::identity(d, d),
        Some((v, line)) => read_matrix_file(&fields.path(v), d)
            .map_err(|e| config_err("c0", line, e.to_string()))?,
    };
    if let Err(e) = GaussianParams::new(m0.clone(), c0.clone()) {
        return Err(config_err("c0", fields.line("c0"), e.to_string()));
    }

    let trials = fields
        .parse("trials", "a positive integer", |v| {
            v.parse::<usize>().ok().filter(|&t| t >= 1)
        })?
        .map_or(50, |(t, _)| t);
    let base_seed = fields
        .parse("base_seed", "an unsigned 64-bit integer", |v| v.parse::<u64>().ok())?
        .map_or(0, |(s, _)| s);
    let target_j = match fields.number("target_j")? {
        None => 1e-10,
        Some((t, line)) if t < 0.0 => {
            return Err(config_err("target_j", line, "must be non-negative"))
        }
        Some((t, _)) => t,
    };
    let max_iters = fields
        .parse("max_iters", "a positive integer", |v| {
            v.parse::<usize>().ok().filter(|&m| m >= 1)
        })?
        .map_or(100_000, |(m, _)| m);
    let emit_theory = fields
        .parse("emit_theory", "true or false", |v| v.parse::<bool>().ok())?
        .is_some_and(|(b, _)| b);
    let vhat_exponent = fields
        .parse("vhat_exponent", "volume or volume-pow-2-over-d", |v| match v {
            "volume" => Some(VhatExponent::Volume),
            "volume-pow-2-over-d" => Some(VhatExponent::VolumePow2OverD),
            _ => None,
        })?
        .map_or(VhatExponent::default(), |(e, _)| e);
    let n_grid = fields
        .parse("n_grid", "a comma-separated list of integers >= 2", |v| {
            v.split(',')
                .map(|s| s.trim().parse::<usize>().ok().filter(|&n| n >= 2))
                .collect::<Option<Vec<_>>>()
                .filter(|g| !g.is_empty())
        })?
        .map_or_else(|| vec![100, 1_000, 10_000, 100_000], |(g, _)| g);

    let cfg = ExperimentConfig {
        algorithm,
        dimension: d,
        objective,
        n: n.map(|(n, _)| n),
        c_c,
        alpha_m: alpha_m.map_or(0.1, |(a, _)| a),
        alpha_c: alpha_c.map_or(0.1, |(a, _)| a),
        m0,
        c0,
        trials,
        base_seed,
        stop: StopCriteria {
            target_j,
            max_iters,
        },
        emit_theory,
        vhat_exponent,
        n_grid,
    };
    cfg.validate()?;
    Ok(cfg)
}
