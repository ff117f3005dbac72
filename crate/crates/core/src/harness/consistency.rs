use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{nat_grad_quadratic, GaussianParams, NaturalGradient};
use crate::rng::RngStream;
use crate::stoch_ngd::{estimate_gradient, sample_population};

use super::config::ExperimentConfig;
use super::csv_out::fmt_f64;

/// Which components enter the cosine similarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Compared {
    /// `(δm, vec δC)` stacked.
    Stacked,
    /// Only `δC`; used when the exact `δm` is zero and its angle undefined.
    CovOnly,
}

impl Compared {
    pub fn name(self) -> &'static str {
        match self {
            Compared::Stacked => "stacked",
            Compared::CovOnly => "cov-only",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub compared: Compared,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn components(g: &NaturalGradient, compared: Compared) -> Vec<f64> {
    match compared {
        Compared::Stacked => g.stacked().as_slice().to_vec(),
        Compared::CovOnly => g.delta_cov.as_slice().to_vec(),
    }
}

/// Linear interpolation between order statistics (`q ∈ [0, 1]`, sorted input).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cosine similarity between the Monte-Carlo estimate at `params` (one
/// population of size `n` drawn with `seed`) and the closed-form direction.
pub fn gradient_cosine(
    cfg: &ExperimentConfig,
    params: &GaussianParams,
    exact: &NaturalGradient,
    compared: Compared,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(seed);
    let mut pop = sample_population(params, n, &mut rng, &cfg.objective)?;
    pop.assign_cost_weights(cfg.vhat_exponent)?;
    let est = estimate_gradient(&pop, params)?;
    Ok(cosine(&components(&est, compared), &components(exact, compared)))
}

/// For each `n` in `cfg.n_grid`, statistics over `cfg.trials` seeds
/// (`base_seed + k`) of the cosine similarity at `(m0, C0)`.
pub fn consistency_report(cfg: &ExperimentConfig) -> Result<Vec<ConsistencyRow>> {
    if cfg.n_grid.iter().any(|&n| n < 2) {
        return Err(Error::invalid("every n in the grid must be at least 2"));
    }
    let params = cfg.initial_params()?;
    let exact = nat_grad_quadratic(&params, cfg.a())?;
    if exact.delta_cov.iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("closed-form natural gradient is zero"));
    }
    let compared = if exact.delta_mean.iter().all(|&v| v == 0.0) {
        Compared::CovOnly
    } else {
        Compared::Stacked
    };
    cfg.n_grid
        .iter()
        .map(|&n| {
            let mut cos = (0..cfg.trials)
                .into_par_iter()
                .map(|k| {
                    let seed = cfg.base_seed.wrapping_add(k as u64);
                    gradient_cosine(cfg, &params, &exact, compared, n, seed)
                })
                .collect::<Result<Vec<f64>>>()?;
            let len = cos.len() as f64;
            let mean = cos.iter().sum::<f64>() / len;
            let std = (cos.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / len).sqrt();
            cos.sort_by(f64::total_cmp);
            Ok(ConsistencyRow {
                n,
                seeds: cos.len(),
                mean,
                std,
                min: cos[0],
                q25: quantile(&cos, 0.25),
                median: quantile(&cos, 0.5),
                q75: quantile(&cos, 0.75),
                max: cos[cos.len() - 1],
                compared,
            })
        })
        .collect()
}

pub fn write_consistency_csv<W: Write>(rows: &[ConsistencyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Internal(format!("csv: {e}"));
    w.write_record([
        "n", "seeds", "mean_cos", "std_cos", "min_cos", "q25_cos", "median_cos", "q75_cos",
        "max_cos", "compared",
    ])
    .map_err(io)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.seeds.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.std),
            fmt_f64(r.min),
            fmt_f64(r.q25),
            fmt_f64(r.median),
            fmt_f64(r.q75),
            fmt_f64(r.max),
            r.compared.name().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: Default::default(),
        source: e,
    })
}

pub fn emit_consistency_csv(rows: &[ConsistencyRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_consistency_csv(rows, std::io::BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}
