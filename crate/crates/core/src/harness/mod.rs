//! Batch evaluation over a synthetic dataset directory and the `lpr`
//! command-line front end.

mod cli;

pub use cli::cli_main;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::admm::{constraint_residual, solve, AdmmConfig};
use crate::error::{Error, Result};
use crate::imgcore::{psnr, psnr_joint, read_limg, Image, Mask, DEFAULT_PEAK};
use crate::lprnet::{encode_weights, forward, load_weights, NetWeights};
use crate::synthgen::{read_dataset_manifest, read_sample, Sample};

#[derive(Clone, Debug)]
pub enum Method {
    Classical(AdmmConfig),
    Unrolled(NetWeights),
}

impl Method {
    /// Classical: the solver configuration as JSON. Unrolled: SHA-256 of the
    /// encoded weight file.
    pub fn descriptor(&self) -> String {
        match self {
            Method::Classical(cfg) => {
                format!(
                    "classical {}",
                    serde_json::to_string(cfg).expect("config serializes")
                )
            }
            Method::Unrolled(net) => {
                let digest = encode_weights(net)
                    .map(|b| Sha256::digest(&b))
                    .map(|d| {
                        d.iter().fold(String::new(), |mut s, b| {
                            let _ = write!(s, "{b:02x}");
                            s
                        })
                    })
                    .unwrap_or_else(|_| "invalid".into());
                format!("unrolled sha256:{digest}")
            }
        }
    }

    pub fn run(&self, f: &Image, mask: &Mask) -> Result<(Image, Image)> {
        match self {
            Method::Classical(cfg) => {
                let d = solve(f, mask, cfg)?;
                Ok((d.u, d.v))
            }
            Method::Unrolled(net) => {
                let out = forward(f, mask, net)?;
                Ok((out.u, out.v))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub index: usize,
    pub psnr_u: f64,
    pub psnr_v: f64,
    pub psnr_joint: f64,
    pub res_constraint: f64,
    pub ms: f64,
}

impl EvalRow {
    fn values(&self) -> [f64; 5] {
        [
            self.psnr_u,
            self.psnr_v,
            self.psnr_joint,
            self.res_constraint,
            self.ms,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    fn of(xs: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let n = xs.clone().count();
        if n == 0 {
            return None;
        }
        let mean = xs.clone().sum::<f64>() / n as f64;
        let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        Some(Self {
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregates {
    pub psnr_u: Summary,
    pub psnr_v: Summary,
    pub psnr_joint: Summary,
    pub res_constraint: Summary,
    pub ms: Summary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub rows: Vec<EvalRow>,
}

pub const CSV_HEADER: &str = "index,psnr_u,psnr_v,psnr_joint,res_constraint,ms";

impl EvalReport {
    /// Column means and deviations; `None` for an empty report.
    pub fn aggregates(&self) -> Option<Aggregates> {
        let col = |k: usize| Summary::of(self.rows.iter().map(move |r| r.values()[k]));
        Some(Aggregates {
            psnr_u: col(0)?,
            psnr_v: col(1)?,
            psnr_joint: col(2)?,
            res_constraint: col(3)?,
            ms: col(4)?,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{:.3}",
                r.index, r.psnr_u, r.psnr_v, r.psnr_joint, r.res_constraint, r.ms
            );
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("method: {}\n", self.method);
        let _ = writeln!(
            out,
            "{:>6} {:>10} {:>10} {:>10} {:>12} {:>10}",
            "index", "psnr_u", "psnr_v", "joint", "res_c", "ms"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>6} {:>10.3} {:>10.3} {:>10.3} {:>12.3e} {:>10.1}",
                r.index, r.psnr_u, r.psnr_v, r.psnr_joint, r.res_constraint, r.ms
            );
        }
        match self.aggregates() {
            None => out.push_str("no samples; means absent\n"),
            Some(a) => {
                let _ = writeln!(
                    out,
                    "{:>6} {:>10.3} {:>10.3} {:>10.3} {:>12.3e} {:>10.1}",
                    "mean",
                    a.psnr_u.mean,
                    a.psnr_v.mean,
                    a.psnr_joint.mean,
                    a.res_constraint.mean,
                    a.ms.mean
                );
                let _ = writeln!(
                    out,
                    "{:>6} {:>10.3} {:>10.3} {:>10.3} {:>12.3e} {:>10.1}",
                    "std",
                    a.psnr_u.std,
                    a.psnr_v.std,
                    a.psnr_joint.std,
                    a.res_constraint.std,
                    a.ms.std
                );
            }
        }
        out
    }
}

pub fn evaluate_sample(method: &Method, index: usize, s: &Sample) -> Result<EvalRow> {
    let start = Instant::now();
    let (u, v) = method.run(&s.f, &s.mask)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(EvalRow {
        index,
        psnr_u: psnr(&u, &s.u_gt, DEFAULT_PEAK)?,
        psnr_v: psnr(&v, &s.v_gt, DEFAULT_PEAK)?,
        psnr_joint: psnr_joint(&u, &v, &s.u_gt, &s.v_gt, DEFAULT_PEAK)?,
        res_constraint: constraint_residual(&u, &v, &s.f, &s.mask),
        ms,
    })
}

fn with_index<T>(index: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Sample { .. } => e,
        e => Error::Sample {
            index,
            source: Box::new(e),
        },
    })
}

/// Runs `method` on every sample of the dataset at `root`. Samples are
/// processed in parallel; rows are ordered by index.
pub fn evaluate(method: &Method, root: &Path) -> Result<EvalReport> {
    let manifest = read_dataset_manifest(root)?;
    let rows = (0..manifest.count)
        .into_par_iter()
        .map(|i| {
            let s = read_sample(root, &manifest, i)?;
            with_index(i, evaluate_sample(method, i, &s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        method: method.descriptor(),
        rows,
    })
}

/// Grid over one classical parameter: `name=lo:hi:steps`, inclusive and
/// evenly spaced.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Mu,
    A,
}

impl std::str::FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad =
            || Error::InvalidParameter(format!("sweep must look like mu=lo:hi:steps, got {s:?}"));
        let (name, range) = s.split_once('=').ok_or_else(bad)?;
        let param = match name.trim() {
            "mu" => SweepParam::Mu,
            "a" => SweepParam::A,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown sweep parameter {other:?} (expected mu or a)"
                )))
            }
        };
        let parts: Vec<&str> = range.split(':').collect();
        let [lo, hi, steps] = parts[..] else {
            return Err(bad());
        };
        let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
        let steps: usize = steps.trim().parse().map_err(|_| bad())?;
        if steps == 0 || !lo.is_finite() || !hi.is_finite() {
            return Err(bad());
        }
        let values = if steps == 1 {
            vec![lo]
        } else {
            (0..steps)
                .map(|k| lo + (hi - lo) * k as f64 / (steps - 1) as f64)
                .collect()
        };
        Ok(Sweep { param, values })
    }
}

impl Sweep {
    pub fn apply(&self, base: &AdmmConfig, value: f64) -> AdmmConfig {
        let mut cfg = *base;
        match self.param {
            SweepParam::Mu => cfg.mu = value,
            SweepParam::A => cfg.a = value,
        }
        cfg
    }
}

/// Per-image tuning: for each sample, the row with the best joint PSNR over
/// the grid, together with the chosen value.
pub fn evaluate_sweep(
    base: &AdmmConfig,
    sweep: &Sweep,
    root: &Path,
) -> Result<(EvalReport, Vec<f64>)> {
    let configs: Vec<AdmmConfig> = sweep.values.iter().map(|&x| sweep.apply(base, x)).collect();
    for c in &configs {
        c.validate()?;
    }
    let manifest = read_dataset_manifest(root)?;
    let best = (0..manifest.count)
        .into_par_iter()
        .map(|i| {
            let s = read_sample(root, &manifest, i)?;
            let mut best: Option<(EvalRow, f64)> = None;
            for (cfg, &x) in configs.iter().zip(&sweep.values) {
                let row = with_index(i, evaluate_sample(&Method::Classical(*cfg), i, &s))?;
                if best.is_none_or(|(b, _)| row.psnr_joint > b.psnr_joint) {
                    best = Some((row, x));
                }
            }
            Ok(best.expect("non-empty grid"))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, chosen) = best.into_iter().unzip();
    Ok((
        EvalReport {
            method: format!(
                "{} sweep {:?} over {:?}",
                Method::Classical(*base).descriptor(),
                sweep.param,
                sweep.values
            ),
            rows,
        },
        chosen,
    ))
}

/// Files of a cross-component fixture bundle.
pub const FIXTURE_FILES: [&str; 5] = [
    "weights.lprnet",
    "f.limg",
    "mask.limg",
    "u_out.limg",
    "v_out.limg",
];

/// Re-runs the forward pass on a fixture bundle and returns the largest
/// absolute difference to the stored outputs.
pub fn check_fixture(dir: &Path) -> Result<f64> {
    let net = load_weights(dir.join(FIXTURE_FILES[0]))?;
    let f = read_limg(dir.join(FIXTURE_FILES[1]))?;
    let mask = Mask::from_image(&read_limg(dir.join(FIXTURE_FILES[2]))?)?;
    let u_ref = read_limg(dir.join(FIXTURE_FILES[3]))?;
    let v_ref = read_limg(dir.join(FIXTURE_FILES[4]))?;
    let out = forward(&f, &mask, &net)?;
    u_ref.ensure_same_dims(&out.u)?;
    v_ref.ensure_same_dims(&out.v)?;
    Ok(out.u.max_abs_diff(&u_ref).max(out.v.max_abs_diff(&v_ref)))
}

/// Writes a fixture bundle from this implementation's own forward pass.
pub fn write_fixture(dir: &Path, net: &NetWeights, f: &Image, mask: &Mask) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let out = forward(f, mask, net)?;
    crate::lprnet::save_weights(dir.join(FIXTURE_FILES[0]), net)?;
    for (name, img) in [
        (FIXTURE_FILES[1], f),
        (FIXTURE_FILES[2], &mask.to_image()),
        (FIXTURE_FILES[3], &out.u),
        (FIXTURE_FILES[4], &out.v),
    ] {
        crate::imgcore::write_limg(dir.join(name), img)?;
    }
    Ok(())
}
