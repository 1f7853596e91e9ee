use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::{check_fixture, evaluate, evaluate_sweep, EvalReport, Method, Sweep};
use crate::admm::{solve, AdmmConfig};
use crate::error::{Error, Result};
use crate::imgcore::{atomic_write, atomic_write_all, encode_for_path, read_image, Image, Mask};
use crate::lprnet::{
    forward, load_weights, read_manifest, save_weights, NetConfig, NetWeights, ParamSet,
};
use crate::operators::PatchConfig;
use crate::synthgen::{gen_dataset, write_dataset, DatasetManifest, GenParams, MaskKind};

#[derive(Parser, Debug)]
#[command(
    name = "lpr",
    version,
    about = "Low patch rank structure-texture decomposition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenDataset(GenArgs),
    /// Decompose one image with the classical ADMM solver.
    Decompose(DecomposeArgs),
    /// Decompose one image with an unrolled network.
    Infer(InferArgs),
    /// Evaluate a method over a dataset directory.
    Evaluate(EvaluateArgs),
    /// Print the manifest of a weight file.
    InspectWeights { path: PathBuf },
    /// Write untrained weights (every block at its initial values).
    InitWeights(InitArgs),
    /// Compare a fixture bundle's stored outputs with a fresh forward pass.
    CheckFixture {
        dir: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    n_shapes: usize,
    #[arg(long, default_value_t = 2)]
    n_freqs: usize,
    #[arg(long, default_value_t = 0.15)]
    amplitude: f64,
    #[arg(long, default_value_t = 4.0)]
    freq_min: f64,
    #[arg(long, default_value_t = 16.0)]
    freq_max: f64,
    /// Remove this fraction of pixels at random.
    #[arg(long, conflicts_with = "mask_shapes")]
    mask_ratio: Option<f64>,
    /// Remove this many random rectangles/discs.
    #[arg(long)]
    mask_shapes: Option<usize>,
    #[arg(long, default_value_t = 4)]
    mask_size_min: usize,
    #[arg(long, default_value_t = 12)]
    mask_size_max: usize,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 0.05)]
    mu: f64,
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_t: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_s: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Outer ADMM iterations.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Projected gradient steps per iteration.
    #[arg(long, default_value_t = 20)]
    pgd: usize,
    #[arg(long, default_value_t = 4)]
    patch: usize,
    #[arg(long, default_value_t = 2)]
    overlap: usize,
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
}

impl SolverArgs {
    fn config(&self) -> Result<AdmmConfig> {
        let cfg = AdmmConfig {
            mu: self.mu,
            a: self.a,
            rho_t: self.rho_t,
            rho_s: self.rho_s,
            tau: self.tau,
            outer_iters: self.iters,
            pgd_iters: self.pgd,
            patch: PatchConfig::new(self.patch, self.overlap)?,
            tol: self.tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DecomposeArgs {
    #[arg(long)]
    input: PathBuf,
    /// 0/1 image; all pixels observed when omitted.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out_u: PathBuf,
    #[arg(long)]
    out_v: PathBuf,
    /// Per-iteration residuals as CSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out_u: PathBuf,
    #[arg(long)]
    out_v: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Evaluate this network instead of the classical solver.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Per-image grid search over a classical parameter, e.g. mu=0.01:0.1:10.
    #[arg(long, conflicts_with = "weights")]
    sweep: Option<String>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    out: PathBuf,
    /// Number of blocks K.
    #[arg(long)]
    blocks: usize,
    /// Inner projected gradient steps n.
    #[arg(long)]
    pgd: usize,
    /// Parameter set 1-4.
    #[arg(long, default_value_t = 1)]
    config: u8,
    #[arg(long, default_value_t = 4)]
    patch: usize,
    #[arg(long, default_value_t = 2)]
    overlap: usize,
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn read_inputs(input: &Path, mask: Option<&Path>) -> Result<(Image, Mask)> {
    let f = read_image(input)?;
    let mask = match mask {
        Some(p) => Mask::from_image(&read_image(p)?)?,
        None => Mask::ones(f.height(), f.width()),
    };
    Ok((f, mask))
}

fn write_pair(out_u: &Path, u: &Image, out_v: &Path, v: &Image) -> Result<()> {
    let bu = encode_for_path(out_u, u);
    let bv = encode_for_path(out_v, v);
    atomic_write_all(&[(out_u, &bu), (out_v, &bv)])
}

fn emit_report(report: &EvalReport, csv: Option<&Path>) -> Result<()> {
    print!("{}", report.table());
    if let Some(path) = csv {
        atomic_write(path, report.to_csv().as_bytes())?;
    }
    Ok(())
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::GenDataset(a) => {
            let mask_kind = match (a.mask_ratio, a.mask_shapes) {
                (Some(r), _) => MaskKind::RandomPixels(r),
                (None, Some(count)) => MaskKind::RandomShapes {
                    count,
                    size_range: [a.mask_size_min, a.mask_size_max],
                },
                (None, None) => MaskKind::None,
            };
            let params = GenParams {
                height: a.height,
                width: a.width,
                n_shapes: a.n_shapes,
                n_freqs: a.n_freqs,
                texture_amplitude: a.amplitude,
                freq_range: [a.freq_min, a.freq_max],
                mask_kind,
            };
            let samples = gen_dataset(a.seed, a.count, &params)?;
            let manifest = DatasetManifest {
                seed: a.seed,
                count: a.count,
                params,
            };
            write_dataset(&a.out, &manifest, &samples)?;
            println!("wrote {} samples to {}", a.count, a.out.display());
        }
        Command::Decompose(a) => {
            let cfg = a.solver.config()?;
            let (f, mask) = read_inputs(&a.input, a.mask.as_deref())?;
            let d = solve(&f, &mask, &cfg)?;
            if d.diagnostics.tau_unstable {
                eprintln!(
                    "warning: tau = {} is not below 2 / (8 rho_t + rho_s); the inner iteration may diverge",
                    cfg.tau
                );
            }
            write_pair(&a.out_u, &d.u, &a.out_v, &d.v)?;
            if let Some(path) = a.diagnostics {
                atomic_write(&path, d.diagnostics.to_csv().as_bytes())?;
            }
            if let Some(last) = d.diagnostics.records.last() {
                println!(
                    "{} iterations, res_t {:.3e}, res_s {:.3e}, constraint {:.3e}",
                    d.diagnostics.records.len(),
                    last.res_t,
                    last.res_s,
                    last.res_constraint
                );
            }
        }
        Command::Infer(a) => {
            let net = load_weights(&a.weights)?;
            let (f, mask) = read_inputs(&a.input, a.mask.as_deref())?;
            let out = forward(&f, &mask, &net)?;
            write_pair(&a.out_u, &out.u, &a.out_v, &out.v)?;
        }
        Command::Evaluate(a) => {
            if let Some(sweep) = &a.sweep {
                let sweep: Sweep = sweep.parse()?;
                let (report, chosen) = evaluate_sweep(&a.solver.config()?, &sweep, &a.dataset)?;
                emit_report(&report, a.csv.as_deref())?;
                println!("chosen {:?}: {:?}", sweep.param, chosen);
            } else {
                let method = match &a.weights {
                    Some(w) => Method::Unrolled(load_weights(w)?),
                    None => Method::Classical(a.solver.config()?),
                };
                emit_report(&evaluate(&method, &a.dataset)?, a.csv.as_deref())?;
            }
        }
        Command::InspectWeights { path } => {
            let m = read_manifest(&path)?;
            println!("format_version {}", m.format_version);
            println!("K {}", m.k);
            println!("n {}", m.n);
            println!("config_id {}", m.config_id);
            println!("patch {} overlap {}", m.p, m.o);
            println!("{:<36} {:<16} {:>12}", "name", "shape", "offset_bytes");
            for t in &m.tensors {
                println!(
                    "{:<36} {:<16} {:>12}",
                    t.name,
                    format!("{:?}", t.shape),
                    t.offset_bytes
                );
            }
        }
        Command::InitWeights(a) => {
            let params = ParamSet::from_id(a.config).ok_or_else(|| {
                Error::InvalidParameter(format!("config must be 1-4, got {}", a.config))
            })?;
            let config = NetConfig {
                blocks: a.blocks,
                pgd_iters: a.pgd,
                params,
                patch: PatchConfig::new(a.patch, a.overlap)?,
            };
            save_weights(&a.out, &NetWeights::initial(config))?;
        }
        Command::CheckFixture { dir, tol } => {
            let diff = check_fixture(&dir)?;
            println!("max abs diff {diff:.3e} (tolerance {tol:e})");
            // a NaN difference is a failure
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(diff <= tol) {
                return Ok(1);
            }
        }
    }
    Ok(0)
}
