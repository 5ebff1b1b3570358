//! Batch command-line interface: dataset generation, site diagnostics,
//! vector-field fitting, Lyapunov-function fitting, and verification
//! reports. Every flag has a config-file equivalent; precedence is
//! built-in defaults < `--config file.json` < explicit flags.
//!
//! Exit codes: 0 success, 2 usage/validation, 3 numerical failure,
//! 1 file-system errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, BoxRegion, Region, Sphere,
};
use crate::io::{self, IoError};
use crate::kernel::WendlandKernel;
use crate::lyap::{
    self, LyapEvaluator, LyapunovModel, Mode, PFunction,
};
use crate::testbed::{self, NoiseFamily, NoiseModel, ReferenceSystem};
use crate::vec_ops::{dist, sub};
use crate::vfield::{self, Dataset, SampleSet, VectorField, VectorFieldModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Default Wendland smoothness for both the field and Lyapunov kernels.
const DEFAULT_K: usize = 2;
/// Default kernel support as a fraction of the domain diameter.
const DEFAULT_SUPPORT_FACTOR: f64 = 0.6;
const DEFAULT_EPS: f64 = 0.1;
const DEFAULT_SPACING: f64 = 0.1;
const DEFAULT_R: f64 = 1.0;
const DEFAULT_DELTA: f64 = 0.05;
const DEFAULT_N_CANDIDATES: usize = 10_000;
/// Flow-integration oracles are sampled on at most this many grid points.
const ORACLE_MAX_POINTS: usize = 32;
/// Decorrelates the noise stream from the site-sampling stream in `gen`.
const NOISE_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn numerical(err: impl std::fmt::Display) -> CliError {
    CliError::Numerical(err.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "lyapfit",
    version,
    about = "Vector-field reconstruction and Lyapunov functions from noisy samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a reference system and write a noisy dataset CSV.
    Gen(GenArgs),
    /// Report Voronoi weights and fill distance for a site set.
    Diag(DiagArgs),
    /// Fit a kernel model of the vector field from a samples CSV.
    FitVf(FitVfArgs),
    /// Fit a Lyapunov function V or a time-to-boundary function T.
    FitLyap(FitLyapArgs),
    /// Evaluate a fitted Lyapunov model on a grid and write a report.
    Verify(VerifyArgs),
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Diag(a) => cmd_diag(a),
        Command::FitVf(a) => cmd_fit_vf(a),
        Command::FitLyap(a) => cmd_fit_lyap(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

// ---------------------------------------------------------------------------
// flag value parsers and config plumbing

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect()
}

/// Flat `lo1,hi1,lo2,hi2,...` box bounds.
fn parse_box(s: &str) -> Result<BoxRegion, String> {
    let vals = parse_f64_list(s)?;
    if vals.is_empty() || vals.len() % 2 != 0 {
        return Err("expected lo,hi pairs (an even number of values)".into());
    }
    let lo = vals.iter().step_by(2).copied().collect();
    let hi = vals.iter().skip(1).step_by(2).copied().collect();
    BoxRegion::new(lo, hi).map_err(|e| e.to_string())
}

fn parse_region(s: &str) -> Result<Region, String> {
    parse_box(s).map(Region::Box)
}

fn parse_family(s: &str) -> Result<NoiseFamily, String> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(NoiseFamily::Gaussian),
        "uniform" => Ok(NoiseFamily::Uniform),
        other => Err(format!("unknown noise family '{other}'")),
    }
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    match s.to_ascii_lowercase().as_str() {
        "v" => Ok(Mode::V),
        "t" => Ok(Mode::T),
        other => Err(format!("mode must be 'v' or 't', got '{other}'")),
    }
}

/// `--lambda auto` or a fixed positive value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Fixed(f64),
    Rule(String),
}

fn parse_lambda(s: &str) -> Result<LambdaSpec, String> {
    if s.eq_ignore_ascii_case("auto") {
        Ok(LambdaSpec::Rule("auto".into()))
    } else {
        s.parse::<f64>()
            .map(LambdaSpec::Fixed)
            .map_err(|e| format!("expected 'auto' or a number: {e}"))
    }
}

fn load_config<C: Default + serde::de::DeserializeOwned>(
    path: &Option<PathBuf>,
) -> Result<C, CliError> {
    match path {
        Some(p) => Ok(io::read_json(p)?),
        None => Ok(C::default()),
    }
}

macro_rules! overlay {
    ($cfg:expr, $args:expr, [$($field:ident),* $(,)?]) => {
        $( if $args.$field.is_some() { $cfg.$field = $args.$field.clone(); } )*
    };
}

fn require<T>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| usage(format!("{what} is required (flag or config file)")))
}

fn kernel_scale(region_diameter: f64, support_factor: f64) -> f64 {
    1.0 / (support_factor * region_diameter)
}

fn check_positive(v: f64, what: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("{what} must be positive and finite, got {v}")))
    }
}

// ---------------------------------------------------------------------------
// gen

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub system: Option<String>,
    pub m: Option<usize>,
    pub sigma: Option<f64>,
    pub family: Option<NoiseFamily>,
    pub seed: Option<u64>,
    pub x_box: Option<BoxRegion>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference system: lin1d, linear2d, decay2d or nonlinear2d.
    #[arg(long)]
    system: Option<String>,
    /// Number of sample sites.
    #[arg(long)]
    m: Option<usize>,
    /// Noise standard deviation (0 = exact field values).
    #[arg(long)]
    sigma: Option<f64>,
    /// Noise family: gaussian or uniform.
    #[arg(long, value_parser = parse_family)]
    family: Option<NoiseFamily>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling box as flat lo,hi pairs, e.g. "-1,1,-1,1".
    #[arg(long, value_parser = parse_box)]
    x_box: Option<BoxRegion>,
    /// Output samples CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let mut cfg: GenConfig = load_config(&args.config)?;
    overlay!(cfg, args, [system, m, sigma, family, seed, x_box, out]);

    let sys = ReferenceSystem::from_name(&require(cfg.system.clone(), "--system")?)
        .map_err(|e| usage(e.to_string()))?;
    let m = require(cfg.m, "--m")?;
    if m == 0 {
        return Err(usage("--m must be at least 1"));
    }
    let out = require(cfg.out.clone(), "--out")?;
    let sigma = cfg.sigma.unwrap_or(0.0);
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(usage(format!("--sigma must be non-negative, got {sigma}")));
    }
    let family = cfg.family.unwrap_or(NoiseFamily::Gaussian);
    let seed = cfg.seed.unwrap_or(0);
    let x_box = cfg
        .x_box
        .clone()
        .unwrap_or_else(|| BoxRegion::symmetric(sys.dim(), 1.0));
    x_box.validate().map_err(|e| usage(e.to_string()))?;
    if x_box.dim() != sys.dim() {
        return Err(usage(format!(
            "--x-box has dimension {}, system '{}' has dimension {}",
            x_box.dim(),
            sys.name(),
            sys.dim()
        )));
    }

    // sites are uniform in the box; the noise stream is salted so that the
    // two ChaCha streams are distinct for every seed
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let coord_dists: Vec<Uniform<f64>> = x_box
        .lo
        .iter()
        .zip(&x_box.hi)
        .map(|(lo, hi)| Uniform::new_inclusive(*lo, *hi))
        .collect();
    let sites: Vec<Vec<f64>> = (0..m)
        .map(|_| coord_dists.iter().map(|d| d.sample(&mut rng)).collect())
        .collect();
    let noise = NoiseModel {
        family,
        sigma,
        seed: seed ^ NOISE_STREAM_SALT,
    };
    let ds = testbed::generate_data(sys, &sites, &noise).map_err(numerical)?;
    io::write_samples_csv(&out, &ds.sites, &ds.values)?;

    let sha = io::sha256_hex_file(&out)?;
    println!(
        "{}",
        serde_json::json!({
            "command": "gen", "system": sys.name(), "m": m, "sigma": sigma,
            "seed": seed, "out": out, "dataset_sha256": sha,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// diag

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagConfig {
    pub data: Option<PathBuf>,
    pub x_box: Option<BoxRegion>,
    pub n_mc: Option<usize>,
    pub n_candidates: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV: either samples (x/y columns) or bare points.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_box)]
    x_box: Option<BoxRegion>,
    /// Monte-Carlo points for the Voronoi weights (default max(10m, 10000)).
    #[arg(long)]
    n_mc: Option<usize>,
    /// Candidate points for the fill-distance lower bound.
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Accepts both sample files (`x1..xd,y1..yd`) and point files (`x1..xd`).
fn read_sites_any(path: &Path) -> Result<Vec<Vec<f64>>, CliError> {
    match io::read_samples_csv(path) {
        Ok((sites, _)) => Ok(sites),
        Err(first) => match io::read_points_csv(path) {
            Ok(points) => Ok(points),
            Err(_) => Err(first.into()),
        },
    }
}

fn default_n_mc(m: usize) -> usize {
    (10 * m).max(10_000)
}

fn cmd_diag(args: DiagArgs) -> Result<(), CliError> {
    let mut cfg: DiagConfig = load_config(&args.config)?;
    overlay!(cfg, args, [data, x_box, n_mc, n_candidates, seed, out]);

    let data = require(cfg.data.clone(), "--data")?;
    let sites = read_sites_any(&data)?;
    if sites.is_empty() {
        return Err(usage(format!("{}: no data rows", data.display())));
    }
    let d = sites[0].len();
    let x_box = cfg
        .x_box
        .clone()
        .unwrap_or_else(|| BoxRegion::symmetric(d, 1.0));
    let n_mc = cfg.n_mc.unwrap_or_else(|| default_n_mc(sites.len()));
    let n_candidates = cfg.n_candidates.unwrap_or(DEFAULT_N_CANDIDATES);
    let seed = cfg.seed.unwrap_or(0);

    let ws = crate::geometry::WeightedSites::build(&sites, &x_box, n_mc, n_candidates, seed)
        .map_err(numerical)?;
    let sum_w: f64 = ws.w.iter().sum();
    let report = serde_json::json!({
        "m": sites.len(),
        "d": d,
        "volume": x_box.volume(),
        "sum_w": sum_w,
        "w_norm": ws.w_norm,
        "h_x": ws.h_x,
        "n_mc": n_mc,
        "n_candidates": n_candidates,
        "seed": seed,
        "weights": ws.w,
        "config": {
            "data": data, "x_box": x_box, "n_mc": n_mc,
            "n_candidates": n_candidates, "seed": seed,
        },
    });
    match &cfg.out {
        Some(path) => {
            io::write_json_atomic(path, &report)?;
            println!(
                "{}",
                serde_json::json!({"command": "diag", "out": path, "w_norm": ws.w_norm, "h_x": ws.h_x})
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&report).unwrap()),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-vf

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitVfConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub c: Option<f64>,
    pub support_factor: Option<f64>,
    pub lambda: Option<LambdaSpec>,
    pub r: Option<f64>,
    pub delta: Option<f64>,
    pub seed: Option<u64>,
    pub n_mc: Option<usize>,
    pub n_candidates: Option<usize>,
    pub x_box: Option<BoxRegion>,
}

#[derive(Debug, Args)]
struct FitVfArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input samples CSV (header x1..xd,y1..yd).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output model JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Wendland smoothness index of the reconstruction kernel.
    #[arg(long)]
    k: Option<usize>,
    /// Kernel scale parameter; overrides --support-factor.
    #[arg(long)]
    c: Option<f64>,
    /// Kernel support as a fraction of the box diameter (default 0.6).
    #[arg(long)]
    support_factor: Option<f64>,
    /// 'auto' (the ‖w‖/h_x rule) or an explicit positive value.
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<LambdaSpec>,
    /// Smoothness exponent r ∈ (1/2, 1] of the auto-λ rule.
    #[arg(long)]
    r: Option<f64>,
    /// Confidence parameter δ ∈ (0,1); recorded in provenance only.
    #[arg(long)]
    delta: Option<f64>,
    /// Seed for the Monte-Carlo Voronoi weights.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long, value_parser = parse_box)]
    x_box: Option<BoxRegion>,
}

fn cmd_fit_vf(args: FitVfArgs) -> Result<(), CliError> {
    let mut cfg: FitVfConfig = load_config(&args.config)?;
    overlay!(
        cfg,
        args,
        [data, out, k, c, support_factor, lambda, r, delta, seed, n_mc, n_candidates, x_box]
    );

    let data = require(cfg.data.clone(), "--data")?;
    let out = require(cfg.out.clone(), "--out")?;
    let (sites, values) = io::read_samples_csv(&data)?;
    if sites.is_empty() {
        return Err(usage(format!("{}: no data rows", data.display())));
    }
    let d = sites[0].len();
    let ds = Dataset::new(sites, values, 0.0).map_err(numerical)?;

    let x_box = cfg
        .x_box
        .clone()
        .unwrap_or_else(|| BoxRegion::symmetric(d, 1.0));
    x_box.validate().map_err(|e| usage(e.to_string()))?;
    let n_mc = cfg.n_mc.unwrap_or_else(|| default_n_mc(ds.sites.len()));
    let n_candidates = cfg.n_candidates.unwrap_or(DEFAULT_N_CANDIDATES);
    let seed = cfg.seed.unwrap_or(0);
    let r = cfg.r.unwrap_or(DEFAULT_R);
    let delta = cfg.delta.unwrap_or(DEFAULT_DELTA);

    let k = cfg.k.unwrap_or(DEFAULT_K);
    let support_factor = check_positive(
        cfg.support_factor.unwrap_or(DEFAULT_SUPPORT_FACTOR),
        "--support-factor",
    )?;
    let c = match cfg.c {
        Some(c) => check_positive(c, "--c")?,
        None => kernel_scale(x_box.diameter(), support_factor),
    };
    let kernel = WendlandKernel::new(d, k, c).map_err(|e| usage(e.to_string()))?;

    let samples = SampleSet::from_dataset(&ds, &x_box, n_mc, n_candidates, seed)
        .map_err(numerical)?;
    let lambda_spec = cfg.lambda.clone().unwrap_or(LambdaSpec::Rule("auto".into()));
    let lambda = match &lambda_spec {
        LambdaSpec::Fixed(v) => check_positive(*v, "--lambda")?,
        LambdaSpec::Rule(name) if name == "auto" => {
            vfield::choose_lambda(samples.w_norm, samples.h_x, r, delta).map_err(numerical)?
        }
        LambdaSpec::Rule(name) => {
            return Err(usage(format!("unknown lambda rule '{name}' (expected 'auto')")));
        }
    };

    let mut model = vfield::fit_vector_field(&samples, &kernel, lambda).map_err(numerical)?;
    model.provenance.r = Some(r);
    model.provenance.delta = Some(delta);
    model.provenance.seed = Some(seed);
    model.provenance.dataset_sha256 = Some(io::sha256_hex_file(&data)?);
    io::write_json_atomic(&out, &model)?;

    println!(
        "{}",
        serde_json::json!({
            "command": "fit-vf", "m": model.centers.len(), "d": d,
            "lambda": model.lambda, "w_norm": samples.w_norm, "h_x": samples.h_x,
            "normal_residual_rel": model.provenance.normal_residual_rel,
            "out": out,
        })
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit-lyap

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitLyapConfig {
    pub mode: Option<Mode>,
    pub vf_model: Option<PathBuf>,
    pub system: Option<String>,
    pub points: Option<PathBuf>,
    pub spacing: Option<f64>,
    pub omega: Option<Region>,
    pub xbar: Option<Vec<f64>>,
    pub eps: Option<f64>,
    pub k: Option<usize>,
    pub c: Option<f64>,
    pub support_factor: Option<f64>,
    pub p_matrix: Option<Vec<Vec<f64>>>,
    pub gamma_points: Option<PathBuf>,
    pub gamma_center: Option<Vec<f64>>,
    pub gamma_radius: Option<f64>,
    pub gamma_n: Option<usize>,
    pub cbar: Option<f64>,
    pub xi_t: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitLyapArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// 'v' (Lyapunov function) or 't' (time-to-boundary function).
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Fitted field model JSON (exclusive with --system).
    #[arg(long)]
    vf_model: Option<PathBuf>,
    /// Exact reference field by name (exclusive with --vf-model).
    #[arg(long)]
    system: Option<String>,
    /// Collocation points CSV; a grid over Ω is built when omitted.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Collocation grid spacing (default 0.1).
    #[arg(long)]
    spacing: Option<f64>,
    /// Collocation region Ω as flat box bounds (default [-1,1]^d).
    #[arg(long, value_parser = parse_region)]
    omega: Option<Region>,
    /// Equilibrium; centre of the V-mode exclusion ball.
    #[arg(long, value_parser = parse_f64_list)]
    xbar: Option<Vec<f64>>,
    /// Exclusion radius around the equilibrium / Γ centre (default 0.1).
    #[arg(long)]
    eps: Option<f64>,
    /// Wendland smoothness index (must be ≥ 2 here).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    support_factor: Option<f64>,
    /// Γ nodes CSV (T-mode; exclusive with --gamma-radius/--gamma-n).
    #[arg(long)]
    gamma_points: Option<PathBuf>,
    /// Γ sphere centre (default origin).
    #[arg(long, value_parser = parse_f64_list)]
    gamma_center: Option<Vec<f64>>,
    /// Γ sphere radius (T-mode).
    #[arg(long)]
    gamma_radius: Option<f64>,
    /// Number of Γ surface nodes (default 32).
    #[arg(long)]
    gamma_n: Option<usize>,
    /// Orbital-derivative level −c̄ for T-mode (default 1).
    #[arg(long)]
    cbar: Option<f64>,
    /// Boundary value of T on Γ (default 0).
    #[arg(long)]
    xi_t: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Either an exact reference system or a fitted model file.
#[derive(Debug)]
enum FieldSource {
    System(ReferenceSystem),
    Model(Box<VectorFieldModel>, String),
}

impl FieldSource {
    fn resolve(
        system: &Option<String>,
        vf_model: &Option<PathBuf>,
    ) -> Result<FieldSource, CliError> {
        match (system, vf_model) {
            (Some(_), Some(_)) => Err(usage("--system and --vf-model are mutually exclusive")),
            (None, None) => Err(usage("one of --system or --vf-model is required")),
            (Some(name), None) => Ok(FieldSource::System(
                ReferenceSystem::from_name(name).map_err(|e| usage(e.to_string()))?,
            )),
            (None, Some(path)) => {
                let model: VectorFieldModel = io::read_json(path)?;
                let sha = io::sha256_hex_file(path)?;
                Ok(FieldSource::Model(Box::new(model), sha))
            }
        }
    }

    fn field(&self) -> Result<Box<dyn VectorField>, CliError> {
        match self {
            FieldSource::System(sys) => Ok(Box::new(*sys)),
            FieldSource::Model(m, _) => Ok(Box::new(m.evaluator().map_err(numerical)?)),
        }
    }

    fn dim(&self) -> usize {
        match self {
            FieldSource::System(sys) => sys.dim(),
            FieldSource::Model(m, _) => m.coeffs.len(),
        }
    }

    fn label(&self) -> String {
        match self {
            FieldSource::System(sys) => format!("system:{}", sys.name()),
            FieldSource::Model(..) => "vf-model".into(),
        }
    }
}

fn cmd_fit_lyap(args: FitLyapArgs) -> Result<(), CliError> {
    let mut cfg: FitLyapConfig = load_config(&args.config)?;
    overlay!(
        cfg,
        args,
        [
            mode, vf_model, system, points, spacing, omega, xbar, eps, k, c, support_factor,
            gamma_points, gamma_center, gamma_radius, gamma_n, cbar, xi_t, out
        ]
    );

    let mode = require(cfg.mode, "--mode")?;
    let out = require(cfg.out.clone(), "--out")?;
    let source = FieldSource::resolve(&cfg.system, &cfg.vf_model)?;
    let field = source.field()?;
    let d = source.dim();

    let omega = cfg
        .omega
        .clone()
        .unwrap_or_else(|| Region::Box(BoxRegion::symmetric(d, 1.0)));
    omega.validate().map_err(|e| usage(e.to_string()))?;
    if omega.dim() != d {
        return Err(usage(format!(
            "Ω has dimension {}, field has dimension {d}",
            omega.dim()
        )));
    }
    let eps = check_positive(cfg.eps.unwrap_or(DEFAULT_EPS), "--eps")?;
    let spacing = check_positive(cfg.spacing.unwrap_or(DEFAULT_SPACING), "--spacing")?;

    let xbar = match (&cfg.xbar, &source) {
        (Some(x), _) => x.clone(),
        (None, FieldSource::System(sys)) => sys.xbar(),
        (None, FieldSource::Model(..)) => vec![0.0; d],
    };
    if xbar.len() != d {
        return Err(usage(format!(
            "--xbar has dimension {}, field has dimension {d}",
            xbar.len()
        )));
    }

    // Γ nodes (T-mode only)
    let gamma: Option<(Vec<Vec<f64>>, Vec<f64>)> = match mode {
        Mode::V => None,
        Mode::T => {
            let nodes = match (&cfg.gamma_points, &cfg.gamma_radius) {
                (Some(_), Some(_)) => {
                    return Err(usage(
                        "--gamma-points and --gamma-radius are mutually exclusive",
                    ))
                }
                (Some(path), None) => io::read_points_csv(path)?,
                (None, Some(radius)) => {
                    let sphere = Sphere {
                        center: cfg.gamma_center.clone().unwrap_or_else(|| vec![0.0; d]),
                        radius: check_positive(*radius, "--gamma-radius")?,
                    };
                    geometry::sphere_nodes(&sphere, cfg.gamma_n.unwrap_or(32))
                        .map_err(|e| usage(e.to_string()))?
                }
                (None, None) => {
                    return Err(usage(
                        "T-mode needs Γ nodes: give --gamma-radius (with optional --gamma-center/--gamma-n) or --gamma-points",
                    ))
                }
            };
            if nodes.is_empty() || nodes.iter().any(|p| p.len() != d) {
                return Err(usage("Γ nodes must be non-empty and of the field dimension"));
            }
            let center = centroid(&nodes);
            Some((nodes, center))
        }
    };

    // collocation points: explicit CSV or a grid with the exclusion ball
    // removed; the ball is centred at x̄ for V and at the Γ centre for T
    let excl_center = match &gamma {
        Some((_, center)) => center.clone(),
        None => xbar.clone(),
    };
    let (q_raw, excluded) = match &cfg.points {
        Some(path) => (io::read_points_csv(path)?, 0usize),
        None => {
            let full = geometry::make_grid(&omega, spacing).map_err(numerical)?;
            let kept = geometry::make_grid_excluding(&omega, spacing, &excl_center, eps)
                .map_err(numerical)?;
            let excluded = full.len() - kept.len();
            (kept, excluded)
        }
    };

    // pre-screen: drop q that coincide with Γ nodes, then the small-field gate
    let (q_distinct, coinciding) = match &gamma {
        Some((nodes, _)) => geometry::drop_coinciding(&q_raw, nodes),
        None => (q_raw.clone(), 0),
    };
    let (q, gated) = lyap::screen_points(&q_distinct, field.as_ref());
    let screened = coinciding + gated.len();
    if q.is_empty() {
        return Err(CliError::Numerical(format!(
            "all {} collocation points were screened out (field magnitude below {} or coinciding with Γ); \
             enlarge --eps, refine the data, or choose a different grid",
            q_raw.len(),
            lyap::FIELD_GATE
        )));
    }

    let k = cfg.k.unwrap_or(DEFAULT_K);
    if k < 2 {
        return Err(usage(format!(
            "the Lyapunov kernel needs smoothness k ≥ 2, got {k}"
        )));
    }
    if let FieldSource::Model(m, _) = &source {
        if k > m.kernel.k {
            eprintln!(
                "warning: Lyapunov kernel smoothness k={k} exceeds the field model's k={}; \
                 the fitted field may be rougher than the ansatz assumes",
                m.kernel.k
            );
        }
    }
    let support_factor = check_positive(
        cfg.support_factor.unwrap_or(DEFAULT_SUPPORT_FACTOR),
        "--support-factor",
    )?;
    let c = match cfg.c {
        Some(c) => check_positive(c, "--c")?,
        None => kernel_scale(omega.diameter(), support_factor),
    };
    let kernel = WendlandKernel::new(d, k, c).map_err(|e| usage(e.to_string()))?;

    let mut model = match mode {
        Mode::V => {
            let p = PFunction::Quadratic {
                xbar: xbar.clone(),
                matrix: cfg.p_matrix.clone(),
            };
            lyap::fit_v(&q, field.as_ref(), &kernel, &p).map_err(numerical)?
        }
        Mode::T => {
            let (nodes, _) = gamma.as_ref().expect("T-mode gamma was resolved above");
            let cbar = check_positive(cfg.cbar.unwrap_or(1.0), "--cbar")?;
            let xi_t = cfg.xi_t.unwrap_or(0.0);
            lyap::fit_t(&q, nodes, field.as_ref(), &kernel, cbar, xi_t).map_err(numerical)?
        }
    };
    model.provenance.screened_points = screened;
    model.provenance.field_source = source.label();
    if let FieldSource::Model(_, sha) = &source {
        model.provenance.vf_model_sha256 = Some(sha.clone());
    }
    io::write_json_atomic(&out, &model)?;

    println!(
        "{}",
        serde_json::json!({
            "command": "fit-lyap", "mode": mode, "q_points": model.points.len(),
            "gamma_points": model.gamma_points.len(), "excluded_by_ball": excluded,
            "screened": screened, "colloc_residual": model.provenance.colloc_residual,
            "jitter": model.provenance.jitter, "out": out,
        })
    );
    Ok(())
}

fn centroid(points: &[Vec<f64>]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for p in points {
        for (ci, pi) in c.iter_mut().zip(p) {
            *ci += pi;
        }
    }
    for ci in c.iter_mut() {
        *ci /= points.len() as f64;
    }
    c
}

// ---------------------------------------------------------------------------
// verify

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub model: Option<PathBuf>,
    pub vf_model: Option<PathBuf>,
    pub system: Option<String>,
    pub spacing: Option<f64>,
    pub omega: Option<Region>,
    pub eps: Option<f64>,
    pub n_candidates: Option<usize>,
    pub out: Option<PathBuf>,
    pub grid_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fitted Lyapunov model JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Fitted field model for residuals against the fitted field.
    #[arg(long)]
    vf_model: Option<PathBuf>,
    /// Reference system for residuals against the true field and oracles.
    #[arg(long)]
    system: Option<String>,
    /// Verification grid spacing (default: half the collocation fill distance).
    #[arg(long)]
    spacing: Option<f64>,
    #[arg(long, value_parser = parse_region)]
    omega: Option<Region>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    n_candidates: Option<usize>,
    /// Output report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Grid evaluations CSV (default: report path with .grid.csv).
    #[arg(long)]
    grid_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ResidualStats {
    negativity_fraction: f64,
    sup_residual: f64,
    mean_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
struct OracleReport {
    kind: String,
    points: usize,
    sup_error: f64,
}

#[derive(Debug, Serialize)]
struct VerificationReport {
    mode: Mode,
    grid_spacing: f64,
    grid_count: usize,
    grid_excluded: usize,
    h_q: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_qtilde: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fitted_field: Option<ResidualStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_field: Option<ResidualStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_sup_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleReport>,
    config: serde_json::Value,
}

struct SourceEval {
    name: &'static str,
    orbitals: Vec<f64>,
    stats: ResidualStats,
}

fn eval_source(
    ev: &LyapEvaluator,
    grid: &[Vec<f64>],
    field: &dyn VectorField,
    target: impl Fn(&[f64]) -> f64,
    name: &'static str,
) -> SourceEval {
    let mut orbitals = Vec::with_capacity(grid.len());
    let mut sup = 0.0f64;
    let mut total = 0.0f64;
    let mut negative = 0usize;
    for x in grid {
        let orb = ev.orbital(x, &field.eval(x));
        let resid = (orb + target(x)).abs();
        sup = sup.max(resid);
        total += resid;
        if orb < 0.0 {
            negative += 1;
        }
        orbitals.push(orb);
    }
    SourceEval {
        name,
        orbitals,
        stats: ResidualStats {
            negativity_fraction: negative as f64 / grid.len() as f64,
            sup_residual: sup,
            mean_residual: total / grid.len() as f64,
        },
    }
}

fn subsample(n: usize, cap: usize) -> Vec<usize> {
    let stride = n.div_ceil(cap).max(1);
    (0..n).step_by(stride).collect()
}

fn cmd_verify(args: VerifyArgs) -> Result<(), CliError> {
    let mut cfg: VerifyConfig = load_config(&args.config)?;
    overlay!(
        cfg,
        args,
        [model, vf_model, system, spacing, omega, eps, n_candidates, out, grid_csv]
    );

    let model_path = require(cfg.model.clone(), "--model")?;
    let out = require(cfg.out.clone(), "--out")?;
    let model: LyapunovModel = io::read_json(&model_path)?;
    let ev = model.evaluator().map_err(numerical)?;
    if model.points.is_empty() {
        return Err(CliError::Numerical("model has no collocation points".into()));
    }
    let d = model.points[0].len();

    let system = cfg
        .system
        .as_ref()
        .map(|name| ReferenceSystem::from_name(name).map_err(|e| usage(e.to_string())))
        .transpose()?;
    if let Some(sys) = system {
        if sys.dim() != d {
            return Err(usage(format!(
                "system '{}' has dimension {}, model has dimension {d}",
                sys.name(),
                sys.dim()
            )));
        }
    }
    let vf_model: Option<VectorFieldModel> = cfg
        .vf_model
        .as_ref()
        .map(|p| io::read_json(p.as_path()))
        .transpose()?;
    if system.is_none() && vf_model.is_none() {
        return Err(usage(
            "verification needs a field: give --vf-model and/or --system",
        ));
    }

    let omega = cfg
        .omega
        .clone()
        .unwrap_or_else(|| Region::Box(BoxRegion::symmetric(d, 1.0)));
    omega.validate().map_err(|e| usage(e.to_string()))?;
    let eps = check_positive(cfg.eps.unwrap_or(DEFAULT_EPS), "--eps")?;
    let n_candidates = cfg.n_candidates.unwrap_or(DEFAULT_N_CANDIDATES);

    // exclusion centre: the equilibrium for V, the Γ centre for T
    let (excl_center, gamma_sphere) = match model.mode {
        Mode::V => {
            let p = model
                .pfun
                .as_ref()
                .ok_or_else(|| CliError::Numerical("V-mode model lacks its p function".into()))?;
            (p.center().to_vec(), None)
        }
        Mode::T => {
            if model.gamma_points.is_empty() {
                return Err(CliError::Numerical("T-mode model lacks Γ points".into()));
            }
            let center = centroid(&model.gamma_points);
            let radius = model
                .gamma_points
                .iter()
                .map(|g| dist(g, &center))
                .sum::<f64>()
                / model.gamma_points.len() as f64;
            let sphere = Sphere {
                center: center.clone(),
                radius,
            };
            (center, Some(sphere))
        }
    };

    let h_q = geometry::fill_distance(&model.points, &omega, n_candidates).map_err(numerical)?;
    let spacing = match cfg.spacing {
        Some(s) => check_positive(s, "--spacing")?,
        None => h_q / 2.0,
    };
    let full = geometry::make_grid(&omega, spacing).map_err(numerical)?;
    let grid = geometry::make_grid_excluding(&omega, spacing, &excl_center, eps)
        .map_err(numerical)?;
    let grid_excluded = full.len() - grid.len();

    // residual targets: ⟨∇V̂,f⟩ ≈ −p and ⟨∇T̂,f⟩ ≈ −c̄
    let target: Box<dyn Fn(&[f64]) -> f64> = match model.mode {
        Mode::V => {
            let p = model.pfun.clone().expect("checked above");
            Box::new(move |x: &[f64]| p.eval(x))
        }
        Mode::T => {
            let cbar = model
                .cbar
                .ok_or_else(|| CliError::Numerical("T-mode model lacks cbar".into()))?;
            Box::new(move |_: &[f64]| cbar)
        }
    };

    let mut sources: Vec<SourceEval> = Vec::new();
    if let Some(vf) = &vf_model {
        let fitted = vf.evaluator().map_err(numerical)?;
        sources.push(eval_source(&ev, &grid, &fitted, &target, "fitted"));
    }
    if let Some(sys) = system {
        sources.push(eval_source(&ev, &grid, &sys, &target, "true"));
    }

    let gamma_sup_error = match model.mode {
        Mode::T => {
            let xi_t = model.xi_t.unwrap_or(0.0);
            Some(
                model
                    .gamma_points
                    .iter()
                    .map(|g| (ev.eval(g) - xi_t).abs())
                    .fold(0.0f64, f64::max),
            )
        }
        Mode::V => None,
    };
    let h_qtilde = match &gamma_sphere {
        Some(s) => Some(
            geometry::fill_distance_on_sphere(&model.gamma_points, s, n_candidates)
                .map_err(numerical)?,
        ),
        None => None,
    };

    let oracle = match (system, model.mode) {
        (Some(sys), Mode::V) => Some(v_oracle_report(&model, &ev, sys, &grid)?),
        (Some(sys), Mode::T) => {
            let sphere = gamma_sphere.as_ref().expect("T-mode sphere exists");
            Some(t_oracle_report(&model, &ev, sys, sphere, &grid)?)
        }
        (None, _) => None,
    };

    let report = VerificationReport {
        mode: model.mode,
        grid_spacing: spacing,
        grid_count: grid.len(),
        grid_excluded,
        h_q,
        h_qtilde,
        h_x: vf_model.as_ref().map(|m| m.provenance.h_x),
        w_norm: vf_model.as_ref().map(|m| m.provenance.w_norm),
        lambda: vf_model.as_ref().map(|m| m.lambda),
        fitted_field: sources
            .iter()
            .find(|s| s.name == "fitted")
            .map(|s| s.stats),
        true_field: sources.iter().find(|s| s.name == "true").map(|s| s.stats),
        gamma_sup_error,
        oracle,
        config: serde_json::json!({
            "model": model_path, "vf_model": cfg.vf_model, "system": cfg.system,
            "spacing": spacing, "omega": omega, "eps": eps,
            "n_candidates": n_candidates, "out": out, "grid_csv": cfg.grid_csv,
        }),
    };
    check_report_finite(&report)?;
    io::write_json_atomic(&out, &report)?;

    // grid CSV for external plotting: value plus one orbital/residual pair
    // per available field source
    let grid_csv = cfg
        .grid_csv
        .clone()
        .unwrap_or_else(|| out.with_extension("grid.csv"));
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.push("value".into());
    for s in &sources {
        header.push(format!("orbital_{}", s.name));
        header.push(format!("residual_{}", s.name));
    }
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut row = x.clone();
            row.push(ev.eval(x));
            for s in &sources {
                row.push(s.orbitals[i]);
                row.push((s.orbitals[i] + target(x)).abs());
            }
            row
        })
        .collect();
    io::write_table_csv(&grid_csv, &header, &rows)?;

    println!(
        "{}",
        serde_json::json!({
            "command": "verify", "mode": model.mode, "grid_count": grid.len(),
            "negativity_fraction_fitted": report.fitted_field.map(|s| s.negativity_fraction),
            "negativity_fraction_true": report.true_field.map(|s| s.negativity_fraction),
            "sup_residual_true": report.true_field.map(|s| s.sup_residual),
            "gamma_sup_error": report.gamma_sup_error,
            "oracle_sup_error": report.oracle.as_ref().map(|o| o.sup_error),
            "out": out,
        })
    );
    Ok(())
}

/// V oracle: the Lyapunov matrix equation on linear systems (full grid),
/// flow integration on a subsample otherwise.
fn v_oracle_report(
    model: &LyapunovModel,
    ev: &LyapEvaluator,
    sys: ReferenceSystem,
    grid: &[Vec<f64>],
) -> Result<OracleReport, CliError> {
    let d = sys.dim();
    let p = model
        .pfun
        .as_ref()
        .ok_or_else(|| CliError::Numerical("V-mode model lacks its p function".into()))?;
    if dist(p.center(), &sys.xbar()) > 1e-12 {
        return Err(CliError::Numerical(
            "oracle comparison needs p centred at the system equilibrium".into(),
        ));
    }
    if let Some(a) = sys.linear_matrix() {
        let qm = p.q_dmatrix(d);
        let q_rows: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| qm[(i, j)]).collect())
            .collect();
        let pmat = testbed::oracle_v_quadratic(&a, &q_rows).map_err(numerical)?;
        let xbar = sys.xbar();
        let sup = grid
            .iter()
            .map(|x| (ev.eval(x) - testbed::quad_form(&pmat, &sub(x, &xbar))).abs())
            .fold(0.0f64, f64::max);
        Ok(OracleReport {
            kind: "lyapunov_equation".into(),
            points: grid.len(),
            sup_error: sup,
        })
    } else {
        let idx = subsample(grid.len(), ORACLE_MAX_POINTS);
        let mut sup = 0.0f64;
        for &i in &idx {
            let flow = testbed::oracle_v_flow(sys, p, &grid[i], 1e-5).map_err(numerical)?;
            sup = sup.max((ev.eval(&grid[i]) - flow.value).abs());
        }
        Ok(OracleReport {
            kind: "flow_integration".into(),
            points: idx.len(),
            sup_error: sup,
        })
    }
}

/// T oracle: signed crossing times by flow integration on a subsample.
fn t_oracle_report(
    model: &LyapunovModel,
    ev: &LyapEvaluator,
    sys: ReferenceSystem,
    sphere: &Sphere,
    grid: &[Vec<f64>],
) -> Result<OracleReport, CliError> {
    let cbar = model
        .cbar
        .ok_or_else(|| CliError::Numerical("T-mode model lacks cbar".into()))?;
    let xi_t = model.xi_t.unwrap_or(0.0);
    let idx = subsample(grid.len(), ORACLE_MAX_POINTS);
    let mut sup = 0.0f64;
    for &i in &idx {
        let t = testbed::oracle_t_flow(sys, sphere, cbar, xi_t, &grid[i]).map_err(numerical)?;
        sup = sup.max((ev.eval(&grid[i]) - t).abs());
    }
    Ok(OracleReport {
        kind: "flow_integration".into(),
        points: idx.len(),
        sup_error: sup,
    })
}

fn check_report_finite(report: &VerificationReport) -> Result<(), CliError> {
    fn walk(v: &serde_json::Value, bad: &mut Vec<String>, path: String) {
        match v {
            serde_json::Value::Number(n) => {
                if n.as_f64().map_or(true, |x| !x.is_finite()) {
                    bad.push(path);
                }
            }
            serde_json::Value::Null => bad.push(path),
            serde_json::Value::Object(map) => {
                for (k, val) in map {
                    walk(val, bad, format!("{path}.{k}"));
                }
            }
            serde_json::Value::Array(arr) => {
                for (i, val) in arr.iter().enumerate() {
                    walk(val, bad, format!("{path}[{i}]"));
                }
            }
            _ => {}
        }
    }
    // serde_json rejects NaN/inf outright, so probe the numeric fields first
    let scalars = [
        ("grid_spacing", Some(report.grid_spacing)),
        ("h_q", Some(report.h_q)),
        ("h_qtilde", report.h_qtilde),
        ("h_x", report.h_x),
        ("w_norm", report.w_norm),
        ("lambda", report.lambda),
        ("gamma_sup_error", report.gamma_sup_error),
        ("oracle.sup_error", report.oracle.as_ref().map(|o| o.sup_error)),
    ];
    for (name, v) in scalars {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(CliError::Numerical(format!(
                    "report field {name} is not finite ({v})"
                )));
            }
        }
    }
    for (name, stats) in [
        ("fitted_field", &report.fitted_field),
        ("true_field", &report.true_field),
    ] {
        if let Some(s) = stats {
            for (f, v) in [
                ("negativity_fraction", s.negativity_fraction),
                ("sup_residual", s.sup_residual),
                ("mean_residual", s.mean_residual),
            ] {
                if !v.is_finite() {
                    return Err(CliError::Numerical(format!(
                        "report field {name}.{f} is not finite ({v})"
                    )));
                }
            }
        }
    }
    let _ = walk;
    Ok(())
}
