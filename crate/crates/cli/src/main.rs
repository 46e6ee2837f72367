//! `tq3d`: data-oblivious quantization of Gaussian splatting scenes and tensors.
//!
//! Exit codes: 0 on success, 2 for usage errors, 1 for data, format and I/O errors.

mod output;

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tq3d::eval::{self, ReportFormat};
use tq3d::gsplat::{self, CompressOptions, CompressedScene, GaussianCloud};
use tq3d::quantizer::{group_entries, ungroup_entries, GroupedTable};
use tq3d::tensors::{self, CompressedTensor, TensorFile};
use tq3d::{BetaCodebook, Matrix, Quantizer, Rotation};

use output::{
    emit, read_file, write_atomic, CodebookSummary, PlySummary, RatioSummary, SceneSummary,
    TensorSummary,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(tq3d::Error),
    Io(PathBuf, io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage: {msg}"),
            CliError::Data(e) => write!(f, "{e}"),
            CliError::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

impl From<tq3d::Error> for CliError {
    fn from(e: tq3d::Error) -> Self {
        match e {
            tq3d::Error::Usage(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "tq3d",
    version,
    about = "Data-oblivious vector quantization for 3D reconstruction parameters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Lloyd-Max codebook for (dim, bits) and optionally write it as TQCB
    Codebook(CodebookArgs),
    /// Compress a 3DGS PLY into a TQ3D container
    CompressGs(CompressGsArgs),
    /// Reconstruct a PLY from a TQ3D container
    DecompressGs(DecompressGsArgs),
    /// Prune a PLY by opacity and/or truncate its SH degree
    PruneGs(PruneGsArgs),
    /// Row-quantize a TQTN matrix into a TQKV container
    CompressTensor(CompressTensorArgs),
    /// Reconstruct a TQTN matrix from a TQKV container
    DecompressTensor(DecompressTensorArgs),
    /// Compare exact and quantized-KV attention outputs
    AttnEval(AttnEvalArgs),
    /// Measure empirical MSE distortion against the theoretical bounds
    Eval(EvalArgs),
    /// Print byte-exact and closed-form compression ratios side by side
    Ratio(RatioArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Args)]
struct FormatArg {
    /// Report format
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1]"))
    }
}

fn parse_keep_fraction(s: &str) -> Result<f64, String> {
    let v = parse_unit(s)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err("keep fraction must be positive".into())
    }
}

fn parse_sh_dim(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(d) if gsplat::degree_for_sh_dim(d).is_some() => Ok(d),
        _ => Err(format!("'{s}' is not one of 0, 9, 24, 45")),
    }
}

fn bits_parser() -> clap::builder::RangedI64ValueParser<u8> {
    clap::value_parser!(u8).range(1..=8)
}

#[derive(Args)]
struct SceneFilter {
    /// Drop Gaussians with sigmoid(opacity) below this threshold
    #[arg(long, value_name = "TAU", value_parser = parse_unit)]
    prune_opacity: Option<f64>,
    /// Truncate spherical harmonics to this degree
    #[arg(long, value_name = "L", value_parser = clap::value_parser!(u32).range(0..=3))]
    sh_degree: Option<u32>,
}

impl SceneFilter {
    fn apply(&self, cloud: GaussianCloud) -> Result<GaussianCloud, CliError> {
        let mut cloud = cloud;
        if let Some(tau) = self.prune_opacity {
            cloud = gsplat::prune_opacity(&cloud, tau)?;
            log::info!("pruned to {} Gaussians at tau = {tau}", cloud.count);
        }
        if let Some(l) = self.sh_degree {
            cloud = gsplat::reduce_sh_degree(&cloud, l)?;
            log::info!("reduced SH to degree {l} ({} coefficients)", cloud.sh_dim);
        }
        Ok(cloud)
    }
}

#[derive(Args)]
struct CodebookArgs {
    /// Vector dimension
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=65536))]
    dim: u64,
    /// Bits per coordinate
    #[arg(long, default_value_t = 3, value_parser = bits_parser())]
    bits: u8,
    /// Write the codebook as a TQCB file
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct CompressGsArgs {
    /// Input PLY (binary little-endian)
    input: PathBuf,
    /// Bits per SH coefficient
    #[arg(long, default_value_t = 3, value_parser = bits_parser())]
    bits: u8,
    /// Rotation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    filter: SceneFilter,
    /// Store the rotation matrix in the container instead of only its seed
    #[arg(long)]
    embed_rotation: bool,
    /// Output TQ3D container
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct DecompressGsArgs {
    /// Input TQ3D container
    input: PathBuf,
    /// Output PLY
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct PruneGsArgs {
    /// Input PLY
    input: PathBuf,
    #[command(flatten)]
    filter: SceneFilter,
    /// Output PLY
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct CompressTensorArgs {
    /// Input TQTN tensor; the last dimension is the row width
    input: PathBuf,
    /// Bits per coordinate
    #[arg(long, default_value_t = 4, value_parser = bits_parser())]
    bits: u8,
    /// Rotation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows narrower than this are grouped into vectors of at least this width
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(16..=8192))]
    group_dim: u64,
    /// Output TQKV container
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct DecompressTensorArgs {
    /// Input TQKV container
    input: PathBuf,
    /// Original entry width, for containers written from a grouped table
    #[arg(long, requires = "entries")]
    entry_dim: Option<usize>,
    /// Original entry count, for containers written from a grouped table
    #[arg(long, requires = "entry_dim")]
    entries: Option<usize>,
    /// Output TQTN tensor
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttnEvalArgs {
    /// Query matrix (TQTN); omit Q, K and V to use seeded Gaussian tensors
    #[arg(long, requires_all = ["k", "v"])]
    q: Option<PathBuf>,
    /// Key matrix (TQTN)
    #[arg(long, requires_all = ["q", "v"])]
    k: Option<PathBuf>,
    /// Value matrix (TQTN)
    #[arg(long, requires_all = ["q", "k"])]
    v: Option<PathBuf>,
    /// Width of synthetic tensors
    #[arg(long, default_value_t = 1024, conflicts_with = "q", value_parser = clap::value_parser!(u64).range(2..=8192))]
    dim: u64,
    /// Number of synthetic queries
    #[arg(long, default_value_t = 64, conflicts_with = "q")]
    queries: usize,
    /// Number of synthetic keys and values
    #[arg(long, default_value_t = 64, conflicts_with = "q")]
    keys: usize,
    /// Bit widths to evaluate (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "4", value_parser = bits_parser())]
    bits: Vec<u8>,
    /// Seed for the rotations (keys use SEED, values SEED+1) and synthetic tensors
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attention head size; the logit scale is 1/sqrt(head-dim)
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    head_dim: u64,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct EvalArgs {
    /// Vector dimension
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..=8192))]
    dim: u64,
    /// Bit widths to evaluate (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "4", value_parser = bits_parser())]
    bits: Vec<u8>,
    /// Number of random unit vectors
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(100..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    format: FormatArg,
}

#[derive(Args)]
struct RatioArgs {
    /// PLY to measure; without it, --count and --sh-dim describe a hypothetical scene
    input: Option<PathBuf>,
    /// Gaussian count of the hypothetical scene
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    count: Option<usize>,
    /// SH rest coefficients of the hypothetical scene
    #[arg(long, default_value_t = 45, conflicts_with = "input", value_parser = parse_sh_dim)]
    sh_dim: usize,
    /// Fraction of Gaussians kept by pruning in the hypothetical scene
    #[arg(long, default_value_t = 1.0, conflicts_with = "input", value_parser = parse_keep_fraction)]
    keep_fraction: f64,
    #[arg(long, default_value_t = 3, value_parser = bits_parser())]
    bits: u8,
    #[command(flatten)]
    filter: SceneFilter,
    #[arg(long)]
    embed_rotation: bool,
    #[command(flatten)]
    format: FormatArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tq3d: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Applies `TQ_THREADS` (0 or unset = one thread per core).
fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("TQ_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().map_err(|_| {
        CliError::Usage(format!(
            "TQ_THREADS must be a non-negative integer, got '{raw}'"
        ))
    })?;
    #[cfg(feature = "parallel")]
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("TQ_THREADS: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Codebook(a) => codebook(a),
        Command::CompressGs(a) => compress_gs(a),
        Command::DecompressGs(a) => decompress_gs(a),
        Command::PruneGs(a) => prune_gs(a),
        Command::CompressTensor(a) => compress_tensor(a),
        Command::DecompressTensor(a) => decompress_tensor(a),
        Command::AttnEval(a) => attn_eval(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ratio(a) => ratio(a),
    }
}

fn codebook(a: CodebookArgs) -> Result<(), CliError> {
    let cb = BetaCodebook::solve(a.dim as usize, a.bits)?.rounded_to_f32()?;
    if let Some(path) = &a.out {
        write_atomic(path, &cb.to_bytes())?;
    }
    let summary = CodebookSummary {
        dim: cb.dim(),
        bits: cb.bits(),
        levels: cb.levels(),
        expected_distortion: cb.expected_distortion(),
        upper_bound: eval::bound_mse(cb.bits()),
        lower_bound: eval::lower_bound_mse(cb.bits()),
        centroids: cb
            .centroids()
            .iter()
            .map(|c| format!("{}", *c as f32))
            .collect::<Vec<_>>()
            .join(" "),
    };
    emit(&[summary], a.format.format.into(), None)
}

fn load_ply(path: &Path) -> Result<(GaussianCloud, u64), CliError> {
    let bytes = read_file(path)?;
    let cloud = gsplat::parse_ply(&bytes)?;
    Ok((cloud, bytes.len() as u64))
}

fn closed_form_ratio(input: &GaussianCloud, kept: &GaussianCloud, bits: u8) -> Option<f64> {
    if input.count == 0 || kept.count == 0 || kept.sh_dim == 0 {
        return None;
    }
    let rho = kept.count as f64 / input.count as f64;
    let r = kept.sh_dim as f64 / input.sh_dim as f64;
    gsplat::approx_ratio(rho, bits, r, input.sh_dim).ok()
}

fn sh_stats(original: &GaussianCloud, recon: &GaussianCloud) -> (f64, f64) {
    if original.count == 0 {
        return (0.0, 0.0);
    }
    let err: f64 = original
        .sh_rest
        .iter()
        .zip(&recon.sh_rest)
        .map(|(a, b)| f64::from(a - b).powi(2))
        .sum();
    (original.mean_sh_norm_sq(), err / original.count as f64)
}

fn compress_gs(a: CompressGsArgs) -> Result<(), CliError> {
    let (input, original_bytes) = load_ply(&a.input)?;
    let cloud = a.filter.apply(input.clone())?;
    let opts = CompressOptions {
        embed_rotation: a.embed_rotation && cloud.sh_dim > 0,
    };
    let scene = gsplat::compress_cloud(&cloud, a.bits, a.seed, &opts)?;
    let bytes = scene.to_bytes();
    write_atomic(&a.out, &bytes)?;
    let recon = gsplat::decompress_cloud(&scene)?;
    let (mean_sh_norm_sq, mean_sh_mse) = sh_stats(&cloud, &recon);
    let summary = SceneSummary {
        input_count: input.count,
        count: cloud.count,
        input_sh_dim: input.sh_dim,
        sh_dim: cloud.sh_dim,
        bits: a.bits,
        original_bytes,
        container_bytes: bytes.len() as u64,
        exact_ratio: gsplat::exact_ratio(&scene, original_bytes),
        formula_ratio: closed_form_ratio(&input, &cloud, a.bits),
        mean_sh_norm_sq,
        mean_sh_mse,
    };
    emit(&[summary], a.format.format.into(), None)
}

fn decompress_gs(a: DecompressGsArgs) -> Result<(), CliError> {
    let scene = CompressedScene::from_bytes(&read_file(&a.input)?)?;
    let cloud = gsplat::decompress_cloud(&scene)?;
    let ply = gsplat::write_ply(&cloud);
    write_atomic(&a.out, &ply)?;
    let summary = PlySummary {
        input_count: cloud.count,
        count: cloud.count,
        sh_dim: cloud.sh_dim,
        bytes: ply.len() as u64,
    };
    emit(&[summary], a.format.format.into(), None)
}

fn prune_gs(a: PruneGsArgs) -> Result<(), CliError> {
    if a.filter.prune_opacity.is_none() && a.filter.sh_degree.is_none() {
        return Err(CliError::Usage(
            "prune-gs needs --prune-opacity and/or --sh-degree".into(),
        ));
    }
    let (input, _) = load_ply(&a.input)?;
    let cloud = a.filter.apply(input.clone())?;
    let ply = gsplat::write_ply(&cloud);
    write_atomic(&a.out, &ply)?;
    let summary = PlySummary {
        input_count: input.count,
        count: cloud.count,
        sh_dim: cloud.sh_dim,
        bytes: ply.len() as u64,
    };
    emit(&[summary], a.format.format.into(), None)
}

fn compress_tensor(a: CompressTensorArgs) -> Result<(), CliError> {
    let table = tensors::read_tensor(&read_file(&a.input)?)?.to_matrix();
    let target = a.group_dim as usize;
    let (matrix, meta) = if table.cols() < target {
        let (grouped, meta) = group_entries(&table, target)?;
        log::info!(
            "grouped {} entries of width {} into {} vectors of width {}",
            table.rows(),
            table.cols(),
            grouped.rows(),
            meta.effective_dim()
        );
        (grouped, meta)
    } else {
        let meta = GroupedTable {
            entry_dim: table.cols(),
            group: 1,
            pad_count: 0,
        };
        (table.clone(), meta)
    };
    let ct = tensors::compress_tensor(&matrix, a.bits, a.seed)?;
    let bytes = ct.to_bytes();
    write_atomic(&a.out, &bytes)?;
    let summary = TensorSummary {
        rows: matrix.rows(),
        cols: matrix.cols(),
        grouped: meta.group > 1,
        entry_dim: meta.entry_dim,
        entries: table.rows(),
        group: meta.group,
        pad_count: meta.pad_count,
        bits: a.bits,
        container_bytes: bytes.len() as u64,
        kv_ratio: tensors::kv_ratio(matrix.cols(), a.bits),
    };
    emit(&[summary], a.format.format.into(), None)
}

fn decompress_tensor(a: DecompressTensorArgs) -> Result<(), CliError> {
    let ct = CompressedTensor::from_bytes(&read_file(&a.input)?)?;
    let mut matrix = tensors::decompress_tensor(&ct)?;
    if let (Some(entry_dim), Some(entries)) = (a.entry_dim, a.entries) {
        if entry_dim == 0 || matrix.cols() % entry_dim != 0 {
            return Err(CliError::Usage(format!(
                "--entry-dim {entry_dim} does not divide the stored width {}",
                matrix.cols()
            )));
        }
        let group = matrix.cols() / entry_dim;
        let capacity = matrix.rows() * group;
        if entries > capacity || capacity - entries >= group {
            return Err(CliError::Usage(format!(
                "--entries {entries} does not fit {} grouped rows of {group} entries",
                matrix.rows()
            )));
        }
        let meta = GroupedTable {
            entry_dim,
            group,
            pad_count: capacity - entries,
        };
        matrix = ungroup_entries(&matrix, &meta, entries)?;
    }
    write_atomic(
        &a.out,
        &tensors::write_tensor(&TensorFile::from_matrix(&matrix)),
    )
}

fn load_matrix(path: &Path) -> Result<Matrix, CliError> {
    Ok(tensors::read_tensor(&read_file(path)?)?.to_matrix())
}

fn attn_eval(a: AttnEvalArgs) -> Result<(), CliError> {
    let (q, k, v) = match (&a.q, &a.k, &a.v) {
        (Some(q), Some(k), Some(v)) => (load_matrix(q)?, load_matrix(k)?, load_matrix(v)?),
        _ => {
            let d = a.dim as usize;
            (
                tensors::gaussian_matrix(a.queries, d, a.seed, 10),
                tensors::gaussian_matrix(a.keys, d, a.seed, 11),
                tensors::gaussian_matrix(a.keys, d, a.seed, 12),
            )
        }
    };
    let scale = 1.0 / (a.head_dim as f64).sqrt();
    let key_rotation = Arc::new(Rotation::haar(k.cols(), a.seed)?);
    let value_rotation = Arc::new(Rotation::haar(v.cols(), a.seed.wrapping_add(1))?);
    let mut reports = Vec::with_capacity(a.bits.len());
    for &bits in &a.bits {
        let kq = Quantizer::new(key_rotation.clone(), BetaCodebook::solve(k.cols(), bits)?)?;
        let vq = Quantizer::new(value_rotation.clone(), BetaCodebook::solve(v.cols(), bits)?)?;
        reports.push(tensors::attention_error_with(&q, &k, &v, &kq, &vq, scale)?);
    }
    emit(&reports, a.format.format.into(), a.out.as_deref())
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let dim = a.dim as usize;
    let rotation = Arc::new(Rotation::haar(dim, a.seed)?);
    let mut reports = Vec::with_capacity(a.bits.len());
    for &bits in &a.bits {
        let quantizer = Quantizer::new(rotation.clone(), BetaCodebook::solve(dim, bits)?)?;
        reports.push(eval::measure_dmse_with(
            &quantizer,
            a.trials as usize,
            a.seed,
        )?);
    }
    emit(&reports, a.format.format.into(), a.out.as_deref())
}

fn ratio(a: RatioArgs) -> Result<(), CliError> {
    let summary = match &a.input {
        Some(path) => {
            let (input, original_bytes) = load_ply(path)?;
            let cloud = a.filter.apply(input.clone())?;
            let embed = a.embed_rotation && cloud.sh_dim > 0;
            let container = gsplat::scene_len(cloud.count, cloud.sh_dim, a.bits, embed) as u64;
            RatioSummary {
                input_count: input.count,
                count: cloud.count,
                input_sh_dim: input.sh_dim,
                sh_dim: cloud.sh_dim,
                bits: a.bits,
                original_bytes,
                container_bytes: container,
                exact_ratio: original_bytes as f64 / container as f64,
                formula_ratio: closed_form_ratio(&input, &cloud, a.bits),
            }
        }
        None => {
            if a.filter.prune_opacity.is_some() {
                return Err(CliError::Usage(
                    "--prune-opacity needs an input PLY; use --keep-fraction for a hypothetical scene".into(),
                ));
            }
            let count = a.count.expect("required by clap");
            let sh_out = match a.filter.sh_degree {
                Some(l) => {
                    let reduced = gsplat::sh_dim_for_degree(l);
                    if reduced > a.sh_dim {
                        return Err(CliError::Usage(format!(
                            "--sh-degree {l} exceeds the degree of --sh-dim {}",
                            a.sh_dim
                        )));
                    }
                    reduced
                }
                None => a.sh_dim,
            };
            let kept = (count as f64 * a.keep_fraction).round() as usize;
            let original_bytes = gsplat::ply_size(count, a.sh_dim) as u64;
            let embed = a.embed_rotation && sh_out > 0;
            let container = gsplat::scene_len(kept, sh_out, a.bits, embed) as u64;
            let formula = (a.sh_dim > 0 && sh_out > 0)
                .then(|| {
                    gsplat::approx_ratio(
                        a.keep_fraction,
                        a.bits,
                        sh_out as f64 / a.sh_dim as f64,
                        a.sh_dim,
                    )
                })
                .transpose()?;
            RatioSummary {
                input_count: count,
                count: kept,
                input_sh_dim: a.sh_dim,
                sh_dim: sh_out,
                bits: a.bits,
                original_bytes,
                container_bytes: container,
                exact_ratio: original_bytes as f64 / container as f64,
                formula_ratio: formula,
            }
        }
    };
    emit(&[summary], a.format.format.into(), None)
}
