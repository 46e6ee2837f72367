//! Empirical distortion measurements against the theoretical bounds, the coordinate-law
//! KS test and JSON/CSV report output.
//!
//! Inputs are uniform unit vectors (normalized Gaussian draws). Trial `i` always draws
//! from ChaCha stream `i + 1` of the seed and the rotation uses stream 0, so reports are
//! identical whether trials run in parallel or not.
//!
//! The bounds are worst-case statements over inputs. Because the rotation is Haar, the
//! uniform-input average measured here is the same for every fixed input, but no
//! adversarial search is attempted.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::codebook::CoordinateDensity;
use crate::rotation::{dot, GaussianStream};
use crate::{check_bits, par, Error, Quantizer, Result, Rotation};

/// `π√3/2`, the high-resolution constant of the upper bound.
pub const BOUND_CONSTANT: f64 = 2.720_699_046_351_326_6;

/// Minimum trial count accepted by the measurement functions.
pub const MIN_TRIALS: usize = 100;
pub const MIN_KS_SAMPLES: usize = 1000;

/// Rotations up to this dimension are generated in full for each KS sample. Above it
/// only the first column is drawn, which has the same law.
const FULL_ROTATION_KS_DIM: usize = 64;

pub fn bound_mse(bits: u8) -> f64 {
    BOUND_CONSTANT * lower_bound_mse(bits)
}

pub fn lower_bound_mse(bits: u8) -> f64 {
    4f64.powi(-i32::from(bits))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub dim: usize,
    pub bits: u8,
    pub trials: usize,
    pub mean_mse: f64,
    pub std_err: f64,
    pub upper_bound: f64,
    pub lower_bound: f64,
    pub oracle_distortion: f64,
    pub ks_statistic: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DprodReport {
    pub dim: usize,
    pub bits: u8,
    pub trials: usize,
    /// Mean of `(⟨y, x̃⟩ - ⟨y, x⟩)²`.
    pub mean_sq_error: f64,
    pub std_err: f64,
    /// Mean of `⟨y, x̃⟩ - ⟨y, x⟩`.
    pub mean_signed_error: f64,
    pub y_norm_sq: f64,
    /// `‖y‖² 4^{-b} / d`.
    pub lower_bound: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub dim: usize,
    pub samples: usize,
    pub statistic: f64,
    /// `1.63/√n`, the α = 0.01 critical value.
    pub critical_value: f64,
    pub variance: f64,
    pub seed: u64,
}

fn check_trials(trials: usize, min: usize, what: &'static str) -> Result<()> {
    if trials < min {
        return Err(Error::Range {
            what,
            value: trials.to_string(),
            allowed: if min == MIN_TRIALS {
                ">= 100"
            } else {
                ">= 1000"
            },
        });
    }
    Ok(())
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Counter-derived seed for sample `index` (splitmix64 finalizer).
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Empirical `E‖x - x̃‖²` over uniform unit `x`.
pub fn measure_dmse(dim: usize, bits: u8, trials: usize, seed: u64) -> Result<DistortionReport> {
    check_bits(bits)?;
    check_trials(trials, MIN_TRIALS, "trials")?;
    let quantizer = Quantizer::build(dim, bits, seed)?;
    measure_dmse_with(&quantizer, trials, seed)
}

/// [`measure_dmse`] with a prebuilt quantizer; trial inputs still come from `seed`.
pub fn measure_dmse_with(
    quantizer: &Quantizer,
    trials: usize,
    seed: u64,
) -> Result<DistortionReport> {
    check_trials(trials, MIN_TRIALS, "trials")?;
    let dim = quantizer.dim();
    let first_row = quantizer.rotation().row(0);
    let results = par::try_map_range(trials, |i| -> Result<(f64, f64)> {
        let x = GaussianStream::new(seed, i as u64 + 1).unit_vector(dim);
        let recon = quantizer.dequantize_f64(&quantizer.quantize_f64(&x)?)?;
        let err = x.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((err, dot(first_row, &x)))
    })?;
    let errors: Vec<f64> = results.iter().map(|r| r.0).collect();
    let mut coords: Vec<f64> = results.iter().map(|r| r.1).collect();
    let (mean_mse, std_err) = mean_and_stderr(&errors);
    let bits = quantizer.bits();
    Ok(DistortionReport {
        dim,
        bits,
        trials,
        mean_mse,
        std_err,
        upper_bound: bound_mse(bits),
        lower_bound: lower_bound_mse(bits),
        oracle_distortion: quantizer.codebook().expected_distortion(),
        ks_statistic: ks_statistic(dim, &mut coords)?,
        seed,
    })
}

/// Empirical inner-product distortion for a fixed random unit `y` (stream `u64::MAX`).
pub fn measure_dprod(dim: usize, bits: u8, trials: usize, seed: u64) -> Result<DprodReport> {
    measure_dprod_scaled(dim, bits, trials, seed, 1.0)
}

/// [`measure_dprod`] with `y` scaled by `y_scale`.
pub fn measure_dprod_scaled(
    dim: usize,
    bits: u8,
    trials: usize,
    seed: u64,
    y_scale: f64,
) -> Result<DprodReport> {
    check_bits(bits)?;
    check_trials(trials, MIN_TRIALS, "trials")?;
    let quantizer = Quantizer::build(dim, bits, seed)?;
    let y: Vec<f64> = GaussianStream::new(seed, u64::MAX)
        .unit_vector(dim)
        .into_iter()
        .map(|v| v * y_scale)
        .collect();
    let diffs = par::try_map_range(trials, |i| -> Result<f64> {
        let x = GaussianStream::new(seed, i as u64 + 1).unit_vector(dim);
        let recon = quantizer.dequantize_f64(&quantizer.quantize_f64(&x)?)?;
        Ok(dot(&y, &recon) - dot(&y, &x))
    })?;
    let squares: Vec<f64> = diffs.iter().map(|d| d * d).collect();
    let (mean_sq_error, std_err) = mean_and_stderr(&squares);
    let y_norm_sq = y.iter().map(|v| v * v).sum::<f64>();
    Ok(DprodReport {
        dim,
        bits,
        trials,
        mean_sq_error,
        std_err,
        mean_signed_error: diffs.iter().sum::<f64>() / trials as f64,
        y_norm_sq,
        lower_bound: y_norm_sq * lower_bound_mse(bits) / dim as f64,
        seed,
    })
}

/// First coordinates of a fixed unit vector under `samples` independent seeded rotations.
///
/// Up to dimension 64 the vector is a seeded random unit vector and each rotation is
/// generated in full. Above that the vector is `e₁`, whose image is the rotation's first
/// column, so only that column is drawn.
pub fn coordinate_samples(dim: usize, samples: usize, seed: u64) -> Result<Vec<f64>> {
    // Validates the dimension range even when no samples are requested.
    Rotation::haar_first_column(dim, seed)?;
    if dim <= FULL_ROTATION_KS_DIM {
        let x = GaussianStream::new(seed, 0).unit_vector(dim);
        par::try_map_range(samples, |i| {
            let rotation = Rotation::haar(dim, derive_seed(seed, i as u64))?;
            Ok(dot(rotation.row(0), &x))
        })
    } else {
        par::try_map_range(samples, |i| {
            Ok(Rotation::haar_first_column(dim, derive_seed(seed, i as u64))?[0])
        })
    }
}

/// Mean of `x₁²` over `samples` seeded Haar first columns; the exact value is `1/d`.
///
/// Always uses the first-column draw, so large sample counts stay cheap at any `d`.
pub fn coordinate_variance(dim: usize, samples: usize, seed: u64) -> Result<f64> {
    check_trials(samples, MIN_KS_SAMPLES, "samples")?;
    let squares = par::try_map_range(samples, |i| {
        Rotation::haar_first_column(dim, derive_seed(seed, i as u64)).map(|c| c[0] * c[0])
    })?;
    Ok(squares.iter().sum::<f64>() / samples as f64)
}

/// Kolmogorov-Smirnov distance between `samples` and the coordinate law. Sorts in place.
pub fn ks_statistic(dim: usize, samples: &mut [f64]) -> Result<f64> {
    let density = CoordinateDensity::new(dim)?;
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let f = density.cdf(x.clamp(-1.0, 1.0));
        sup = sup.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(sup)
}

pub fn ks_coordinate_test(dim: usize, samples: usize, seed: u64) -> Result<KsReport> {
    check_trials(samples, MIN_KS_SAMPLES, "samples")?;
    let mut coords = coordinate_samples(dim, samples, seed)?;
    let variance = coords.iter().map(|v| v * v).sum::<f64>() / samples as f64;
    Ok(KsReport {
        dim,
        samples,
        statistic: ks_statistic(dim, &mut coords)?,
        critical_value: 1.63 / (samples as f64).sqrt(),
        variance,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Usage(format!(
                "unknown report format '{other}' (expected json or csv)"
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Json => "json",
            Self::Csv => "csv",
        })
    }
}

/// A flat record type with a fixed CSV column order.
pub trait Record: Serialize + DeserializeOwned {
    const FIELDS: &'static [&'static str];
}

impl Record for DistortionReport {
    const FIELDS: &'static [&'static str] = &[
        "dim",
        "bits",
        "trials",
        "mean_mse",
        "std_err",
        "upper_bound",
        "lower_bound",
        "oracle_distortion",
        "ks_statistic",
        "seed",
    ];
}

impl Record for DprodReport {
    const FIELDS: &'static [&'static str] = &[
        "dim",
        "bits",
        "trials",
        "mean_sq_error",
        "std_err",
        "mean_signed_error",
        "y_norm_sq",
        "lower_bound",
        "seed",
    ];
}

impl Record for KsReport {
    const FIELDS: &'static [&'static str] = &[
        "dim",
        "samples",
        "statistic",
        "critical_value",
        "variance",
        "seed",
    ];
}

impl Record for crate::tensors::AttentionMetrics {
    const FIELDS: &'static [&'static str] = &[
        "bits",
        "output_mse",
        "key_mse",
        "value_mse",
        "key_relative_mse",
        "value_relative_mse",
        "kv_ratio",
    ];
}

fn csv_error(e: csv::Error) -> Error {
    Error::format(format!("csv: {e}"))
}

pub fn emit_records<T: Record>(records: &[T], format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(records)
                .map_err(|e| Error::format(format!("json: {e}")))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(Vec::new());
            w.write_record(T::FIELDS).map_err(csv_error)?;
            for r in records {
                w.serialize(r).map_err(csv_error)?;
            }
            w.into_inner()
                .map_err(|e| Error::format(format!("csv: {e}")))
        }
    }
}

pub fn parse_records<T: Record>(bytes: &[u8], format: ReportFormat) -> Result<Vec<T>> {
    match format {
        ReportFormat::Json => {
            serde_json::from_slice(bytes).map_err(|e| Error::format(format!("json: {e}")))
        }
        ReportFormat::Csv => {
            let mut r = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(bytes);
            let headers = r.headers().map_err(csv_error)?.clone();
            if headers.iter().ne(T::FIELDS.iter().copied()) {
                return Err(Error::format(format!("unexpected csv header {headers:?}")));
            }
            r.deserialize().map(|rec| rec.map_err(csv_error)).collect()
        }
    }
}

pub fn emit_report(reports: &[DistortionReport], format: ReportFormat) -> Result<Vec<u8>> {
    emit_records(reports, format)
}

pub fn parse_report(bytes: &[u8], format: ReportFormat) -> Result<Vec<DistortionReport>> {
    parse_records(bytes, format)
}
