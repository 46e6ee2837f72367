//! Lloyd-Max codebooks for the hypersphere coordinate density.
//!
//! A single coordinate of a uniform point on the unit sphere in `d` dimensions has density
//!
//! ```text
//! f(x) = Γ(d/2) / (√π Γ((d-1)/2)) · (1 - x²)^((d-3)/2),   x ∈ [-1, 1]
//! ```
//!
//! which is a symmetric Beta law with variance exactly `1/d`. The optimal scalar
//! quantizer for it is found by Lloyd iteration (each centroid is the conditional mean
//! of its nearest-neighbour cell), accelerated with safeguarded Newton steps.
//!
//! Numerics: the CDF is integrated in the angle variable `x = sin θ`, where the
//! integrand becomes `cos^(d-2) θ` and is smooth for every `d ≥ 2` (including the
//! endpoint singularity at `d = 2`). It is tabulated on uniform panels with 8-point
//! Gauss-Legendre per panel. The partial first moment has the closed form
//! `∫_{-1}^x t f(t) dt = -K (1 - x²)^((d-1)/2) / (d - 1)`.

use statrs::function::gamma::ln_gamma;

use crate::bytes::{put_f32s, read_f32s, Reader};
use crate::{check_bits, Error, Result};

const GL_NODES: [f64; 8] = [
    -0.960_289_856_497_536_3,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

const MIN_PANELS: usize = 4096;

pub(crate) const CODEBOOK_MAGIC: &[u8; 4] = b"TQCB";
const CODEBOOK_VERSION: u16 = 1;

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            dim,
            reason: "the coordinate density needs d >= 2",
        });
    }
    Ok(())
}

fn check_domain(x: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::OutOfDomain { value: x });
    }
    Ok(())
}

/// Density of one coordinate of a uniform point on the unit sphere in `dim` dimensions.
///
/// Returns `+inf` at `|x| = 1` when `dim = 2`.
pub fn beta_pdf(dim: usize, x: f64) -> Result<f64> {
    check_dim(dim)?;
    check_domain(x)?;
    Ok(pdf_unchecked(dim, log_normalizer(dim), x))
}

/// CDF of the coordinate density, `∫_{-1}^x f(t) dt`.
///
/// Builds a fresh quadrature table per call; use [`CoordinateDensity`] for repeated
/// evaluation.
pub fn beta_cdf(dim: usize, x: f64) -> Result<f64> {
    check_domain(x)?;
    Ok(CoordinateDensity::new(dim)?.cdf(x))
}

fn log_normalizer(dim: usize) -> f64 {
    let d = dim as f64;
    ln_gamma(d / 2.0) - 0.5 * std::f64::consts::PI.ln() - ln_gamma((d - 1.0) / 2.0)
}

fn pdf_unchecked(dim: usize, log_k: f64, x: f64) -> f64 {
    let one_minus = 1.0 - x * x;
    match dim {
        3 => log_k.exp(),
        2 if one_minus <= 0.0 => f64::INFINITY,
        _ if one_minus <= 0.0 => 0.0,
        _ => (log_k + 0.5 * (dim as f64 - 3.0) * one_minus.ln()).exp(),
    }
}

/// Tabulated coordinate density for a fixed dimension.
#[derive(Debug, Clone)]
pub struct CoordinateDensity {
    dim: usize,
    log_k: f64,
    panel_width: f64,
    // cumulative un-normalized mass at the left edge of each panel, plus the total
    cumulative: Vec<f64>,
}

impl CoordinateDensity {
    pub fn new(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let log_k = log_normalizer(dim);
        let panels = MIN_PANELS.max((64.0 * (dim as f64).sqrt()).ceil() as usize);
        let panel_width = std::f64::consts::PI / panels as f64;
        let mut density = Self {
            dim,
            log_k,
            panel_width,
            cumulative: Vec::with_capacity(panels + 1),
        };
        let mut acc = 0.0;
        density.cumulative.push(0.0);
        for p in 0..panels {
            let a = -std::f64::consts::FRAC_PI_2 + p as f64 * panel_width;
            acc += density.angular_integral(a, a + panel_width);
            density.cumulative.push(acc);
        }
        Ok(density)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K cos^(d-2) θ`, the density in the angle variable.
    fn angular(&self, theta: f64) -> f64 {
        if self.dim == 2 {
            return self.log_k.exp();
        }
        let c = theta.cos();
        if c <= 0.0 {
            return 0.0;
        }
        (self.log_k + (self.dim as f64 - 2.0) * c.ln()).exp()
    }

    fn angular_integral(&self, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        GL_NODES
            .iter()
            .zip(GL_WEIGHTS)
            .map(|(&n, w)| w * self.angular(mid + half * n))
            .sum::<f64>()
            * half
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().expect("table is never empty")
    }

    pub fn pdf(&self, x: f64) -> f64 {
        pdf_unchecked(self.dim, self.log_k, x)
    }

    /// `P(X <= x)`. Values outside `[-1, 1]` clamp.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let theta = x.asin();
        let offset = theta + std::f64::consts::FRAC_PI_2;
        let panels = self.cumulative.len() - 1;
        let p = ((offset / self.panel_width) as usize).min(panels - 1);
        let left = -std::f64::consts::FRAC_PI_2 + p as f64 * self.panel_width;
        let value = self.cumulative[p] + self.angular_integral(left, theta);
        (value / self.total()).clamp(0.0, 1.0)
    }

    /// Mass of the interval `[a, b]`, evaluated from whichever tail keeps precision.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        if a >= 0.0 {
            // upper tail via symmetry: P(a <= X <= b) = F(-a) - F(-b)
            self.cdf(-a) - self.cdf(-b)
        } else {
            self.cdf(b) - self.cdf(a)
        }
    }

    /// `∫_{-1}^x t f(t) dt`, in closed form.
    pub fn partial_moment(&self, x: f64) -> f64 {
        let one_minus = (1.0 - x * x).max(0.0);
        if one_minus == 0.0 {
            return 0.0;
        }
        let d = self.dim as f64;
        -(self.log_k + 0.5 * (d - 1.0) * one_minus.ln()).exp() / (d - 1.0)
    }

    /// `∫_a^b t f(t) dt`.
    pub fn moment(&self, a: f64, b: f64) -> f64 {
        self.partial_moment(b) - self.partial_moment(a)
    }

    /// Inverse CDF by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Per-coordinate MSE of nearest-centroid quantization with sorted `centroids`.
    pub fn coordinate_distortion(&self, centroids: &[f64]) -> f64 {
        // E[(X - c)^2] over each cell = E[X^2] - 2 c E[X; cell] + c^2 P(cell), with E[X^2] = 1/d.
        let mut acc = 1.0 / self.dim as f64;
        let mut lower = -1.0;
        for (k, &c) in centroids.iter().enumerate() {
            let upper = centroids.get(k + 1).map_or(1.0, |&next| 0.5 * (c + next));
            acc += c * c * self.mass(lower, upper) - 2.0 * c * self.moment(lower, upper);
            lower = upper;
        }
        acc.max(0.0)
    }

    /// One Lloyd update: every centroid moves to the conditional mean of its cell.
    /// Empty cells keep their centroid.
    pub fn lloyd_map(&self, centroids: &[f64]) -> Vec<f64> {
        let mut lower = -1.0;
        centroids
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let upper = centroids.get(k + 1).map_or(1.0, |&next| 0.5 * (c + next));
                let m = self.mass(lower, upper);
                let mu = self.moment(lower, upper);
                lower = upper;
                if m > 0.0 {
                    mu / m
                } else {
                    c
                }
            })
            .collect()
    }
}

/// Options for [`solve_lloyd_max`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the largest centroid movement of a Lloyd update.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Try a Newton step on the fixed-point equation each iteration, keeping it only when
    /// it does not increase the objective. Plain Lloyd needs ~10^5 iterations at 8 bits.
    pub newton: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 10_000,
            newton: true,
        }
    }
}

/// Lloyd-Max codebook for the coordinate density at `(dim, bits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaCodebook {
    dim: usize,
    bits: u8,
    centroids: Vec<f64>,
    boundaries: Vec<f64>,
    residual_distortion: f64,
}

/// Diagnostics from a solver run.
#[derive(Debug, Clone)]
pub struct SolveTrace {
    pub iterations: usize,
    /// Per-coordinate objective after every iteration, starting with the initial guess.
    pub objective: Vec<f64>,
    pub newton_steps: usize,
}

/// Solves the Lloyd-Max problem for the coordinate density at `(dim, bits)`.
pub fn solve_lloyd_max(dim: usize, bits: u8, opts: &SolverOptions) -> Result<BetaCodebook> {
    solve_lloyd_max_traced(dim, bits, opts).map(|(cb, _)| cb)
}

/// Expected squared error of quantizing a uniform unit vector coordinate-wise with `cb`.
pub fn expected_distortion(cb: &BetaCodebook) -> f64 {
    cb.expected_distortion()
}

pub fn quantize_scalar(cb: &BetaCodebook, y: f64) -> usize {
    cb.quantize(y)
}

/// As [`solve_lloyd_max`], also returning the objective history.
pub fn solve_lloyd_max_traced(
    dim: usize,
    bits: u8,
    opts: &SolverOptions,
) -> Result<(BetaCodebook, SolveTrace)> {
    check_bits(bits)?;
    let density = CoordinateDensity::new(dim)?;
    let levels = 1usize << bits;
    let half = levels / 2;

    // The density is symmetric, so only the positive half is solved. The cell of the
    // smallest positive centroid starts at 0.
    let mut pos: Vec<f64> = (half..levels)
        .map(|k| density.quantile((2 * k + 1) as f64 / (2 * levels) as f64))
        .collect();

    let mut trace = SolveTrace {
        iterations: 0,
        objective: vec![half_objective(&density, &pos)],
        newton_steps: 0,
    };
    let mut converged = false;
    let mut movement = f64::INFINITY;

    while trace.iterations < opts.max_iterations {
        let step = half_lloyd(&density, &pos);
        movement = step
            .means
            .iter()
            .zip(&pos)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if movement < opts.tolerance {
            converged = true;
            break;
        }
        trace.iterations += 1;

        let lloyd_obj = half_objective(&density, &step.means);
        let mut next = step.means.clone();
        let mut next_obj = lloyd_obj;
        if opts.newton {
            if let Some(candidate) = newton_candidate(&pos, &step) {
                let obj = half_objective(&density, &candidate);
                if obj <= lloyd_obj {
                    next = candidate;
                    next_obj = obj;
                    trace.newton_steps += 1;
                }
            }
        }
        pos = next;
        trace.objective.push(next_obj);
    }

    let centroids: Vec<f64> = pos
        .iter()
        .rev()
        .map(|&c| -c)
        .chain(pos.iter().copied())
        .collect();
    if !converged {
        return Err(Error::Convergence {
            iterations: trace.iterations,
            movement,
            last: centroids,
        });
    }
    let cb = BetaCodebook::with_density(&density, bits, centroids)?;
    Ok((cb, trace))
}

struct HalfStep {
    means: Vec<f64>,
    // d mean_j / d boundary below and above cell j
    d_lower: Vec<f64>,
    d_upper: Vec<f64>,
}

fn half_boundaries(pos: &[f64]) -> impl Iterator<Item = (f64, f64)> + '_ {
    (0..pos.len()).map(move |j| {
        let lo = if j == 0 {
            0.0
        } else {
            0.5 * (pos[j - 1] + pos[j])
        };
        let hi = pos.get(j + 1).map_or(1.0, |&n| 0.5 * (pos[j] + n));
        (lo, hi)
    })
}

fn half_lloyd(density: &CoordinateDensity, pos: &[f64]) -> HalfStep {
    let n = pos.len();
    let mut step = HalfStep {
        means: Vec::with_capacity(n),
        d_lower: Vec::with_capacity(n),
        d_upper: Vec::with_capacity(n),
    };
    for (j, (lo, hi)) in half_boundaries(pos).enumerate() {
        let m = density.mass(lo, hi);
        let mean = if m > 0.0 {
            density.moment(lo, hi) / m
        } else {
            pos[j]
        };
        step.means.push(mean);
        let (dl, du) = if m > 0.0 {
            (
                if j > 0 {
                    density.pdf(lo) * (mean - lo) / m
                } else {
                    0.0
                },
                if j + 1 < n {
                    density.pdf(hi) * (hi - mean) / m
                } else {
                    0.0
                },
            )
        } else {
            (0.0, 0.0)
        };
        step.d_lower.push(dl);
        step.d_upper.push(du);
    }
    step
}

/// Newton step for `p - T(p) = 0` with the tridiagonal Jacobian of the Lloyd map.
fn newton_candidate(pos: &[f64], step: &HalfStep) -> Option<Vec<f64>> {
    let n = pos.len();
    let diag: Vec<f64> = (0..n)
        .map(|j| 1.0 - 0.5 * (step.d_lower[j] + step.d_upper[j]))
        .collect();
    let sub: Vec<f64> = (0..n).map(|j| -0.5 * step.d_lower[j]).collect();
    let sup: Vec<f64> = (0..n).map(|j| -0.5 * step.d_upper[j]).collect();
    let rhs: Vec<f64> = (0..n).map(|j| step.means[j] - pos[j]).collect();
    let delta = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let candidate: Vec<f64> = pos.iter().zip(&delta).map(|(p, d)| p + d).collect();
    let ordered = candidate.first().is_some_and(|&c| c > 0.0)
        && candidate.last().is_some_and(|&c| c < 1.0)
        && candidate.windows(2).all(|w| w[0] < w[1]);
    ordered.then_some(candidate)
}

/// Thomas algorithm. `sub[0]` and `sup[n-1]` are ignored.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return None;
    }
    c[0] = sup[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - sub[i] * c[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return None;
        }
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Per-coordinate objective of a symmetric codebook given its positive half.
fn half_objective(density: &CoordinateDensity, pos: &[f64]) -> f64 {
    // Both halves contribute equally; E[X^2; X > 0] = 1 / (2d).
    let mut acc = 0.5 / density.dim() as f64;
    for (&c, (lo, hi)) in pos.iter().zip(half_boundaries(pos)) {
        acc += c * c * density.mass(lo, hi) - 2.0 * c * density.moment(lo, hi);
    }
    (2.0 * acc).max(0.0)
}

impl BetaCodebook {
    /// Solves with default [`SolverOptions`].
    pub fn solve(dim: usize, bits: u8) -> Result<Self> {
        solve_lloyd_max(dim, bits, &SolverOptions::default())
    }

    /// Builds a codebook from explicit centroids, validating the invariants.
    pub fn from_centroids(dim: usize, bits: u8, centroids: Vec<f64>) -> Result<Self> {
        check_bits(bits)?;
        let density = CoordinateDensity::new(dim)?;
        Self::with_density(&density, bits, centroids)
    }

    fn with_density(density: &CoordinateDensity, bits: u8, centroids: Vec<f64>) -> Result<Self> {
        let levels = 1usize << bits;
        if centroids.len() != levels {
            return Err(Error::shape(
                format!("{levels} centroids"),
                format!("{} centroids", centroids.len()),
            ));
        }
        if centroids.iter().any(|c| !c.is_finite() || c.abs() >= 1.0) {
            return Err(Error::format(
                "codebook centroids must lie strictly inside (-1, 1)",
            ));
        }
        if centroids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::format(
                "codebook centroids must be strictly increasing",
            ));
        }
        let asym = centroids
            .iter()
            .zip(centroids.iter().rev())
            .map(|(a, b)| (a + b).abs())
            .fold(0.0, f64::max);
        if asym > 1e-6 {
            return Err(Error::format(format!(
                "codebook is not symmetric (max |c_k + c_(K-1-k)| = {asym:e})"
            )));
        }
        let boundaries = centroids.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let residual_distortion = density.dim() as f64 * density.coordinate_distortion(&centroids);
        Ok(Self {
            dim: density.dim(),
            bits,
            centroids,
            boundaries,
            residual_distortion,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    /// Decision thresholds: midpoints of adjacent centroids.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Expected squared error of a whole unit vector, `d` times the per-coordinate objective.
    pub fn residual_distortion(&self) -> f64 {
        self.residual_distortion
    }

    /// Same as [`residual_distortion`](Self::residual_distortion).
    pub fn expected_distortion(&self) -> f64 {
        self.residual_distortion
    }

    #[inline]
    pub fn centroid(&self, index: usize) -> f64 {
        self.centroids[index]
    }

    /// Nearest-centroid index. Exact midpoint ties go to the lower index; values outside
    /// `[-1, 1]` land on the extreme centroids.
    #[inline]
    pub fn quantize(&self, y: f64) -> usize {
        self.boundaries.partition_point(|&m| m < y)
    }

    /// Codebook with centroids rounded through `f32`, as stored on disk.
    pub fn rounded_to_f32(&self) -> Result<Self> {
        let centroids = self.centroids.iter().map(|&c| c as f32 as f64).collect();
        Self::from_centroids(self.dim, self.bits, centroids)
    }

    /// Byte length of the serialized `TQCB` block.
    pub fn encoded_len(&self) -> usize {
        14 + 4 * self.levels()
    }

    /// Serializes as a `TQCB` block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out);
        out
    }

    pub(crate) fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(CODEBOOK_MAGIC);
        out.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(self.bits);
        out.extend_from_slice(&[0u8; 3]);
        let values: Vec<f32> = self.centroids.iter().map(|&c| c as f32).collect();
        put_f32s(out, &values);
    }

    /// Parses a standalone `TQCB` block.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader::new(bytes, "TQCB codebook");
        let cb = Self::read_from(&mut reader)?;
        reader.finish()?;
        Ok(cb)
    }

    pub(crate) fn read_from(reader: &mut Reader<'_>) -> Result<Self> {
        reader.magic(CODEBOOK_MAGIC)?;
        let version = reader.u16()?;
        if version != CODEBOOK_VERSION {
            return Err(Error::format(format!("unsupported TQCB version {version}")));
        }
        let dim = reader.u32()? as usize;
        let bits = reader.u8()?;
        check_bits(bits)
            .map_err(|_| Error::format(format!("TQCB bit width {bits} not in 1..=8")))?;
        reader.zeros(3)?;
        let raw = reader.take(4 << bits)?;
        let centroids = read_f32s(raw).into_iter().map(f64::from).collect();
        Self::from_centroids(dim, bits, centroids).map_err(|e| match e {
            Error::InvalidDimension { dim, .. } => {
                Error::format(format!("TQCB dimension {dim} < 2"))
            }
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn pdf_closed_forms() {
        assert!(close(beta_pdf(3, 0.7).unwrap(), 0.5, 1e-12));
        assert!(close(
            beta_pdf(2, 0.0).unwrap(),
            1.0 / std::f64::consts::PI,
            1e-12
        ));
        assert!(close(
            beta_pdf(4, 0.0).unwrap(),
            2.0 / std::f64::consts::PI,
            1e-12
        ));
        assert_eq!(beta_pdf(2, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(beta_pdf(2, -1.0).unwrap(), f64::INFINITY);
        assert!(close(beta_pdf(3, 1.0).unwrap(), 0.5, 1e-12));
        assert_eq!(beta_pdf(45, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn pdf_errors() {
        assert!(matches!(
            beta_pdf(1, 0.0),
            Err(Error::InvalidDimension { .. })
        ));
        assert!(matches!(beta_pdf(45, 1.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(
            beta_cdf(45, -1.01),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            beta_cdf(0, 0.0),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn cdf_examples() {
        assert!(close(beta_cdf(45, 0.0).unwrap(), 0.5, 1e-12));
        assert!(close(beta_cdf(3, 0.5).unwrap(), 0.75, 1e-12));
        assert_eq!(beta_cdf(45, 1.0).unwrap(), 1.0);
        assert_eq!(beta_cdf(45, -1.0).unwrap(), 0.0);
        // d = 2 is the arcsine law
        for x in [-0.99, -0.3, 0.2, 0.999] {
            let exact = 0.5 + f64::asin(x) / std::f64::consts::PI;
            assert!(close(beta_cdf(2, x).unwrap(), exact, 1e-12), "x = {x}");
        }
    }

    #[test]
    fn normalizer_matches_table_total() {
        for d in [2, 3, 4, 16, 45, 1024, 8192] {
            let density = CoordinateDensity::new(d).unwrap();
            assert!(
                close(density.total(), 1.0, 1e-10),
                "d = {d}: {}",
                density.total()
            );
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let density = CoordinateDensity::new(45).unwrap();
        let mut prev = 0.0;
        for i in 0..=2000 {
            let x = -1.0 + i as f64 / 1000.0;
            let f = density.cdf(x);
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn moment_matches_quadrature() {
        let density = CoordinateDensity::new(16).unwrap();
        let (a, b) = (-0.2, 0.55);
        let n = 200_000;
        let h = (b - a) / n as f64;
        let numeric: f64 = (0..n)
            .map(|i| {
                let x = a + (i as f64 + 0.5) * h;
                x * density.pdf(x) * h
            })
            .sum();
        assert!(close(density.moment(a, b), numeric, 1e-9));
    }

    #[test]
    fn uniform_source_codebooks() {
        let cb = BetaCodebook::solve(3, 1).unwrap();
        assert!(close(cb.centroids()[0], -0.5, 1e-9));
        assert!(close(cb.centroids()[1], 0.5, 1e-9));
        assert!(close(cb.residual_distortion(), 0.25, 1e-9));

        let cb = BetaCodebook::solve(3, 2).unwrap();
        for (c, e) in cb.centroids().iter().zip([-0.75, -0.25, 0.25, 0.75]) {
            assert!(close(*c, e, 1e-9));
        }
    }

    #[test]
    fn quantize_scalar_rules() {
        let cb1 = BetaCodebook::solve(3, 1).unwrap();
        assert_eq!(cb1.quantize(0.9), 1);
        let cb2 = BetaCodebook::from_centroids(3, 2, vec![-0.75, -0.25, 0.25, 0.75]).unwrap();
        assert_eq!(cb2.quantize(0.0), 1);
        assert_eq!(cb2.quantize(-0.5), 0);
        assert_eq!(cb2.quantize(-5.0), 0);
        assert_eq!(cb2.quantize(5.0), 3);
        assert_eq!(cb2.quantize(0.5000001), 3);
    }

    #[test]
    fn known_distortions_at_45() {
        // One bit: centroids are ±E|X| = ±2K/(d-1), so the distortion is 1 - d(2K/(d-1))².
        let d = 45.0;
        let k = log_normalizer(45).exp();
        let one_bit = 1.0 - d * (2.0 * k / (d - 1.0)).powi(2);
        let cb = BetaCodebook::solve(45, 1).unwrap();
        assert!(
            close(cb.residual_distortion(), one_bit, 1e-9),
            "{}",
            cb.residual_distortion()
        );
        assert!((one_bit - 0.36).abs() < 0.01);
        // The Gaussian limits are 0.3634 and 0.1175; d = 45 sits slightly below them.
        let two_bit = BetaCodebook::solve(45, 2).unwrap().residual_distortion();
        assert!(two_bit < 0.1175 && two_bit > 0.95 * 0.1175, "{two_bit}");
    }

    #[test]
    fn fixed_point_and_symmetry() {
        let opts = SolverOptions::default();
        for d in [2, 3, 16, 45, 1024] {
            for b in 1..=8u8 {
                let cb = solve_lloyd_max(d, b, &opts).unwrap();
                let c = cb.centroids();
                for (a, r) in c.iter().zip(c.iter().rev()) {
                    assert!((a + r).abs() <= 1e-9);
                }
                let density = CoordinateDensity::new(d).unwrap();
                let moved = density
                    .lloyd_map(c)
                    .iter()
                    .zip(c)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(moved <= opts.tolerance, "d={d} b={b}: moved {moved:e}");
            }
        }
    }

    #[test]
    fn plain_lloyd_objective_is_nonincreasing() {
        let opts = SolverOptions {
            newton: false,
            ..SolverOptions::default()
        };
        let (_, trace) = solve_lloyd_max_traced(45, 3, &opts).unwrap();
        assert!(trace.objective.windows(2).all(|w| w[1] <= w[0] + 1e-16));
        let (_, trace) = solve_lloyd_max_traced(45, 6, &SolverOptions::default()).unwrap();
        assert!(trace.objective.windows(2).all(|w| w[1] <= w[0] + 1e-16));
    }

    #[test]
    fn non_convergence_reports_last_iterate() {
        let opts = SolverOptions {
            tolerance: 1e-15,
            max_iterations: 3,
            newton: false,
        };
        match solve_lloyd_max(45, 4, &opts) {
            Err(Error::Convergence {
                iterations, last, ..
            }) => {
                assert_eq!(iterations, 3);
                assert_eq!(last.len(), 16);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let a = BetaCodebook::solve(45, 5).unwrap();
        let b = BetaCodebook::solve(45, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_in_bits() {
        for d in [3, 16, 45, 1024] {
            let values: Vec<f64> = (1..=8)
                .map(|b| BetaCodebook::solve(d, b).unwrap().residual_distortion())
                .collect();
            assert!(values.windows(2).all(|w| w[1] < w[0]), "d={d}: {values:?}");
        }
    }

    #[test]
    fn bound_sandwich() {
        let c = std::f64::consts::PI * 3f64.sqrt() / 2.0;
        for d in [16, 45, 256, 1024] {
            for b in 1..=4u8 {
                let dist = BetaCodebook::solve(d, b).unwrap().residual_distortion();
                let floor = 4f64.powi(-(b as i32));
                assert!(floor <= dist && dist <= c * floor, "d={d} b={b}: {dist}");
            }
        }
    }

    #[test]
    fn tqcb_round_trip_and_validation() {
        let cb = BetaCodebook::solve(45, 3)
            .unwrap()
            .rounded_to_f32()
            .unwrap();
        let bytes = cb.to_bytes();
        assert_eq!(bytes.len(), 14 + 32);
        assert_eq!(&bytes[..4], b"TQCB");
        assert_eq!(BetaCodebook::from_bytes(&bytes).unwrap(), cb);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(BetaCodebook::from_bytes(&bad).is_err());
        let mut bad = bytes.clone();
        bad[11] = 1;
        assert!(BetaCodebook::from_bytes(&bad).is_err());
        assert!(BetaCodebook::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes;
        bad[10] = 9;
        assert!(BetaCodebook::from_bytes(&bad).is_err());
    }

    #[test]
    fn rejects_bad_centroids() {
        assert!(BetaCodebook::from_centroids(3, 1, vec![0.5, -0.5]).is_err());
        assert!(BetaCodebook::from_centroids(3, 1, vec![-1.0, 1.0]).is_err());
        assert!(BetaCodebook::from_centroids(3, 1, vec![-0.2, 0.5]).is_err());
        assert!(BetaCodebook::from_centroids(3, 2, vec![-0.5, 0.5]).is_err());
    }
}
