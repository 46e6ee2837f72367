//! Brute-force Lloyd-Max reference, deliberately independent of the library solver.
//!
//! The density is sampled at the midpoints of a uniform grid and normalized by its
//! numerical sum (no gamma functions). Cell masses and first moments come from prefix
//! sums, with the grid cell that straddles a decision boundary split linearly. Plain
//! Lloyd iteration, no acceleration and no symmetry assumption.

#![allow(dead_code)]

pub const GRID_CELLS: usize = 1 << 17;

pub struct GridDensity {
    lo: f64,
    h: f64,
    weights: Vec<f64>,
    // prefix sums of w and w·x, length cells + 1
    mass: Vec<f64>,
    moment: Vec<f64>,
    second: f64,
}

impl GridDensity {
    pub fn new(lo: f64, hi: f64, cells: usize, density: impl Fn(f64) -> f64) -> Self {
        let h = (hi - lo) / cells as f64;
        let raw: Vec<f64> = (0..cells)
            .map(|i| density(lo + (i as f64 + 0.5) * h))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mut mass = vec![0.0; cells + 1];
        let mut moment = vec![0.0; cells + 1];
        let mut second = 0.0;
        for (i, w) in weights.iter().enumerate() {
            let x = lo + (i as f64 + 0.5) * h;
            mass[i + 1] = mass[i] + w;
            moment[i + 1] = moment[i] + w * x;
            second += w * x * x;
        }
        Self {
            lo,
            h,
            weights,
            mass,
            moment,
            second,
        }
    }

    /// The hypersphere coordinate density on `[-1, 1]`, up to normalization.
    pub fn sphere_coordinate(dim: usize) -> Self {
        let e = (dim as f64 - 3.0) / 2.0;
        Self::new(-1.0, 1.0, GRID_CELLS, |x| (1.0 - x * x).powf(e))
    }

    /// `N(0, sigma²)` restricted to `±12σ`.
    pub fn gaussian(sigma: f64) -> Self {
        Self::new(-12.0 * sigma, 12.0 * sigma, GRID_CELLS, |x| {
            (-0.5 * (x / sigma).powi(2)).exp()
        })
    }

    fn cells(&self) -> usize {
        self.weights.len()
    }

    /// Mass and first moment of `(-inf, t]`.
    fn cumulative(&self, t: f64) -> (f64, f64) {
        let pos = ((t - self.lo) / self.h).clamp(0.0, self.cells() as f64);
        let i = (pos.floor() as usize).min(self.cells() - 1);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        let w = self.weights[i] * frac;
        let x = self.lo + (i as f64 + 0.5 * frac) * self.h;
        (self.mass[i] + w, self.moment[i] + w * x)
    }

    fn cells_of(&self, centroids: &[f64]) -> Vec<(f64, f64)> {
        let n = centroids.len();
        let mut out = Vec::with_capacity(n);
        let mut prev = (0.0, 0.0);
        for k in 0..n {
            let next = if k + 1 < n {
                self.cumulative(0.5 * (centroids[k] + centroids[k + 1]))
            } else {
                (self.mass[self.cells()], self.moment[self.cells()])
            };
            out.push((next.0 - prev.0, next.1 - prev.1));
            prev = next;
        }
        out
    }

    /// Mean squared error of nearest-centroid quantization under the grid density.
    pub fn distortion(&self, centroids: &[f64]) -> f64 {
        let cells = self.cells_of(centroids);
        self.second
            - cells
                .iter()
                .zip(centroids)
                .map(|(&(m, mu), &c)| 2.0 * c * mu - c * c * m)
                .sum::<f64>()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let i = self.mass.partition_point(|&m| m < p).clamp(1, self.cells());
        self.lo + (i as f64 - 0.5) * self.h
    }

    /// Plain Lloyd iteration from quantile starts until no centroid moves more than `tol`.
    pub fn lloyd(&self, levels: usize, tol: f64, max_iter: usize) -> (Vec<f64>, usize) {
        let mut c: Vec<f64> = (0..levels)
            .map(|k| self.quantile((k as f64 + 0.5) / levels as f64))
            .collect();
        for iter in 1..=max_iter {
            let next: Vec<f64> = self
                .cells_of(&c)
                .iter()
                .zip(&c)
                .map(|(&(m, mu), &old)| if m > 0.0 { mu / m } else { old })
                .collect();
            let moved = next
                .iter()
                .zip(&c)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            c = next;
            if moved < tol {
                return (c, iter);
            }
        }
        panic!("oracle Lloyd did not converge in {max_iter} iterations");
    }
}

/// Oracle codebook for the coordinate law at `(dim, bits)`: centroids and whole-vector
/// distortion `d · E[(X - Q(X))²]`.
pub fn sphere_codebook(dim: usize, bits: u8) -> (Vec<f64>, f64) {
    let g = GridDensity::sphere_coordinate(dim);
    let (c, _) = g.lloyd(1 << bits, 1e-12, 5_000_000);
    let dist = dim as f64 * g.distortion(&c);
    (c, dist)
}

/// Unit-variance Gaussian Lloyd-Max distortion at `bits`.
pub fn gaussian_distortion(bits: u8) -> f64 {
    let g = GridDensity::gaussian(1.0);
    let (c, _) = g.lloyd(1 << bits, 1e-12, 5_000_000);
    g.distortion(&c)
}
