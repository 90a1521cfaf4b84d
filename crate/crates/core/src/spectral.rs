//! Fourier sampling machinery for harmonic balance.
//!
//! A `T`-periodic trajectory is represented by complex Fourier coefficients
//! `a_n`, `n = -M..M`, and equivalently by its values at the `2M+1` uniform
//! sample times `t_n = n T / (2M+1)`. The two representations are linked by
//! the Vandermonde matrix `S` with `[S]_{nm} = exp(2 pi i n m / (2M+1))`,
//! whose inverse is `conj(S) / (2M+1)`.
//!
//! Because the sample grid is uniform, every diagonal-in-frequency operator
//! (differentiation, delay shift, phase-shifted ring input) becomes a real
//! circulant matrix in sample space; those matrices are what the solver and
//! stability modules assemble from.
//!
//! Storage conventions: harmonic index `n` maps to row/column `n + M`;
//! state vectors are sample-major with `p` components per sample, so entry
//! `(n, a)` lives at index `(n + M) * p + a`. Coefficient vectors use the
//! same layout.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Sampling basis for truncation order `M` and node dimension `p`.
///
/// Built once per `(M, p)` and shared; all operators that depend on the
/// period are produced on demand because `T` is itself an unknown of the
/// harmonic-balance system.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    m: usize,
    p: usize,
    s: DMatrix<Complex64>,
    s_inv: DMatrix<Complex64>,
    /// `S diag(i n) S^{-1}`, real; the derivative operator is `2 pi / T`
    /// times this.
    derivative_hat: DMatrix<f64>,
    /// Sample-space weights of the phase condition `Im(sum_n n a_n) = 0`.
    phase_weights: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(m: usize, p: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidParameter(format!(
                "truncation order M must be >= 1 (got {m})"
            )));
        }
        if p < 1 {
            return Err(Error::InvalidParameter(format!(
                "state dimension p must be >= 1 (got {p})"
            )));
        }
        let size = 2 * m + 1;
        let s = DMatrix::from_fn(size, size, |row, col| {
            let n = row as isize - m as isize;
            let mm = col as isize - m as isize;
            Complex64::from_polar(1.0, 2.0 * PI * (n * mm) as f64 / size as f64)
        });
        let s_inv = s.map(|z| z.conj() / size as f64);

        let mut basis = Self {
            m,
            p,
            s,
            s_inv,
            derivative_hat: DMatrix::zeros(size, size),
            phase_weights: vec![0.0; size],
        };
        let mult: Vec<Complex64> = (0..size)
            .map(|row| Complex64::new(0.0, row as f64 - m as f64))
            .collect();
        basis.derivative_hat = basis.circulant_from_multipliers(&mult);
        for j in 0..size {
            let mut acc = Complex64::new(0.0, 0.0);
            for row in 0..size {
                let n = row as f64 - m as f64;
                acc += basis.s_inv[(row, j)] * n;
            }
            basis.phase_weights[j] = acc.im;
        }
        Ok(basis)
    }

    pub fn truncation(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Number of sample times, `2M + 1`.
    pub fn sample_count(&self) -> usize {
        2 * self.m + 1
    }

    /// Total state length, `(2M + 1) p`.
    pub fn len(&self) -> usize {
        self.sample_count() * self.p
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vandermonde(&self) -> &DMatrix<Complex64> {
        &self.s
    }

    pub fn vandermonde_inverse(&self) -> &DMatrix<Complex64> {
        &self.s_inv
    }

    /// Sample times as fractions of the period: `n / (2M+1)`, `n = -M..M`.
    pub fn sample_fractions(&self) -> Vec<f64> {
        let size = self.sample_count() as f64;
        (0..self.sample_count())
            .map(|row| (row as f64 - self.m as f64) / size)
            .collect()
    }

    /// Sample times for a given period.
    pub fn sample_times(&self, period: f64) -> Vec<f64> {
        self.sample_fractions().iter().map(|f| f * period).collect()
    }

    /// Coefficients from real samples: `A = S_p^{-1} X` applied blockwise.
    pub fn coefficients_from_samples(&self, x: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(x.len())?;
        let size = self.sample_count();
        let p = self.p;
        let mut a = vec![Complex64::new(0.0, 0.0); x.len()];
        for row in 0..size {
            for comp in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for col in 0..size {
                    acc += self.s_inv[(row, col)] * x[col * p + comp];
                }
                a[row * p + comp] = acc;
            }
        }
        Ok(a)
    }

    /// Real samples from coefficients: `X = S_p A` (real part; the imaginary
    /// part is rounding noise when the reality constraint holds).
    pub fn samples_from_coefficients(&self, a: &[Complex64]) -> Result<Vec<f64>> {
        self.check_len(a.len())?;
        let size = self.sample_count();
        let p = self.p;
        let mut x = vec![0.0; a.len()];
        for row in 0..size {
            for comp in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for col in 0..size {
                    acc += self.s[(row, col)] * a[col * p + comp];
                }
                x[row * p + comp] = acc.re;
            }
        }
        Ok(x)
    }

    /// Real circulant sample-space matrix `Re(S diag(d) S^{-1})` for
    /// frequency multipliers `d_m` (index `m + M`). Exact for multipliers
    /// satisfying `d_{-m} = conj(d_m)`.
    pub fn circulant_from_multipliers(&self, multipliers: &[Complex64]) -> DMatrix<f64> {
        let size = self.sample_count();
        assert_eq!(multipliers.len(), size, "one multiplier per harmonic");
        // Entry (n, j) depends only on (n - j) mod (2M+1).
        let mut kernel = vec![0.0; size];
        for (offset, k) in kernel.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (row, d) in multipliers.iter().enumerate() {
                let m = row as f64 - self.m as f64;
                acc += d * Complex64::from_polar(1.0, 2.0 * PI * m * offset as f64 / size as f64);
            }
            *k = acc.re / size as f64;
        }
        DMatrix::from_fn(size, size, |n, j| kernel[(n + size - j) % size])
    }

    /// Derivative operator in sample space for period `T`.
    pub fn derivative_matrix(&self, period: f64) -> Result<DMatrix<f64>> {
        if !(period > 0.0) {
            return Err(Error::NonPositivePeriod(period));
        }
        Ok(&self.derivative_hat * (2.0 * PI / period))
    }

    /// Diagonal delay-shift operator `Gamma(tau)` acting on coefficients.
    pub fn delay_shift(&self, tau: f64, period: f64) -> Result<DelayShift> {
        if !(period > 0.0) {
            return Err(Error::NonPositivePeriod(period));
        }
        let entries = (0..self.sample_count())
            .map(|row| {
                let m = row as f64 - self.m as f64;
                let omega = 2.0 * PI * m / period;
                Complex64::from_polar(1.0, -omega * tau)
            })
            .collect();
        Ok(DelayShift { entries })
    }

    /// Delay-shift operator in sample space (real circulant).
    pub fn delay_shift_matrix(&self, tau: f64, period: f64) -> Result<DMatrix<f64>> {
        Ok(self.circulant_from_multipliers(&self.delay_shift(tau, period)?.entries))
    }

    /// Apply a scalar (2M+1)-square sample-space operator blockwise to a
    /// `(2M+1) p` vector.
    pub fn apply_scalar_operator(&self, op: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
        let size = self.sample_count();
        let p = self.p;
        debug_assert_eq!(x.len(), self.len());
        debug_assert_eq!(out.len(), self.len());
        for row in 0..size {
            for comp in 0..p {
                let mut acc = 0.0;
                for col in 0..size {
                    acc += op[(row, col)] * x[col * p + comp];
                }
                out[row * p + comp] = acc;
            }
        }
    }

    /// Sample-space weights of the phase condition: the condition for
    /// component `c` reads `sum_j phase_weights[j] * x[(j, c)] = 0` and pins
    /// the spectral derivative of that component to zero at `t = 0`.
    pub fn phase_weights(&self) -> &[f64] {
        &self.phase_weights
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "vector length {len} does not match (2M+1) p = {}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Diagonal delay-shift operator on coefficient vectors.
#[derive(Debug, Clone)]
pub struct DelayShift {
    entries: Vec<Complex64>,
}

impl DelayShift {
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Apply to a coefficient vector with `p` components per harmonic.
    pub fn apply(&self, a: &[Complex64], p: usize) -> Vec<Complex64> {
        assert_eq!(a.len(), self.entries.len() * p);
        let mut out = vec![Complex64::new(0.0, 0.0); a.len()];
        for (row, d) in self.entries.iter().enumerate() {
            for comp in 0..p {
                out[row * p + comp] = d * a[row * p + comp];
            }
        }
        out
    }

    /// Composition of two shifts (entrywise product of the diagonals).
    pub fn compose(&self, other: &DelayShift) -> DelayShift {
        DelayShift {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }
}

/// A converged (or candidate) periodic orbit in Fourier form.
#[derive(Debug, Clone)]
pub struct OrbitSolution {
    /// Period (> 0).
    pub period: f64,
    /// Truncation order.
    pub m: usize,
    /// Node state dimension.
    pub p: usize,
    /// Real sampled states, length `(2M+1) p`.
    pub x: Vec<f64>,
    /// Complex Fourier coefficients `a_{-M}..a_M`, component-major within
    /// each harmonic.
    pub coefficients: Vec<Complex64>,
    /// Infinity norm of the harmonic-balance residual at this orbit.
    pub residual_norm: f64,
    /// Spatial wave mode (0 for synchronous / single-node orbits).
    pub wave_mode: usize,
}

impl OrbitSolution {
    pub fn from_samples(
        x: Vec<f64>,
        period: f64,
        basis: &SpectralBasis,
        wave_mode: usize,
        residual_norm: f64,
    ) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::NonPositivePeriod(period));
        }
        let coefficients = basis.coefficients_from_samples(&x)?;
        Ok(Self {
            period,
            m: basis.truncation(),
            p: basis.dim(),
            x,
            coefficients,
            residual_norm,
            wave_mode,
        })
    }

    /// Evaluate the Fourier reconstruction at time `t`.
    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        self.evaluate_weighted(t, |_omega| Complex64::new(1.0, 0.0))
    }

    /// Spectral time derivative at time `t`.
    pub fn evaluate_derivative(&self, t: f64) -> Vec<f64> {
        self.evaluate_weighted(t, |omega| Complex64::new(0.0, omega))
    }

    fn evaluate_weighted<F: Fn(f64) -> Complex64>(&self, t: f64, weight: F) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for row in 0..(2 * self.m + 1) {
            let n = row as f64 - self.m as f64;
            let omega = 2.0 * PI * n / self.period;
            let phase = Complex64::from_polar(1.0, omega * t) * weight(omega);
            for comp in 0..self.p {
                out[comp] += (self.coefficients[row * self.p + comp] * phase).re;
            }
        }
        out
    }

    /// Total magnitude of the non-constant harmonics; an orbit that has
    /// collapsed to an equilibrium has vanishing harmonic content.
    pub fn harmonic_content(&self) -> f64 {
        let mut acc = 0.0;
        for row in 0..(2 * self.m + 1) {
            if row == self.m {
                continue;
            }
            for comp in 0..self.p {
                acc += self.coefficients[row * self.p + comp].norm();
            }
        }
        acc
    }

    /// Half the peak-to-peak range of the first component over the samples.
    pub fn amplitude(&self) -> f64 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for row in 0..(2 * self.m + 1) {
            let v = self.x[row * self.p];
            min = min.min(v);
            max = max.max(v);
        }
        0.5 * (max - min)
    }

    /// Largest coefficient magnitude among the two highest harmonics, a
    /// proxy for the spectral truncation error.
    pub fn tail_magnitude(&self) -> f64 {
        let mut acc: f64 = 0.0;
        for row in [0, 1, 2 * self.m - 1, 2 * self.m] {
            for comp in 0..self.p {
                acc = acc.max(self.coefficients[row * self.p + comp].norm());
            }
        }
        acc
    }

    /// Maximum violation of the reality constraint `a_{-n} = conj(a_n)`.
    pub fn reality_defect(&self) -> f64 {
        let size = 2 * self.m + 1;
        let mut worst: f64 = 0.0;
        for row in 0..size {
            let mirror = size - 1 - row;
            for comp in 0..self.p {
                let d = self.coefficients[row * self.p + comp]
                    - self.coefficients[mirror * self.p + comp].conj();
                worst = worst.max(d.norm());
            }
        }
        worst
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&OrbitJson::from(self))?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: OrbitJson = serde_json::from_str(text)?;
        raw.into_orbit()
    }
}

/// Serialised orbit schema: coefficients as `[re, im]` pairs ordered by
/// harmonic `n = -M..M`, component-major within each harmonic.
#[derive(Debug, Serialize, Deserialize)]
struct OrbitJson {
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "M")]
    m: usize,
    p: usize,
    wave_mode: usize,
    coefficients: Vec<[f64; 2]>,
}

impl From<&OrbitSolution> for OrbitJson {
    fn from(orbit: &OrbitSolution) -> Self {
        OrbitJson {
            t: orbit.period,
            m: orbit.m,
            p: orbit.p,
            wave_mode: orbit.wave_mode,
            coefficients: orbit.coefficients.iter().map(|c| [c.re, c.im]).collect(),
        }
    }
}

impl OrbitJson {
    fn into_orbit(self) -> Result<OrbitSolution> {
        if !(self.t > 0.0) {
            return Err(Error::NonPositivePeriod(self.t));
        }
        let basis = SpectralBasis::new(self.m, self.p)?;
        if self.coefficients.len() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "orbit file has {} coefficients, expected (2M+1) p = {}",
                self.coefficients.len(),
                basis.len()
            )));
        }
        let coefficients: Vec<Complex64> = self
            .coefficients
            .iter()
            .map(|c| Complex64::new(c[0], c[1]))
            .collect();
        let x = basis.samples_from_coefficients(&coefficients)?;
        Ok(OrbitSolution {
            period: self.t,
            m: self.m,
            p: self.p,
            x,
            coefficients,
            residual_norm: f64::NAN,
            wave_mode: self.wave_mode,
        })
    }
}
