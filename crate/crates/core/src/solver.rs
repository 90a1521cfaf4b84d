//! Harmonic-balance residual assembly and the damped Newton orbit solver.
//!
//! The unknowns are the sampled states `X` (length `(2M+1) p`) and the
//! period `T`. The residual stacks the collocated dynamics
//! `D X - G(X, delayed inputs)` with the scalar phase condition pinning the
//! spectral derivative of one chosen component to zero at `t = 0`; the
//! system is square in `(X, T)`.
//!
//! Travelling waves on a ring are handled by the same machinery: with the
//! ansatz `x_j(t) = x(t + j q T / N)`, the input arriving from signed offset
//! `d` carries the extra factor `exp(2 pi i m q d / N)` on harmonic `m`, so
//! the whole ring input collapses into one circulant sample-space operator
//! per mode.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::NodeModel;
use crate::simulate::SimulationResult;
use crate::spectral::{OrbitSolution, SpectralBasis};

/// A harmonic-balance problem: model, sampling basis, spatial mode and the
/// component pinned by the phase condition.
#[derive(Clone)]
pub struct HbProblem<'a> {
    pub model: &'a NodeModel,
    pub basis: &'a SpectralBasis,
    pub wave_mode: usize,
    pub phase_component: usize,
}

impl<'a> HbProblem<'a> {
    pub fn new(model: &'a NodeModel, basis: &'a SpectralBasis) -> Result<Self> {
        if basis.dim() != model.dim() {
            return Err(Error::DimensionMismatch(format!(
                "basis is built for p = {}, model has p = {}",
                basis.dim(),
                model.dim()
            )));
        }
        Ok(Self {
            model,
            basis,
            wave_mode: 0,
            phase_component: 0,
        })
    }

    pub fn with_wave_mode(mut self, q: usize) -> Result<Self> {
        if q != 0 {
            let topo = self.model.topology.as_ref().ok_or_else(|| {
                Error::InvalidParameter(
                    "travelling-wave modes require a ring topology".into(),
                )
            })?;
            if q >= topo.len() {
                return Err(Error::InvalidParameter(format!(
                    "wave mode {q} out of range for {} nodes",
                    topo.len()
                )));
            }
        }
        self.wave_mode = q;
        Ok(self)
    }

    pub fn with_phase_component(mut self, component: usize) -> Result<Self> {
        if component >= self.model.dim() {
            return Err(Error::InvalidParameter(format!(
                "phase component {component} out of range for p = {}",
                self.model.dim()
            )));
        }
        self.phase_component = component;
        Ok(self)
    }

    /// Unknown count: `(2M+1) p + 1`.
    pub fn unknowns(&self) -> usize {
        self.basis.len() + 1
    }
}

/// Newton iteration controls.
#[derive(Debug, Clone)]
pub struct NewtonSettings {
    /// Convergence threshold on the residual infinity norm.
    pub tol_residual: f64,
    pub max_iter: usize,
    /// Backtracking factor applied when a step increases the residual.
    pub damping_factor: f64,
    /// Smallest accepted fraction of a full Newton step.
    pub min_damping: f64,
    /// Assemble the Jacobian by central differences instead of analytically
    /// (debugging aid).
    pub finite_difference_jacobian: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tol_residual: 1e-10,
            max_iter: 50,
            damping_factor: 0.5,
            min_damping: 1e-4,
            finite_difference_jacobian: false,
        }
    }
}

/// Harmonic content below which a converged solution is treated as an
/// equilibrium in disguise.
pub const DEGENERATE_CONTENT: f64 = 1e-8;

/// Sample-space operators for one (problem, period) pair. Rebuilt whenever
/// `T` changes; `T` is itself a Newton unknown.
pub(crate) struct Operators {
    /// Spectral differentiation.
    pub deriv: DMatrix<f64>,
    /// Delay shift by the node self-delay.
    pub gamma0: DMatrix<f64>,
    /// Samples of the mode-q ring input from the u-component samples
    /// (includes eps and the offset weights; zero matrix without topology).
    pub ring: DMatrix<f64>,
    /// Like `ring` but with each offset weighted by its delay; used for the
    /// derivative of the ring input with respect to `T`.
    pub ring_tau: DMatrix<f64>,
}

pub(crate) fn build_operators(problem: &HbProblem, period: f64) -> Result<Operators> {
    if !(period > 0.0) {
        return Err(Error::NonPositivePeriod(period));
    }
    let basis = problem.basis;
    let size = basis.sample_count();
    let m = basis.truncation() as isize;
    let deriv = basis.derivative_matrix(period)?;
    let gamma0 = basis.delay_shift_matrix(problem.model.tau_intra(), period)?;

    let (ring, ring_tau) = match &problem.model.topology {
        None => (DMatrix::zeros(size, size), DMatrix::zeros(size, size)),
        Some(topo) => {
            let offsets = topo.signed_offsets();
            let n = topo.len() as f64;
            let q = problem.wave_mode as f64;
            let mut mult = vec![num_complex::Complex64::new(0.0, 0.0); size];
            let mut mult_tau = mult.clone();
            for (row, (g, gt)) in mult.iter_mut().zip(mult_tau.iter_mut()).enumerate() {
                let harmonic = (row as isize - m) as f64;
                let omega = 2.0 * std::f64::consts::PI * harmonic / period;
                for &(d, weight, tau) in &offsets {
                    let phase = 2.0 * std::f64::consts::PI * harmonic * q * d as f64 / n;
                    let factor =
                        num_complex::Complex64::from_polar(weight, phase - omega * tau);
                    *g += factor;
                    *gt += factor * tau;
                }
            }
            (
                basis.circulant_from_multipliers(&mult),
                basis.circulant_from_multipliers(&mult_tau),
            )
        }
    };

    Ok(Operators {
        deriv,
        gamma0,
        ring,
        ring_tau,
    })
}

/// Scratch evaluations shared between the residual and the Jacobian.
struct Evaluation {
    /// `D_p X`
    du: Vec<f64>,
    /// `Gamma_0 X` (self-delay channel states)
    d0: Vec<f64>,
    /// mode-q ring input samples (plus the `eps w_0` self-term)
    drive: Vec<f64>,
    residual: Vec<f64>,
}

fn evaluate(x: &[f64], problem: &HbProblem, ops: &Operators) -> Evaluation {
    let basis = problem.basis;
    let model = problem.model;
    let size = basis.sample_count();
    let p = basis.dim();

    let mut du = vec![0.0; basis.len()];
    let mut d0 = vec![0.0; basis.len()];
    basis.apply_scalar_operator(&ops.deriv, x, &mut du);
    basis.apply_scalar_operator(&ops.gamma0, x, &mut d0);

    let (eps, w0) = model
        .topology
        .as_ref()
        .map_or((0.0, 0.0), |t| (t.eps(), t.weights()[0]));
    let mut drive = vec![0.0; size];
    if model.topology.is_some() {
        for row in 0..size {
            let mut acc = 0.0;
            for col in 0..size {
                acc += ops.ring[(row, col)] * x[col * p];
            }
            drive[row] = acc + eps * w0 * d0[row * p];
        }
    }

    let mut residual = vec![0.0; basis.len() + 1];
    let mut g = vec![0.0; p];
    for row in 0..size {
        model.rhs_with_drive(
            &x[row * p..(row + 1) * p],
            &d0[row * p..(row + 1) * p],
            drive[row],
            &mut g,
        );
        for c in 0..p {
            residual[row * p + c] = du[row * p + c] - g[c];
        }
    }
    let weights = basis.phase_weights();
    let mut phase = 0.0;
    for row in 0..size {
        phase += weights[row] * x[row * p + problem.phase_component];
    }
    residual[basis.len()] = phase;

    Evaluation {
        du,
        d0,
        drive,
        residual,
    }
}

/// Harmonic-balance residual at `(X, T)`: the collocated dynamics followed
/// by the phase condition, length `(2M+1) p + 1`.
pub fn hb_residual(x: &[f64], period: f64, problem: &HbProblem) -> Result<Vec<f64>> {
    if x.len() != problem.basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "state has length {}, expected {}",
            x.len(),
            problem.basis.len()
        )));
    }
    let ops = build_operators(problem, period)?;
    Ok(evaluate(x, problem, &ops).residual)
}

/// Analytic Jacobian of the full residual with respect to `(X, T)`,
/// `(n+1) x (n+1)` with the phase row last and the `T` column last.
fn jacobian_with_ops(
    x: &[f64],
    period: f64,
    problem: &HbProblem,
    ops: &Operators,
    eval: &Evaluation,
) -> DMatrix<f64> {
    let basis = problem.basis;
    let model = problem.model;
    let size = basis.sample_count();
    let p = basis.dim();
    let n = basis.len();
    let upsilon = model.upsilon();
    let tau0 = model.tau_intra();

    let mut jac = DMatrix::zeros(n + 1, n + 1);

    // d(Gamma_0 X)/dT = (tau0 / T) * D Gamma_0 X
    let mut dd0 = vec![0.0; n];
    basis.apply_scalar_operator(&ops.deriv, &eval.d0, &mut dd0);
    // d(ring X_u)/dT = (1 / T) * D ring_tau X_u; assembled on the scalar grid
    let mut ring_tau_x = vec![0.0; size];
    let mut dring = vec![0.0; size];
    if model.topology.is_some() {
        for row in 0..size {
            let mut acc = 0.0;
            for col in 0..size {
                acc += ops.ring_tau[(row, col)] * x[col * p];
            }
            ring_tau_x[row] = acc;
        }
        for row in 0..size {
            let mut acc = 0.0;
            for col in 0..size {
                acc += ops.deriv[(row, col)] * ring_tau_x[col];
            }
            dring[row] = acc;
        }
    }

    for row in 0..size {
        let d0_row = &eval.d0[row * p..(row + 1) * p];
        let (chi_u, chi_v) = model.activation_inputs_with_drive(d0_row, eval.drive[row]);
        let (rho_u, rho_v) = model.activation_slopes(chi_u, chi_v);
        let local = &upsilon * model.local_delay_block(rho_u, rho_v);

        for a in 0..p {
            let r = row * p + a;
            // D_p and the instantaneous decay (-J1 = upsilon)
            for col in 0..size {
                jac[(r, col * p + a)] += ops.deriv[(row, col)];
            }
            jac[(r, r)] += upsilon[(a, a)];
            // self-delay channel through Gamma_0
            for b in 0..p {
                let l = local[(a, b)];
                if l != 0.0 {
                    for col in 0..size {
                        jac[(r, col * p + b)] -= l * ops.gamma0[(row, col)];
                    }
                }
            }
        }
        // ring input enters the u equation only
        if model.topology.is_some() {
            let r = row * p;
            for col in 0..size {
                jac[(r, col * p)] -= rho_u * ops.ring[(row, col)];
            }
        }

        // T column
        let mut shift = DVector::zeros(p);
        for a in 0..p {
            let mut acc = 0.0;
            for b in 0..p {
                acc += local[(a, b)] * dd0[row * p + b];
            }
            shift[a] = acc;
        }
        for a in 0..p {
            let mut value = eval.du[row * p + a] + tau0 * shift[a];
            if a == 0 && model.topology.is_some() {
                value += rho_u * dring[row];
            }
            jac[(row * p + a, n)] = -value / period;
        }
    }

    let weights = basis.phase_weights();
    for row in 0..size {
        jac[(n, row * p + problem.phase_component)] = weights[row];
    }
    jac
}

/// Jacobian of the residual with respect to `(X, T)` at a point, for the
/// continuation corrector's bordered system.
pub(crate) fn jacobian_for_continuation(
    x: &[f64],
    period: f64,
    problem: &HbProblem,
    ops: &Operators,
) -> Result<DMatrix<f64>> {
    let eval = evaluate(x, problem, ops);
    Ok(jacobian_with_ops(x, period, problem, ops, &eval))
}

fn fd_jacobian(x: &[f64], period: f64, problem: &HbProblem) -> Result<DMatrix<f64>> {
    let n = problem.basis.len();
    let mut jac = DMatrix::zeros(n + 1, n + 1);
    let mut z = x.to_vec();
    for col in 0..=n {
        let h = 1e-7 * if col < n {
            x[col].abs().max(1.0)
        } else {
            period.abs().max(1.0)
        };
        let (rp, rm) = if col < n {
            let orig = z[col];
            z[col] = orig + h;
            let rp = hb_residual(&z, period, problem)?;
            z[col] = orig - h;
            let rm = hb_residual(&z, period, problem)?;
            z[col] = orig;
            (rp, rm)
        } else {
            (
                hb_residual(&z, period + h, problem)?,
                hb_residual(&z, period - h, problem)?,
            )
        };
        for row in 0..=n {
            jac[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
        }
    }
    Ok(jac)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

/// Solve for a periodic orbit by damped Newton iteration on `(X, T)`.
///
/// On convergence the harmonic content is checked: a solution whose
/// non-constant coefficients sum below `DEGENERATE_CONTENT` is an
/// equilibrium (equilibria satisfy the collocated system at every period)
/// and is reported as `CollapsedToEquilibrium`.
pub fn solve_orbit(
    x0: &[f64],
    t0: f64,
    problem: &HbProblem,
    settings: &NewtonSettings,
) -> Result<OrbitSolution> {
    if x0.len() != problem.basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "guess has length {}, expected {}",
            x0.len(),
            problem.basis.len()
        )));
    }
    if !(t0 > 0.0) {
        return Err(Error::NonPositivePeriod(t0));
    }
    let n = problem.basis.len();
    let mut x = x0.to_vec();
    let mut period = t0;

    let mut ops = build_operators(problem, period)?;
    let mut eval = evaluate(&x, problem, &ops);
    let mut norm = inf_norm(&eval.residual);

    for iter in 0..settings.max_iter {
        if norm < settings.tol_residual {
            return finish_orbit(x, period, problem, norm);
        }
        let jac = if settings.finite_difference_jacobian {
            fd_jacobian(&x, period, problem)?
        } else {
            jacobian_with_ops(&x, period, problem, &ops, &eval)
        };
        let rhs = DVector::from_fn(n + 1, |i, _| -eval.residual[i]);
        let lu = jac.lu();
        let delta = lu
            .solve(&rhs)
            .ok_or(Error::SingularJacobian { step: iter })?;
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian { step: iter });
        }

        // backtracking line search on the residual norm
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha >= settings.min_damping {
            let mut x_trial = x.clone();
            for (i, xt) in x_trial.iter_mut().enumerate() {
                *xt += alpha * delta[i];
            }
            let t_trial = period + alpha * delta[n];
            if t_trial > 0.0 {
                let ops_trial = build_operators(problem, t_trial)?;
                let eval_trial = evaluate(&x_trial, problem, &ops_trial);
                let norm_trial = inf_norm(&eval_trial.residual);
                if norm_trial.is_finite() && norm_trial < norm {
                    x = x_trial;
                    period = t_trial;
                    ops = ops_trial;
                    eval = eval_trial;
                    norm = norm_trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= settings.damping_factor;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations: iter + 1,
                residual: norm,
            });
        }
    }
    if norm < settings.tol_residual {
        return finish_orbit(x, period, problem, norm);
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: norm,
    })
}

fn finish_orbit(
    x: Vec<f64>,
    period: f64,
    problem: &HbProblem,
    norm: f64,
) -> Result<OrbitSolution> {
    let orbit =
        OrbitSolution::from_samples(x, period, problem.basis, problem.wave_mode, norm)?;
    let content = orbit.harmonic_content();
    if content <= DEGENERATE_CONTENT {
        return Err(Error::CollapsedToEquilibrium { period, content });
    }
    Ok(orbit)
}

/// Solve for a travelling wave of mode `q` (each node runs the same
/// waveform shifted by `j q T / N`).
pub fn solve_travelling_wave(
    q: usize,
    x0: &[f64],
    t0: f64,
    problem: &HbProblem,
    settings: &NewtonSettings,
) -> Result<OrbitSolution> {
    if q == 0 || q >= problem.model.topology.as_ref().map_or(1, |t| t.len()) {
        return Err(Error::InvalidParameter(format!(
            "travelling-wave mode must satisfy 1 <= q <= N-1 (got {q})"
        )));
    }
    let wave = problem.clone().with_wave_mode(q)?;
    solve_orbit(x0, t0, &wave, &settings.clone())
}

/// Extract an initial guess `(X, T)` from an oscillatory simulation tail.
///
/// The period is the mean spacing of the peaks of `phase_component`; the
/// sample window is centred on a late peak so that the phase condition is
/// approximately satisfied from the start.
pub fn initial_guess_from_simulation(
    sim: &SimulationResult,
    basis: &SpectralBasis,
    phase_component: usize,
) -> Result<(Vec<f64>, f64)> {
    let p = basis.dim();
    let (nodes, sim_p) = sim.layout;
    if nodes != 1 || sim_p != p {
        return Err(Error::DimensionMismatch(format!(
            "guess extraction expects a single-node simulation of dimension {p}, got {nodes} x {sim_p}"
        )));
    }
    let m = sim.len();
    let tail_start = m / 2;
    let series: Vec<f64> = (tail_start..m)
        .map(|i| sim.states[i * sim.dim + phase_component])
        .collect();
    let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-6 {
        return Err(Error::NoOscillationDetected { amplitude: hi - lo });
    }
    let peaks = crate::simulate::detect_peaks(&series);
    if peaks.len() < 3 {
        return Err(Error::NoOscillationDetected { amplitude: hi - lo });
    }
    let dt = sim.dt_out();
    let spacings: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) * dt).collect();
    let period = spacings.iter().sum::<f64>() / spacings.len() as f64;

    let t_tail = sim.times[tail_start];
    let t_last_peak = t_tail + peaks[peaks.len() - 1] * dt;
    let t_ref = t_last_peak - period;

    let mut x = vec![0.0; basis.len()];
    for (row, tn) in basis.sample_times(period).iter().enumerate() {
        let state = sim.interpolate(t_ref + tn);
        x[row * p..(row + 1) * p].copy_from_slice(&state);
    }
    Ok((x, period))
}
