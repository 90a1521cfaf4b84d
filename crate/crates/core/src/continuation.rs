//! Pseudo-arclength continuation of harmonic-balance orbits in one scalar
//! parameter.
//!
//! Unknowns are `(X, T, param)`. Each corrector step solves the collocated
//! dynamics and phase condition augmented with the arclength constraint
//! `<z - z_prev, tangent> = ds`, taken in coordinates where the period is
//! scaled by `1 / T_0` (the starting period) so that period and parameter
//! progress on comparable footing. The tangent is the secant between the
//! two previous points; the first step uses a plain parameter increment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::floquet::{MaxExponentOptions, ModeExponents, StabilityProblem, TRIVIAL_RADIUS};
use crate::model::NodeModel;
use crate::solver::{self, HbProblem, NewtonSettings};
use crate::spectral::{OrbitSolution, SpectralBasis};

/// Arclength step controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSettings {
    /// Initial arclength step.
    pub ds0: f64,
    /// Step-size cap.
    pub ds_max: f64,
    /// Halvings allowed after corrector failures before giving up.
    pub max_halvings: usize,
    /// Consecutive successes before the step grows.
    pub grow_after: usize,
    pub grow_factor: f64,
    pub max_points: usize,
}

impl Default for StepSettings {
    fn default() -> Self {
        Self {
            ds0: 0.02,
            ds_max: 0.2,
            max_halvings: 6,
            grow_after: 4,
            grow_factor: 1.3,
            max_points: 2000,
        }
    }
}

/// Per-point Floquet exponent monitoring policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExponentPolicy {
    /// Compute exponents at all (true) or no (false) points.
    pub enabled: bool,
    /// Real-axis search interval for the dominant roots.
    pub interval: (f64, f64),
    /// Grid points for the real-axis sign scan.
    pub grid: usize,
    /// Every n-th point additionally runs the complex contour scan
    /// (0 disables scans along the branch).
    pub full_scan_every: usize,
    pub scan_resolution: (usize, usize),
    /// A point is unstable when some mode's maximal non-trivial exponent
    /// exceeds this.
    pub verdict_threshold: f64,
}

impl Default for ExponentPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: (-2.0, 0.5),
            grid: 150,
            full_scan_every: 10,
            scan_resolution: (41, 31),
            verdict_threshold: 1e-4,
        }
    }
}

/// One accepted continuation point.
#[derive(Debug, Clone)]
pub struct BranchPoint {
    pub param: f64,
    pub orbit: OrbitSolution,
    /// Exponents per reduced mode (`q = 0..=N/2`), empty when monitoring is
    /// disabled.
    pub exponents: Vec<ModeExponents>,
    /// Stability verdict (None when monitoring is disabled).
    pub stable: Option<bool>,
}

/// Why a branch stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    RangeExhausted,
    MaxPoints,
    /// Corrector kept failing and the step underflowed.
    StepUnderflow { param: f64 },
    /// The orbit lost its harmonic content (amplitude death of the branch).
    Collapsed { param: f64 },
}

/// A parameter bracket across which some mode's stability verdict flips.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StabilityEvent {
    pub mode: usize,
    pub lower: f64,
    pub upper: f64,
}

/// A continued one-parameter family of orbits.
#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Indices where the parameter direction reverses.
    pub folds: Vec<usize>,
    /// Stability-change brackets (filled by `detect_stability_events`).
    pub events: Vec<StabilityEvent>,
    pub termination: Termination,
    /// Arclength used for each accepted step (`points.len() - 1` entries).
    pub step_sizes: Vec<f64>,
}

impl Branch {
    /// Largest parameter value reached.
    pub fn param_max(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.param)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn param_min(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.param)
            .fold(f64::INFINITY, f64::min)
    }

    /// CSV export: `index,param,T,orbit_amplitude,maxRe_q0..,stable,is_fold`.
    pub fn to_csv(&self) -> String {
        let n_modes = self
            .points
            .first()
            .map_or(0, |p| p.exponents.len());
        let mut header = String::from("index,param,T,orbit_amplitude");
        for q in 0..n_modes {
            header.push_str(&format!(",maxRe_q{q}"));
        }
        header.push_str(",stable,is_fold\n");
        let mut out = header;
        for (i, point) in self.points.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{},{}",
                crate::fmt_csv(point.param),
                crate::fmt_csv(point.orbit.period),
                crate::fmt_csv(point.orbit.amplitude())
            ));
            for q in 0..n_modes {
                match point.exponents.get(q).and_then(|e| e.max.as_ref()) {
                    Some(max) => out.push_str(&format!(",{}", crate::fmt_csv(max.re))),
                    None => out.push(','),
                }
            }
            let stable = match point.stable {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            out.push_str(&format!(
                ",{stable},{}\n",
                if self.folds.contains(&i) { "true" } else { "false" }
            ));
        }
        out
    }
}

/// Continuation driver: rebuilds the model per parameter value through a
/// setter closure.
pub struct ContinuationProblem<'a> {
    pub setter: &'a (dyn Fn(f64) -> NodeModel + Sync),
    pub basis: &'a SpectralBasis,
    pub phase_component: usize,
    /// Spatial mode of the continued family (0 for synchronous branches;
    /// Floquet monitoring is only available there).
    pub wave_mode: usize,
    pub newton: NewtonSettings,
    pub steps: StepSettings,
    pub exponents: ExponentPolicy,
}

impl<'a> ContinuationProblem<'a> {
    pub fn new(setter: &'a (dyn Fn(f64) -> NodeModel + Sync), basis: &'a SpectralBasis) -> Self {
        Self {
            setter,
            basis,
            phase_component: 0,
            wave_mode: 0,
            newton: NewtonSettings::default(),
            steps: StepSettings::default(),
            exponents: ExponentPolicy::default(),
        }
    }

    /// Solve the plain orbit problem at a fixed parameter from a guess.
    pub fn solve_at(&self, param: f64, x0: &[f64], t0: f64) -> Result<OrbitSolution> {
        let model = (self.setter)(param);
        let problem = HbProblem::new(&model, self.basis)?
            .with_wave_mode(self.wave_mode)?
            .with_phase_component(self.phase_component)?;
        solver::solve_orbit(x0, t0, &problem, &self.newton)
    }

    /// Floquet exponents of an orbit at a parameter, per reduced mode.
    pub fn exponents_at(
        &self,
        param: f64,
        orbit: &OrbitSolution,
        with_scan: bool,
    ) -> Result<Vec<ModeExponents>> {
        let model = (self.setter)(param);
        let prob = StabilityProblem::new(&model, orbit)?;
        let opts = MaxExponentOptions {
            real_interval: self.exponents.interval,
            real_grid: self.exponents.grid,
            scan: with_scan,
            scan_resolution: self.exponents.scan_resolution,
        };
        let mut out = Vec::new();
        for q in prob.reduced_modes() {
            out.push(prob.max_exponent(q, &opts)?);
        }
        Ok(out)
    }

    fn verdict(&self, exponents: &[ModeExponents]) -> bool {
        exponents.iter().all(|mode| match &mode.max {
            Some(max) => max.re <= self.exponents.verdict_threshold,
            None => true,
        })
    }

    fn make_point(
        &self,
        param: f64,
        orbit: OrbitSolution,
        index: usize,
    ) -> Result<BranchPoint> {
        if !self.exponents.enabled || self.wave_mode != 0 {
            return Ok(BranchPoint {
                param,
                orbit,
                exponents: Vec::new(),
                stable: None,
            });
        }
        let with_scan = self.exponents.full_scan_every != 0
            && index % self.exponents.full_scan_every == 0;
        let exponents = self.exponents_at(param, &orbit, with_scan)?;
        let stable = Some(self.verdict(&exponents));
        Ok(BranchPoint {
            param,
            orbit,
            exponents,
            stable,
        })
    }

    /// Trace a branch from a converged starting orbit.
    ///
    /// `direction` selects the initial parameter direction; the branch is
    /// followed through folds until it leaves `range`, runs out of points,
    /// collapses to an equilibrium, or the corrector gives up.
    pub fn continue_branch(
        &self,
        start_orbit: &OrbitSolution,
        start_param: f64,
        direction: f64,
        range: (f64, f64),
    ) -> Result<Branch> {
        let (lo, hi) = range;
        if !(lo <= start_param && start_param <= hi) {
            return Err(Error::InvalidParameter(format!(
                "start parameter {start_param} outside range [{lo}, {hi}]"
            )));
        }
        let n = self.basis.len();
        let t_scale = 1.0 / start_orbit.period;
        let direction = if direction >= 0.0 { 1.0 } else { -1.0 };

        let mut points = Vec::new();
        let mut step_sizes = Vec::new();
        let mut folds = Vec::new();
        points.push(self.make_point(start_param, start_orbit.clone(), 0)?);

        // First step: natural continuation with a parameter increment.
        let mut ds = self.steps.ds0;
        let first = {
            let mut dparam = direction * ds;
            let mut attempt = 0;
            loop {
                let param = (start_param + dparam).clamp(lo, hi);
                match self.solve_at(param, &start_orbit.x, start_orbit.period) {
                    Ok(orbit) if (param - start_param).abs() > 0.0 => break Ok((param, orbit)),
                    Ok(_) | Err(_) if attempt >= self.steps.max_halvings => {
                        break Err(Error::FirstStepFailed(Box::new(Error::NoConvergence {
                            iterations: self.newton.max_iter,
                            residual: f64::NAN,
                        })))
                    }
                    _ => {
                        attempt += 1;
                        dparam *= 0.5;
                    }
                }
            }
        };
        let (param1, orbit1) = match first {
            Ok(v) => v,
            Err(e) => return Err(e),
        };
        step_sizes.push((param1 - start_param).abs());
        points.push(self.make_point(param1, orbit1, 1)?);

        let weigh = |x: &[f64], t: f64, param: f64| -> DVector<f64> {
            let mut z = DVector::zeros(n + 2);
            for (i, v) in x.iter().enumerate() {
                z[i] = *v;
            }
            z[n] = t * t_scale;
            z[n + 1] = param;
            z
        };

        let mut termination = Termination::MaxPoints;
        let mut successes = 0usize;

        'outer: while points.len() < self.steps.max_points {
            let last = &points[points.len() - 1];
            let prev = &points[points.len() - 2];
            if last.param < lo || last.param > hi {
                termination = Termination::RangeExhausted;
                break;
            }
            let z_last = weigh(&last.orbit.x, last.orbit.period, last.param);
            let z_prev = weigh(&prev.orbit.x, prev.orbit.period, prev.param);
            let mut tangent = &z_last - &z_prev;
            let norm = tangent.norm();
            if norm == 0.0 {
                termination = Termination::StepUnderflow { param: last.param };
                break;
            }
            tangent /= norm;

            let mut halvings = 0usize;
            loop {
                let z_pred = &z_last + &tangent * ds;
                match self.correct(&z_pred, &z_last, &tangent, ds, t_scale) {
                    Ok((x, t, param, norm)) => {
                        let orbit =
                            OrbitSolution::from_samples(x, t, self.basis, self.wave_mode, norm)?;
                        if orbit.harmonic_content() <= solver::DEGENERATE_CONTENT {
                            termination = Termination::Collapsed { param };
                            break 'outer;
                        }
                        let index = points.len();
                        let point = self.make_point(param, orbit, index)?;
                        // fold: the parameter direction reverses
                        let d_new = point.param - last.param;
                        let d_old = last.param - prev.param;
                        if d_new * d_old < 0.0 {
                            folds.push(index - 1);
                        }
                        points.push(point);
                        step_sizes.push(ds);
                        successes += 1;
                        if successes >= self.steps.grow_after {
                            ds = (ds * self.steps.grow_factor).min(self.steps.ds_max);
                            successes = 0;
                        }
                        break;
                    }
                    Err(Error::CollapsedToEquilibrium { period: _, .. }) => {
                        termination = Termination::Collapsed { param: last.param };
                        break 'outer;
                    }
                    Err(_) => {
                        halvings += 1;
                        successes = 0;
                        if halvings > self.steps.max_halvings {
                            termination = Termination::StepUnderflow { param: last.param };
                            break 'outer;
                        }
                        ds *= 0.5;
                    }
                }
            }
        }

        Ok(Branch {
            points,
            folds,
            events: Vec::new(),
            termination,
            step_sizes,
        })
    }

    /// Newton corrector for the augmented system; returns the corrected
    /// `(X, T, param)` with the final residual norm.
    fn correct(
        &self,
        z_pred: &DVector<f64>,
        z_prev: &DVector<f64>,
        tangent: &DVector<f64>,
        ds: f64,
        t_scale: f64,
    ) -> Result<(Vec<f64>, f64, f64, f64)> {
        let n = self.basis.len();
        let mut x: Vec<f64> = z_pred.iter().take(n).copied().collect();
        let mut t = z_pred[n] / t_scale;
        let mut param = z_pred[n + 1];

        let full_residual = |x: &[f64], t: f64, param: f64| -> Result<(Vec<f64>, f64)> {
            let model = (self.setter)(param);
            let problem = HbProblem::new(&model, self.basis)?
                .with_wave_mode(self.wave_mode)?
                .with_phase_component(self.phase_component)?;
            let mut r = solver::hb_residual(x, t, &problem)?;
            let z = {
                let mut z = DVector::zeros(n + 2);
                for (i, v) in x.iter().enumerate() {
                    z[i] = *v;
                }
                z[n] = t * t_scale;
                z[n + 1] = param;
                z
            };
            let arc = tangent.dot(&(&z - z_prev)) - ds;
            r.push(arc);
            let norm = r.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
            Ok((r, norm))
        };

        let (mut residual, mut norm) = full_residual(&x, t, param)?;

        for iter in 0..self.newton.max_iter {
            if norm < self.newton.tol_residual {
                return Ok((x, t, param, norm));
            }
            let model = (self.setter)(param);
            let problem = HbProblem::new(&model, self.basis)?
                .with_wave_mode(self.wave_mode)?
                .with_phase_component(self.phase_component)?;
            let ops = solver::build_operators(&problem, t)?;
            let eval_jac = solver::jacobian_for_continuation(&x, t, &problem, &ops)?;

            // bordered system: rows = dyn + phase + arclength,
            // cols = X, T, param
            let mut jac = DMatrix::zeros(n + 2, n + 2);
            for i in 0..=n {
                for j in 0..=n {
                    jac[(i, j)] = eval_jac[(i, j)];
                }
            }
            // parameter column by central differences of the residual
            let h = 1e-6 * param.abs().max(1.0);
            let rp = {
                let model = (self.setter)(param + h);
                let problem = HbProblem::new(&model, self.basis)?
                    .with_wave_mode(self.wave_mode)?
                    .with_phase_component(self.phase_component)?;
                solver::hb_residual(&x, t, &problem)?
            };
            let rm = {
                let model = (self.setter)(param - h);
                let problem = HbProblem::new(&model, self.basis)?
                    .with_wave_mode(self.wave_mode)?
                    .with_phase_component(self.phase_component)?;
                solver::hb_residual(&x, t, &problem)?
            };
            for i in 0..=n {
                jac[(i, n + 1)] = (rp[i] - rm[i]) / (2.0 * h);
            }
            // arclength row in (X, T, param) coordinates
            for j in 0..n {
                jac[(n + 1, j)] = tangent[j];
            }
            jac[(n + 1, n)] = tangent[n] * t_scale;
            jac[(n + 1, n + 1)] = tangent[n + 1];

            let rhs = DVector::from_fn(n + 2, |i, _| -residual[i]);
            let delta = jac
                .lu()
                .solve(&rhs)
                .ok_or(Error::SingularJacobian { step: iter })?;

            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= self.newton.min_damping {
                let x_trial: Vec<f64> = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v + alpha * delta[i])
                    .collect();
                let t_trial = t + alpha * delta[n];
                let param_trial = param + alpha * delta[n + 1];
                if t_trial > 0.0 {
                    if let Ok((r_trial, norm_trial)) =
                        full_residual(&x_trial, t_trial, param_trial)
                    {
                        if norm_trial.is_finite() && norm_trial < norm {
                            x = x_trial;
                            t = t_trial;
                            param = param_trial;
                            residual = r_trial;
                            norm = norm_trial;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= self.newton.damping_factor;
            }
            if !accepted {
                return Err(Error::NoConvergence {
                    iterations: iter + 1,
                    residual: norm,
                });
            }
        }
        if norm < self.newton.tol_residual {
            return Ok((x, t, param, norm));
        }
        Err(Error::NoConvergence {
            iterations: self.newton.max_iter,
            residual: norm,
        })
    }

    /// Stability-change events along a monitored branch, refined by
    /// parameter bisection to brackets of width at most 0.01.
    pub fn detect_stability_events(&self, branch: &Branch) -> Result<Vec<StabilityEvent>> {
        let n_modes = branch
            .points
            .first()
            .map_or(0, |p| p.exponents.len());
        let mut events = Vec::new();
        let flag = |mode: &ModeExponents| -> Option<bool> {
            mode.max
                .as_ref()
                .map(|m| m.re > self.exponents.verdict_threshold)
        };
        for q in 0..n_modes {
            for w in 0..branch.points.len() - 1 {
                let a = &branch.points[w];
                let b = &branch.points[w + 1];
                let (Some(fa), Some(fb)) = (flag(&a.exponents[q]), flag(&b.exponents[q])) else {
                    continue;
                };
                if fa == fb {
                    continue;
                }
                let refined = self.refine_event(q, a, b)?;
                events.push(refined);
            }
        }
        events.sort_by(|a, b| a.lower.partial_cmp(&b.lower).unwrap());
        Ok(events)
    }

    fn refine_event(
        &self,
        q: usize,
        a: &BranchPoint,
        b: &BranchPoint,
    ) -> Result<StabilityEvent> {
        let unstable = |orbit: &OrbitSolution, param: f64| -> Result<Option<bool>> {
            let model = (self.setter)(param);
            let prob = StabilityProblem::new(&model, orbit)?;
            let opts = MaxExponentOptions {
                real_interval: self.exponents.interval,
                real_grid: self.exponents.grid,
                scan: false,
                scan_resolution: self.exponents.scan_resolution,
            };
            let mode = prob.max_exponent(q, &opts)?;
            Ok(mode.max.map(|m| m.re > self.exponents.verdict_threshold))
        };

        let mut lo = a.param;
        let mut hi = b.param;
        let mut orbit_lo = a.orbit.clone();
        let mut orbit_hi = b.orbit.clone();
        let flag_lo = a.exponents[q]
            .max
            .as_ref()
            .map(|m| m.re > self.exponents.verdict_threshold)
            .unwrap_or(false);

        while (hi - lo).abs() > 0.01 {
            let mid = 0.5 * (lo + hi);
            // seed from the closer bracket endpoint
            let (seed, t_seed) = if (mid - lo).abs() < (mid - hi).abs() {
                (orbit_lo.x.clone(), orbit_lo.period)
            } else {
                (orbit_hi.x.clone(), orbit_hi.period)
            };
            let orbit_mid = match self.solve_at(mid, &seed, t_seed) {
                Ok(orbit) => orbit,
                Err(_) => break, // best effort near folds
            };
            match unstable(&orbit_mid, mid)? {
                Some(f) if f == flag_lo => {
                    lo = mid;
                    orbit_lo = orbit_mid;
                }
                Some(_) => {
                    hi = mid;
                    orbit_hi = orbit_mid;
                }
                None => break,
            }
        }
        let (lower, upper) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        Ok(StabilityEvent {
            mode: q,
            lower,
            upper,
        })
    }
}

/// The time-translation root reported for a branch point, if present.
pub fn trivial_root(point: &BranchPoint) -> Option<crate::floquet::FloquetExponent> {
    point
        .exponents
        .first()
        .and_then(|m| m.trivial)
        .filter(|t| t.lambda().norm() < TRIVIAL_RADIUS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeDynamics, PrimerParams};
    use crate::simulate::{integrate, HistoryFunction, SyncSystem};
    use crate::solver::initial_guess_from_simulation;

    fn primer_at_tau(tau: f64) -> NodeModel {
        NodeModel::node(NodeDynamics::Primer(
            PrimerParams::new(-1.0, 0.5, 20.0, tau).unwrap(),
        ))
    }

    fn primer_start(basis: &SpectralBasis, tau: f64) -> OrbitSolution {
        let model = primer_at_tau(tau);
        let problem = HbProblem::new(&model, basis).unwrap();
        let system = SyncSystem::new(&model);
        let mut state = model.steady_states()[0].clone();
        state[0] += 0.05;
        let history = HistoryFunction::Constant(state);
        let sim = integrate(&system, &history, 250.0, 0.02, 0.1).unwrap();
        let (x, t) = initial_guess_from_simulation(&sim, basis, 0).unwrap();
        solver::solve_orbit(&x, t, &problem, &NewtonSettings::default()).unwrap()
    }

    #[test]
    fn primer_branch_in_the_delay_traces_and_reverses() {
        let basis = SpectralBasis::new(40, 1).unwrap();
        let start = primer_start(&basis, 2.0);
        let setter = |tau: f64| primer_at_tau(tau);
        let problem = ContinuationProblem {
            setter: &setter,
            basis: &basis,
            phase_component: 0,
            wave_mode: 0,
            newton: NewtonSettings::default(),
            steps: StepSettings {
                ds0: 0.05,
                ds_max: 0.1,
                max_points: 40,
                ..StepSettings::default()
            },
            exponents: ExponentPolicy {
                enabled: false,
                ..ExponentPolicy::default()
            },
        };
        let fwd = problem
            .continue_branch(&start, 2.0, 1.0, (1.8, 2.4))
            .unwrap();
        assert!(fwd.points.len() > 5);
        assert_eq!(fwd.termination, Termination::RangeExhausted);
        // every point satisfies the full residual
        for p in &fwd.points[1..] {
            assert!(
                p.orbit.residual_norm < 1e-10,
                "residual {} at tau = {}",
                p.orbit.residual_norm,
                p.param
            );
        }
        // arclength consistency
        for (w, ds) in fwd.points.windows(2).zip(&fwd.step_sizes) {
            let dx: f64 = w[0]
                .orbit
                .x
                .iter()
                .zip(&w[1].orbit.x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            let dt = (w[0].orbit.period - w[1].orbit.period) / start.period;
            let dp = w[0].param - w[1].param;
            let dist = (dx + dt * dt + dp * dp).sqrt();
            assert!(dist <= 2.0 * ds + 1e-9, "step {dist} exceeds 2 ds = {}", 2.0 * ds);
        }

        // reverse from the endpoint and re-visit the same parameters
        // (the final point may overshoot the range by up to one step)
        let end = fwd.points.last().unwrap();
        let back = problem
            .continue_branch(&end.orbit, end.param, -1.0, (1.8, end.param))
            .unwrap();
        assert!(back.points.len() > 5);
        for bp in &back.points {
            // find the bracketing forward points and interpolate the period
            let mut best: Option<(f64, f64)> = None;
            for w in fwd.points.windows(2) {
                let (p0, p1) = (w[0].param, w[1].param);
                if (p0 - bp.param) * (p1 - bp.param) <= 0.0 && (p1 - p0).abs() > 1e-12 {
                    let s = (bp.param - p0) / (p1 - p0);
                    let t = w[0].orbit.period + s * (w[1].orbit.period - w[0].orbit.period);
                    best = Some((t, (p1 - p0).abs()));
                    break;
                }
            }
            if let Some((t_interp, _)) = best {
                // linear interpolation of a smooth branch over steps ~0.05
                assert!(
                    (bp.orbit.period - t_interp).abs() < 1e-3,
                    "retrace mismatch at {}: {} vs {}",
                    bp.param,
                    bp.orbit.period,
                    t_interp
                );
            }
        }
    }

    #[test]
    fn retrace_hits_the_start_point_exactly() {
        // reversing from the endpoint must pass back through the start
        // parameter with matching period to solver accuracy
        let basis = SpectralBasis::new(30, 1).unwrap();
        let start = primer_start(&basis, 2.0);
        let setter = |tau: f64| primer_at_tau(tau);
        let problem = ContinuationProblem {
            setter: &setter,
            basis: &basis,
            phase_component: 0,
            wave_mode: 0,
            newton: NewtonSettings::default(),
            steps: StepSettings {
                ds0: 0.04,
                ds_max: 0.04,
                max_points: 12,
                ..StepSettings::default()
            },
            exponents: ExponentPolicy {
                enabled: false,
                ..ExponentPolicy::default()
            },
        };
        let fwd = problem
            .continue_branch(&start, 2.0, 1.0, (1.9, 2.3))
            .unwrap();
        let end = fwd.points.last().unwrap();
        // solve directly back at the start parameter, seeded from the end
        let back = problem
            .solve_at(2.0, &end.orbit.x, end.orbit.period)
            .unwrap();
        assert!(
            (back.period - start.period).abs() < 1e-6,
            "period {} vs {}",
            back.period,
            start.period
        );
    }

    #[test]
    fn rejects_start_outside_range() {
        let basis = SpectralBasis::new(20, 1).unwrap();
        let start = primer_start(&basis, 2.0);
        let setter = |tau: f64| primer_at_tau(tau);
        let problem = ContinuationProblem::new(&setter, &basis);
        assert!(matches!(
            problem.continue_branch(&start, 2.0, 1.0, (2.5, 3.0)),
            Err(Error::InvalidParameter(_))
        ));
    }
}
