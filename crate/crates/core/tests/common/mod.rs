//! Shared fixtures and independent oracles for the integration and
//! acceptance suites.

use hbnet::*;

/// Wilson–Cowan node parameters used throughout: kappa = 1/2, local weights
/// (w_uu, w_vu, w_uv, w_vv) = (1, 2, 1, 1/4), drives (-0.05, -0.3),
/// gain 20.
pub fn wc_dynamics(tau0: f64) -> NodeDynamics {
    NodeDynamics::WilsonCowan(
        WilsonCowanParams::new(0.5, 1.0, 2.0, 1.0, 0.25, -0.05, -0.3, 20.0, tau0).unwrap(),
    )
}

pub fn wc_node() -> NodeModel {
    NodeModel::node(wc_dynamics(0.2))
}

/// The seven-node Wilson–Cowan ring: total coupling 0.2 spread as
/// exp(-2 dist), zero self-weight, intra-node delay 1.5.
pub fn wc_ring(tau_inter: f64) -> NodeModel {
    let topo = RingTopology::exp_decay(7, 1.0, 0.2, 2.0, tau_inter).unwrap();
    NodeModel::ring(wc_dynamics(1.5), topo)
}

pub fn primer_node(w: f64, drive: f64, beta: f64, tau: f64) -> NodeModel {
    NodeModel::node(NodeDynamics::Primer(
        PrimerParams::new(w, drive, beta, tau).unwrap(),
    ))
}

/// Solve an orbit by following a transient of the synchronous equation.
pub fn solve_via_simulation(
    model: &NodeModel,
    basis: &SpectralBasis,
    t_end: f64,
) -> Result<OrbitSolution> {
    let problem = HbProblem::new(model, basis)?;
    let system = SyncSystem::new(model);
    let mut state = model
        .steady_states()
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidParameter("no steady state".into()))?;
    state[0] += 0.05;
    let history = HistoryFunction::Constant(state);
    let delays = model.delays();
    let min_pos = delays
        .iter()
        .copied()
        .filter(|&t| t > 0.0)
        .fold(f64::INFINITY, f64::min);
    let dt = (min_pos / 10.0).min(0.02);
    let sim = integrate(&system, &history, t_end, dt, dt * 5.0)?;
    let (x, t) = initial_guess_from_simulation(&sim, basis, 0)?;
    solve_orbit(&x, t, &problem, &NewtonSettings::default())
}

/// Solve an orbit from a sinusoidal seed around the steady state; tries the
/// given (amplitude, period) list in order.
pub fn solve_via_sinusoid(
    model: &NodeModel,
    basis: &SpectralBasis,
    seeds: &[(f64, f64)],
) -> Result<OrbitSolution> {
    let problem = HbProblem::new(model, basis)?;
    let steady = model
        .steady_states()
        .into_iter()
        .min_by(|a, b| {
            (a[0] - 0.5)
                .abs()
                .partial_cmp(&(b[0] - 0.5).abs())
                .unwrap()
        })
        .ok_or_else(|| Error::InvalidParameter("no steady state".into()))?;
    let p = model.dim();
    let mut last = Error::NoConvergence {
        iterations: 0,
        residual: f64::NAN,
    };
    for &(amplitude, period) in seeds {
        let mut x = vec![0.0; basis.len()];
        for (row, tn) in basis.sample_times(period).iter().enumerate() {
            for (c, s) in steady.iter().enumerate() {
                x[row * p + c] = s
                    + if c == 0 {
                        amplitude * (2.0 * std::f64::consts::PI * tn / period).cos()
                    } else {
                        0.0
                    };
            }
        }
        match solve_orbit(&x, period, &problem, &NewtonSettings::default()) {
            Ok(orbit) => return Ok(orbit),
            Err(e) => last = e,
        }
    }
    Err(last)
}

/// Brute-force Floquet multipliers of a synchronous orbit of a primer ring,
/// fully independent of the harmonic-balance path: the history segment is
/// discretised into `segments` piecewise-linear pieces per node, the full
/// linearised network is integrated over one period with RK4 (delayed reads
/// from the stored dense trajectory), and the resulting linear map's
/// eigenvalues are returned.
pub fn monodromy_multipliers(
    model: &NodeModel,
    orbit: &OrbitSolution,
    segments: usize,
) -> Vec<num_complex::Complex64> {
    let topo = model.topology.as_ref().expect("ring model");
    let n = topo.len();
    assert_eq!(orbit.p, 1, "primer ring expected");
    let (w_self, drive, beta) = match &model.dynamics {
        NodeDynamics::Primer(p) => (p.w, p.drive, p.sigmoid.beta),
        _ => panic!("primer ring expected"),
    };
    let sig = SigmoidParams::new(beta).unwrap();
    let tau0 = model.tau_intra();
    let delays = model.delays();
    let tau_max = delays.iter().cloned().fold(0.0_f64, f64::max);
    let period = orbit.period;

    // slope of the activation along the orbit
    let eps = topo.eps();
    let weights = topo.weights().to_vec();
    let chi = |t: f64| -> f64 {
        let mut acc = drive + w_self * orbit.evaluate(t - tau0)[0];
        for (k, w) in weights.iter().enumerate().skip(1) {
            acc += eps * w * orbit.evaluate(t - delays[k])[0];
        }
        acc + eps * weights[0] * orbit.evaluate(t - tau0)[0]
    };
    let rho = move |t: f64| sigmoid_derivative(chi(t), &sig);

    // grid over the history window
    let h = tau_max / segments as f64;
    let dim = n * (segments + 1);
    let dt = (h / 4.0).min(period / 2048.0);
    let steps = (period / dt).ceil() as usize;
    let dt = period / steps as f64;

    // linearised network right-hand side
    let rhs = |t: f64,
               y: &[f64],
               delayed_at: &dyn Fn(usize, f64) -> f64,
               out: &mut [f64]| {
        let r = rho(t);
        for i in 0..n {
            let mut coupling = w_self * delayed_at(i, t - tau0)
                + eps * weights[0] * delayed_at(i, t - tau0);
            for offset in 1..n {
                let j = (i + offset) % n;
                coupling += eps * weights[offset] * delayed_at(j, t - delays[offset.min(n - offset)]);
            }
            out[i] = -y[i] + r * coupling;
        }
    };

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for basis_index in 0..dim {
        let node = basis_index % n;
        let seg = basis_index / n;
        // piecewise-linear hat on the history grid [-tau_max, 0]
        let initial = move |i: usize, t: f64| -> f64 {
            if i != node || t > 0.0 {
                return 0.0;
            }
            let s = (t + tau_max) / h; // grid coordinate 0..segments
            let d = (s - seg as f64).abs();
            (1.0 - d).max(0.0)
        };

        // dense storage of the forward trajectory (values and slopes)
        let mut values: Vec<f64> = Vec::with_capacity((steps + 1) * n);
        let mut slopes: Vec<f64> = Vec::with_capacity((steps + 1) * n);
        let mut y: Vec<f64> = (0..n).map(|i| initial(i, 0.0)).collect();

        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut stage = vec![0.0; n];

        // cubic Hermite read from the stored dense trajectory
        let hermite = |values: &[f64], slopes: &[f64], i: usize, tq: f64| -> f64 {
            if tq <= 0.0 {
                return initial(i, tq);
            }
            let s = tq / dt;
            let k = (s.floor() as usize).min(values.len() / n - 2);
            let u = s - k as f64;
            let y1 = values[k * n + i];
            let y2 = values[(k + 1) * n + i];
            let d1 = slopes[k * n + i];
            let d2 = slopes[(k + 1) * n + i];
            let u2 = u * u;
            let u3 = u2 * u;
            (2.0 * u3 - 3.0 * u2 + 1.0) * y1
                + (u3 - 2.0 * u2 + u) * dt * d1
                + (-2.0 * u3 + 3.0 * u2) * y2
                + (u3 - u2) * dt * d2
        };

        for step in 0..=steps {
            let t = step as f64 * dt;
            rhs(t, &y, &|i, tq| hermite(&values, &slopes, i, tq), &mut k1);
            values.extend_from_slice(&y);
            slopes.extend_from_slice(&k1);
            if step == steps {
                break;
            }
            for c in 0..n {
                stage[c] = y[c] + 0.5 * dt * k1[c];
            }
            rhs(
                t + 0.5 * dt,
                &stage,
                &|i, tq| hermite(&values, &slopes, i, tq),
                &mut k2,
            );
            for c in 0..n {
                stage[c] = y[c] + 0.5 * dt * k2[c];
            }
            rhs(
                t + 0.5 * dt,
                &stage,
                &|i, tq| hermite(&values, &slopes, i, tq),
                &mut k3,
            );
            for c in 0..n {
                stage[c] = y[c] + dt * k3[c];
            }
            rhs(
                t + dt,
                &stage,
                &|i, tq| hermite(&values, &slopes, i, tq),
                &mut k4,
            );
            for c in 0..n {
                y[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }

        // image column: the advanced history sampled on the grid
        let mut column = vec![0.0; dim];
        for seg_out in 0..=segments {
            let tq = period - tau_max + seg_out as f64 * h;
            for i in 0..n {
                column[seg_out * n + i] = hermite(&values, &slopes, i, tq);
            }
        }
        columns.push(column);
    }

    let matrix = nalgebra::DMatrix::from_fn(dim, dim, |i, j| columns[j][i]);
    matrix.complex_eigenvalues().iter().cloned().collect()
}
