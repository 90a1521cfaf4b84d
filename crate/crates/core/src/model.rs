//! Node dynamics and ring-network structure.
//!
//! Two node types are supported: a scalar rate unit with delayed
//! self-feedback (`Primer`) and the two-population Wilson–Cowan neural mass
//! (`WilsonCowan`). Nodes may be embedded in a circulant ring whose coupling
//! weights and delays depend only on the cyclic distance between nodes, so
//! that a synchronous network state obeys a single effective node equation
//! with one delayed input per distance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gain of the logistic activation `F(x) = 1 / (1 + exp(-beta x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub beta: f64,
}

impl SigmoidParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigmoid gain beta must be > 0 (got {beta})"
            )));
        }
        Ok(Self { beta })
    }

    pub fn value(&self, x: f64) -> f64 {
        sigmoid(x, self)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        sigmoid_derivative(x, self)
    }
}

/// Logistic rate function, evaluated so that only negative arguments are
/// exponentiated (no overflow at large gain).
pub fn sigmoid(x: f64, params: &SigmoidParams) -> f64 {
    let z = params.beta * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic rate function: `beta F (1 - F)`.
pub fn sigmoid_derivative(x: f64, params: &SigmoidParams) -> f64 {
    let f = sigmoid(x, params);
    params.beta * f * (1.0 - f)
}

/// Scalar rate unit `x' = -x + F(drive + w x(t - tau))`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrimerParams {
    /// Self-coupling weight applied to the delayed state.
    pub w: f64,
    /// Constant background drive.
    pub drive: f64,
    pub sigmoid: SigmoidParams,
    /// Self-delay (time units, >= 0).
    pub tau: f64,
}

impl PrimerParams {
    pub fn new(w: f64, drive: f64, beta: f64, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "self-delay tau must be >= 0 (got {tau})"
            )));
        }
        Ok(Self {
            w,
            drive,
            sigmoid: SigmoidParams::new(beta)?,
            tau,
        })
    }
}

/// Two-population Wilson–Cowan node.
///
/// `u' = -u + F(i_u + w_uu u_d - w_vu v_d + coupling)`,
/// `kappa v' = -v + F(i_v + w_uv u_d - w_vv v_d)`,
/// where subscript `d` denotes evaluation at `t - tau0` and `coupling` is the
/// delayed ring input into the excitatory population.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WilsonCowanParams {
    /// Inhibitory time-scale ratio (> 0).
    pub kappa: f64,
    pub w_uu: f64,
    pub w_vu: f64,
    pub w_uv: f64,
    pub w_vv: f64,
    pub i_u: f64,
    pub i_v: f64,
    pub sigmoid: SigmoidParams,
    /// Self-delay (time units, >= 0).
    pub tau0: f64,
}

impl WilsonCowanParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kappa: f64,
        w_uu: f64,
        w_vu: f64,
        w_uv: f64,
        w_vv: f64,
        i_u: f64,
        i_v: f64,
        beta: f64,
        tau0: f64,
    ) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be > 0 (got {kappa})"
            )));
        }
        for (name, v) in [("w_uu", w_uu), ("w_vu", w_vu), ("w_uv", w_uv), ("w_vv", w_vv)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "local weight {name} must be >= 0 (got {v})"
                )));
            }
        }
        if !(tau0 >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "self-delay tau0 must be >= 0 (got {tau0})"
            )));
        }
        Ok(Self {
            kappa,
            w_uu,
            w_vu,
            w_uv,
            w_vv,
            i_u,
            i_v,
            sigmoid: SigmoidParams::new(beta)?,
            tau0,
        })
    }
}

/// Node dynamics variants.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum NodeDynamics {
    Primer(PrimerParams),
    WilsonCowan(WilsonCowanParams),
}

impl NodeDynamics {
    pub fn dim(&self) -> usize {
        match self {
            NodeDynamics::Primer(_) => 1,
            NodeDynamics::WilsonCowan(_) => 2,
        }
    }

    pub fn tau_intra(&self) -> f64 {
        match self {
            NodeDynamics::Primer(p) => p.tau,
            NodeDynamics::WilsonCowan(p) => p.tau0,
        }
    }

    pub fn set_tau_intra(&mut self, tau: f64) {
        match self {
            NodeDynamics::Primer(p) => p.tau = tau,
            NodeDynamics::WilsonCowan(p) => p.tau0 = tau,
        }
    }
}

/// One cyclic-distance coupling class of a ring.
#[derive(Debug, Clone, Copy)]
pub struct DistanceClass {
    /// Cyclic distance (1..=N/2).
    pub dist: usize,
    /// Raw circulant weight `w_d` (un-scaled by eps).
    pub weight: f64,
    /// Delay for this distance.
    pub tau: f64,
    /// Number of offsets at this distance (2, or 1 for the antipode of an
    /// even ring).
    pub count: usize,
}

impl DistanceClass {
    /// Sum of the circulant eigenvalue factors `omega_q^k` over the offsets
    /// in this class. Real because paired offsets are conjugate.
    pub fn mode_factor(&self, q: usize, n: usize) -> f64 {
        let angle = 2.0 * std::f64::consts::PI * (q as f64) * (self.dist as f64) / (n as f64);
        if self.count == 2 {
            2.0 * angle.cos()
        } else {
            // antipode of an even ring: omega_q^(N/2) = (-1)^q
            angle.cos()
        }
    }
}

/// Circulant ring of `n` nodes with distance-dependent weights and delays.
///
/// `weights[k]` is the circulant profile `w_k = w(dist(k, 0))`; the effective
/// coupling from node `j` into node `i` is `eps * weights[(j - i) mod n]`
/// with delay `dist(i,j) * tau_inter` (or the node self-delay at distance 0).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingTopology {
    n: usize,
    eps: f64,
    weights: Vec<f64>,
    tau_inter: f64,
}

impl RingTopology {
    pub fn new(n: usize, eps: f64, weights: Vec<f64>, tau_inter: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidTopology("node count must be >= 1".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidTopology(format!(
                "coupling scale eps must be >= 0 (got {eps})"
            )));
        }
        if !(tau_inter > 0.0) {
            return Err(Error::InvalidTopology(format!(
                "inter-node delay unit must be > 0 (got {tau_inter})"
            )));
        }
        if weights.len() != n {
            return Err(Error::InvalidTopology(format!(
                "weight profile has {} entries, expected {n}",
                weights.len()
            )));
        }
        for (k, &w) in weights.iter().enumerate() {
            if !(w >= 0.0) {
                return Err(Error::InvalidTopology(format!(
                    "weight w_{k} must be >= 0 (got {w})"
                )));
            }
        }
        for k in 1..n {
            let d = (weights[k] - weights[n - k]).abs();
            if d > 1e-12 * weights[k].abs().max(1.0) {
                return Err(Error::InvalidTopology(format!(
                    "circulant symmetry violated: w_{k} = {} but w_{} = {}",
                    weights[k],
                    n - k,
                    weights[n - k]
                )));
            }
        }
        Ok(Self {
            n,
            eps,
            weights,
            tau_inter,
        })
    }

    /// Ring with profile `w(d) proportional to ratio^d` (decaying for
    /// ratio < 1), zero self-weight, normalised so that
    /// `eps * sum_k w_k = total`.
    pub fn geometric(n: usize, eps: f64, total: f64, ratio: f64, tau_inter: f64) -> Result<Self> {
        if !(ratio > 0.0) {
            return Err(Error::InvalidTopology(format!(
                "geometric ratio must be > 0 (got {ratio})"
            )));
        }
        Self::from_profile(n, eps, total, tau_inter, |d| ratio.powi(d as i32))
    }

    /// Ring with profile `w(d) proportional to exp(-rate d)`, zero
    /// self-weight, normalised so that `eps * sum_k w_k = total`.
    pub fn exp_decay(n: usize, eps: f64, total: f64, rate: f64, tau_inter: f64) -> Result<Self> {
        Self::from_profile(n, eps, total, tau_inter, |d| (-rate * d as f64).exp())
    }

    fn from_profile<F: Fn(usize) -> f64>(
        n: usize,
        eps: f64,
        total: f64,
        tau_inter: f64,
        profile: F,
    ) -> Result<Self> {
        if !(total >= 0.0) {
            return Err(Error::InvalidTopology(format!(
                "total coupling weight must be >= 0 (got {total})"
            )));
        }
        let mut weights = vec![0.0; n];
        let mut sum = 0.0;
        for (k, w) in weights.iter_mut().enumerate().skip(1) {
            let d = k.min(n - k);
            *w = profile(d);
            sum += *w;
        }
        if n > 1 && sum > 0.0 {
            // When eps = 0 the coupling vanishes anyway; keep the profile
            // normalised as if eps were 1 so the limit is well defined.
            let scale = if eps > 0.0 {
                total / (eps * sum)
            } else {
                total / sum
            };
            for w in &mut weights[1..] {
                *w *= scale;
            }
        }
        Self::new(n, eps, weights, tau_inter)
    }

    /// Replace the self-weight `w_0` (enters the node equation at the
    /// self-delay, scaled by eps).
    pub fn with_self_weight(mut self, w0: f64) -> Result<Self> {
        if !(w0 >= 0.0) {
            return Err(Error::InvalidTopology(format!(
                "self-weight must be >= 0 (got {w0})"
            )));
        }
        self.weights[0] = w0;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn set_eps(&mut self, eps: f64) {
        self.eps = eps;
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tau_inter(&self) -> f64 {
        self.tau_inter
    }

    pub fn set_tau_inter(&mut self, tau_inter: f64) -> Result<()> {
        if !(tau_inter > 0.0) {
            return Err(Error::InvalidTopology(format!(
                "inter-node delay unit must be > 0 (got {tau_inter})"
            )));
        }
        self.tau_inter = tau_inter;
        Ok(())
    }

    /// Cyclic distance between node indices.
    pub fn dist(&self, i: usize, j: usize) -> usize {
        let d = i.abs_diff(j) % self.n;
        d.min(self.n - d)
    }

    /// Delay ladder indexed by node offset: `tau_k = dist(k,0) * tau_inter`
    /// for k > 0 and the supplied self-delay at k = 0.
    pub fn delays(&self, tau0: f64) -> Vec<f64> {
        (0..self.n)
            .map(|k| {
                if k == 0 {
                    tau0
                } else {
                    self.dist(k, 0) as f64 * self.tau_inter
                }
            })
            .collect()
    }

    /// Largest cyclic distance in the ring.
    pub fn max_distance(&self) -> usize {
        self.n / 2
    }

    /// Coupling classes for distances 1..=N/2 (distance 0 is handled with
    /// the local terms).
    pub fn distance_classes(&self) -> Vec<DistanceClass> {
        (1..=self.max_distance())
            .map(|d| DistanceClass {
                dist: d,
                weight: self.weights[d],
                tau: d as f64 * self.tau_inter,
                count: if 2 * d == self.n { 1 } else { 2 },
            })
            .collect()
    }

    /// Signed node offsets `d` with their effective weight `eps w_|d|` and
    /// delay. For even rings the antipodal offset `N/2` appears once.
    pub fn signed_offsets(&self) -> Vec<(i64, f64, f64)> {
        let mut out = Vec::new();
        for class in self.distance_classes() {
            let d = class.dist as i64;
            out.push((d, self.eps * class.weight, class.tau));
            if class.count == 2 {
                out.push((-d, self.eps * class.weight, class.tau));
            }
        }
        out
    }

    /// Dense circulant weight matrix `w_ij = w(dist(i,j))` (un-scaled by eps).
    pub fn weight_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.weights[(j + self.n - i) % self.n])
    }
}

/// Jacobian blocks of the node right-hand side with respect to the current
/// state (`j1`, constant) and each delayed input channel (`w[k]`). The
/// derivative of the right-hand side with respect to delayed channel `k` is
/// `upsilon * w[k]`.
#[derive(Debug, Clone)]
pub struct JacobianBlocks {
    pub j1: DMatrix<f64>,
    pub w: Vec<DMatrix<f64>>,
}

/// A node model, optionally embedded in a ring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeModel {
    pub dynamics: NodeDynamics,
    pub topology: Option<RingTopology>,
}

impl NodeModel {
    pub fn node(dynamics: NodeDynamics) -> Self {
        Self {
            dynamics,
            topology: None,
        }
    }

    pub fn ring(dynamics: NodeDynamics, topology: RingTopology) -> Self {
        Self {
            dynamics,
            topology: Some(topology),
        }
    }

    /// State dimension per node.
    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn tau_intra(&self) -> f64 {
        self.dynamics.tau_intra()
    }

    /// Number of delayed input channels: 1 for an isolated node, N for a
    /// ring (offset-indexed, channel 0 being the self-delay).
    pub fn delay_channels(&self) -> usize {
        self.topology.as_ref().map_or(1, |t| t.len())
    }

    /// Delay list matching the delayed-input channels.
    pub fn delays(&self) -> Vec<f64> {
        match &self.topology {
            None => vec![self.tau_intra()],
            Some(t) => t.delays(self.tau_intra()),
        }
    }

    /// Time-scale matrix: identity for the scalar node, `diag(1, 1/kappa)`
    /// for Wilson–Cowan.
    pub fn upsilon(&self) -> DMatrix<f64> {
        match &self.dynamics {
            NodeDynamics::Primer(_) => DMatrix::identity(1, 1),
            NodeDynamics::WilsonCowan(p) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 1.0 / p.kappa]))
            }
        }
    }

    /// Ring input `eps * sum_k w_k u_k` accumulated from the delayed channel
    /// states (u-components).
    fn coupling_drive(&self, delayed: &[&[f64]]) -> f64 {
        match &self.topology {
            None => 0.0,
            Some(t) => {
                let mut drive = 0.0;
                for (k, state) in delayed.iter().enumerate() {
                    drive += t.weights[k] * state[0];
                }
                t.eps * drive
            }
        }
    }

    /// Right-hand side given the current state, the delayed state on the
    /// self-delay channel and the accumulated ring drive.
    pub fn rhs_with_drive(&self, current: &[f64], delayed0: &[f64], drive: f64, out: &mut [f64]) {
        match &self.dynamics {
            NodeDynamics::Primer(p) => {
                let chi = p.drive + p.w * delayed0[0] + drive;
                out[0] = -current[0] + sigmoid(chi, &p.sigmoid);
            }
            NodeDynamics::WilsonCowan(p) => {
                let chi_u = p.i_u + p.w_uu * delayed0[0] - p.w_vu * delayed0[1] + drive;
                let chi_v = p.i_v + p.w_uv * delayed0[0] - p.w_vv * delayed0[1];
                out[0] = -current[0] + sigmoid(chi_u, &p.sigmoid);
                out[1] = (-current[1] + sigmoid(chi_v, &p.sigmoid)) / p.kappa;
            }
        }
    }

    /// Activation arguments (`chi_u`, and `chi_v` for Wilson–Cowan) at the
    /// given delayed channel states.
    pub fn activation_inputs(&self, delayed: &[&[f64]]) -> (f64, Option<f64>) {
        self.activation_inputs_with_drive(delayed[0], self.coupling_drive(delayed))
    }

    /// Activation arguments with the ring input supplied directly (used by
    /// the travelling-wave solver, where the drive carries per-harmonic
    /// phase factors and cannot be built from plain delayed states).
    pub fn activation_inputs_with_drive(
        &self,
        delayed0: &[f64],
        drive: f64,
    ) -> (f64, Option<f64>) {
        match &self.dynamics {
            NodeDynamics::Primer(p) => (p.drive + p.w * delayed0[0] + drive, None),
            NodeDynamics::WilsonCowan(p) => (
                p.i_u + p.w_uu * delayed0[0] - p.w_vu * delayed0[1] + drive,
                Some(p.i_v + p.w_uv * delayed0[0] - p.w_vv * delayed0[1]),
            ),
        }
    }

    /// Activation slopes `F'(chi)` for the two populations.
    pub fn activation_slopes(&self, chi_u: f64, chi_v: Option<f64>) -> (f64, Option<f64>) {
        match &self.dynamics {
            NodeDynamics::Primer(p) => (sigmoid_derivative(chi_u, &p.sigmoid), None),
            NodeDynamics::WilsonCowan(p) => (
                sigmoid_derivative(chi_u, &p.sigmoid),
                Some(sigmoid_derivative(chi_v.expect("p = 2"), &p.sigmoid)),
            ),
        }
    }

    /// Jacobian block of the right-hand side's nonlinearity with respect to
    /// the self-delay channel, with the ring self-weight folded into the
    /// (u, u) slot; equals `W_0` evaluated at the given slopes. The full
    /// derivative is `upsilon` times this block.
    pub fn local_delay_block(&self, rho_u: f64, rho_v: Option<f64>) -> DMatrix<f64> {
        let (eps, w0) = self
            .topology
            .as_ref()
            .map_or((0.0, 0.0), |t| (t.eps, t.weights[0]));
        match &self.dynamics {
            NodeDynamics::Primer(p) => DMatrix::from_element(1, 1, rho_u * (p.w + eps * w0)),
            NodeDynamics::WilsonCowan(p) => {
                let rho_v = rho_v.expect("p = 2");
                let mut block = DMatrix::zeros(2, 2);
                block[(0, 0)] = rho_u * (p.w_uu + eps * w0);
                block[(0, 1)] = -rho_u * p.w_vu;
                block[(1, 0)] = rho_v * p.w_uv;
                block[(1, 1)] = -rho_v * p.w_vv;
                block
            }
        }
    }

    /// Time derivative of the node state given one delayed state per channel.
    pub fn rhs(&self, current: &[f64], delayed: &[&[f64]]) -> Result<Vec<f64>> {
        self.check_channels(current, delayed)?;
        let drive = self.coupling_drive(delayed);
        let mut out = vec![0.0; self.dim()];
        self.rhs_with_drive(current, delayed[0], drive, &mut out);
        Ok(out)
    }

    /// Jacobian blocks at the given delayed channel states.
    ///
    /// `j1 = -upsilon` is the derivative with respect to the current state.
    /// `w[0]` couples the self-delay channel (local weights plus `eps w_0`);
    /// `w[k]` for k >= 1 has the single entry `eps F'(chi_u) w_k` in the
    /// (u, u) slot. The derivative with respect to delayed channel `k` is
    /// `upsilon * w[k]`.
    pub fn jacobian_blocks(&self, delayed: &[&[f64]]) -> Result<JacobianBlocks> {
        if delayed.len() != self.delay_channels() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} delayed states, got {}",
                self.delay_channels(),
                delayed.len()
            )));
        }
        let p = self.dim();
        let (chi_u, chi_v) = self.activation_inputs(delayed);
        let (eps, w0) = self
            .topology
            .as_ref()
            .map_or((0.0, 0.0), |t| (t.eps, t.weights[0]));

        let j1 = -self.upsilon();
        let mut w = Vec::with_capacity(self.delay_channels());
        match &self.dynamics {
            NodeDynamics::Primer(pp) => {
                let rho = sigmoid_derivative(chi_u, &pp.sigmoid);
                w.push(DMatrix::from_element(1, 1, rho * (pp.w + eps * w0)));
                if let Some(t) = &self.topology {
                    for k in 1..t.len() {
                        w.push(DMatrix::from_element(1, 1, eps * rho * t.weights[k]));
                    }
                }
            }
            NodeDynamics::WilsonCowan(pp) => {
                let rho_u = sigmoid_derivative(chi_u, &pp.sigmoid);
                let rho_v = sigmoid_derivative(chi_v.expect("p = 2"), &pp.sigmoid);
                let mut w0_block = DMatrix::zeros(p, p);
                w0_block[(0, 0)] = rho_u * (pp.w_uu + eps * w0);
                w0_block[(0, 1)] = -rho_u * pp.w_vu;
                w0_block[(1, 0)] = rho_v * pp.w_uv;
                w0_block[(1, 1)] = -rho_v * pp.w_vv;
                w.push(w0_block);
                if let Some(t) = &self.topology {
                    for k in 1..t.len() {
                        let mut wk = DMatrix::zeros(p, p);
                        wk[(0, 0)] = eps * rho_u * t.weights[k];
                        w.push(wk);
                    }
                }
            }
        }
        Ok(JacobianBlocks { j1, w })
    }

    fn check_channels(&self, current: &[f64], delayed: &[&[f64]]) -> Result<()> {
        let p = self.dim();
        if current.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "state has {} components, expected {p}",
                current.len()
            )));
        }
        if delayed.len() != self.delay_channels() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} delayed states, got {}",
                self.delay_channels(),
                delayed.len()
            )));
        }
        for d in delayed {
            if d.len() != p {
                return Err(Error::DimensionMismatch(format!(
                    "delayed state has {} components, expected {p}",
                    d.len()
                )));
            }
        }
        Ok(())
    }

    /// All constant states `x*` with `rhs(x*, [x*, ...]) = 0`, found by a
    /// sign-change scan over (0, 1) refined by bisection.
    pub fn steady_states(&self) -> Vec<Vec<f64>> {
        // Total weight seen by a synchronous constant state.
        let ring_gain = self
            .topology
            .as_ref()
            .map_or(0.0, |t| t.eps * t.weights.iter().sum::<f64>());
        match &self.dynamics {
            NodeDynamics::Primer(p) => {
                let g = |x: f64| x - sigmoid(p.drive + (p.w + ring_gain) * x, &p.sigmoid);
                scan_roots(g)
                    .into_iter()
                    .map(|x| vec![x])
                    .collect()
            }
            NodeDynamics::WilsonCowan(p) => {
                // For fixed u the v-equation has a unique root: the map
                // v -> v - F(i_v + w_uv u - w_vv v) is strictly increasing.
                let v_of_u = |u: f64| {
                    let h = |v: f64| v - sigmoid(p.i_v + p.w_uv * u - p.w_vv * v, &p.sigmoid);
                    bisect(h, -0.5, 1.5)
                };
                let g = |u: f64| {
                    let v = v_of_u(u);
                    u - sigmoid(
                        p.i_u + (p.w_uu + ring_gain) * u - p.w_vu * v,
                        &p.sigmoid,
                    )
                };
                scan_roots(g)
                    .into_iter()
                    .map(|u| vec![u, v_of_u(u)])
                    .collect()
            }
        }
    }
}

fn scan_roots<F: Fn(f64) -> f64>(g: F) -> Vec<f64> {
    let lo = -0.5;
    let hi = 1.5;
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let mut roots = Vec::new();
    let mut x_prev = lo;
    let mut g_prev = g(lo);
    for i in 1..=steps {
        let x = lo + i as f64 * h;
        let gx = g(x);
        if g_prev == 0.0 {
            roots.push(x_prev);
        } else if g_prev * gx < 0.0 {
            roots.push(bisect(&g, x_prev, x));
        }
        x_prev = x;
        g_prev = gx;
    }
    roots
}

fn bisect<F: Fn(f64) -> f64>(g: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut g_lo = g(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid);
        if g_mid == 0.0 || hi - lo < 1e-15 {
            return mid;
        }
        if g_lo * g_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wc_params() -> WilsonCowanParams {
        WilsonCowanParams::new(0.5, 1.0, 2.0, 1.0, 0.25, -0.05, -0.3, 20.0, 0.2).unwrap()
    }

    #[test]
    fn sigmoid_midpoint_and_symmetry() {
        let p = SigmoidParams::new(20.0).unwrap();
        assert_eq!(sigmoid(0.0, &p), 0.5);
        let p10 = SigmoidParams::new(10.0).unwrap();
        let x = 0.37;
        assert_abs_diff_eq!(sigmoid(x, &p10) + sigmoid(-x, &p10), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn sigmoid_matches_closed_form() {
        // 1 / (1 + exp(-2)) evaluated in extended precision.
        let p = SigmoidParams::new(20.0).unwrap();
        assert_abs_diff_eq!(
            sigmoid(0.1, &p),
            0.880_797_077_977_882_4,
            epsilon = 1e-15
        );
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        let p = SigmoidParams::new(80.0).unwrap();
        assert_eq!(sigmoid(1.0e4, &p), 1.0);
        assert_eq!(sigmoid(-1.0e4, &p), 0.0);
        assert!(sigmoid_derivative(1.0e4, &p).is_finite());
    }

    #[test]
    fn sigmoid_derivative_peak_and_symmetry() {
        let p = SigmoidParams::new(20.0).unwrap();
        assert_eq!(sigmoid_derivative(0.0, &p), 5.0);
        let p10 = SigmoidParams::new(10.0).unwrap();
        assert_abs_diff_eq!(
            sigmoid_derivative(1.3, &p10),
            sigmoid_derivative(-1.3, &p10),
            epsilon = 1e-15
        );
    }

    #[test]
    fn sigmoid_derivative_matches_finite_difference() {
        let p = SigmoidParams::new(20.0).unwrap();
        let x = 0.2;
        let h = 1e-6;
        let fd = (sigmoid(x + h, &p) - sigmoid(x - h, &p)) / (2.0 * h);
        assert_abs_diff_eq!(sigmoid_derivative(x, &p), fd, epsilon = 1e-8);
    }

    #[test]
    fn beta_must_be_positive() {
        assert!(SigmoidParams::new(0.0).is_err());
        assert!(WilsonCowanParams::new(0.0, 1.0, 2.0, 1.0, 0.25, 0.0, 0.0, 20.0, 0.2).is_err());
    }

    #[test]
    fn primer_without_feedback_decays_to_rate() {
        let model = NodeModel::node(NodeDynamics::Primer(
            PrimerParams::new(0.0, 0.3, 10.0, 1.0).unwrap(),
        ));
        let f = sigmoid(0.3, &SigmoidParams::new(10.0).unwrap());
        for &x in &[0.0, 0.4, 0.9] {
            let dx = model.rhs(&[x], &[&[0.77]]).unwrap();
            assert_abs_diff_eq!(dx[0], -x + f, epsilon = 1e-15);
        }
    }

    #[test]
    fn uncoupled_ring_matches_single_node() {
        let node = NodeModel::node(NodeDynamics::WilsonCowan(wc_params()));
        let topo = RingTopology::exp_decay(7, 0.0, 0.2, 2.0, 1.0).unwrap();
        let ring = NodeModel::ring(NodeDynamics::WilsonCowan(wc_params()), topo);
        let current = [0.3, 0.1];
        let d0 = [0.25, 0.12];
        let junk = [9.0, -3.0];
        let delayed: Vec<&[f64]> = std::iter::once(&d0[..])
            .chain(std::iter::repeat(&junk[..]).take(6))
            .collect();
        let got = ring.rhs(&current, &delayed).unwrap();
        let want = node.rhs(&current, &[&d0]).unwrap();
        assert_abs_diff_eq!(got[0], want[0], epsilon = 1e-15);
        assert_abs_diff_eq!(got[1], want[1], epsilon = 1e-15);
    }

    #[test]
    fn rhs_vanishes_at_root_solved_steady_state() {
        let topo = RingTopology::exp_decay(7, 1.0, 0.2, 2.0, 1.5).unwrap();
        let model = NodeModel::ring(NodeDynamics::WilsonCowan(wc_params()), topo);
        let states = model.steady_states();
        assert!(!states.is_empty());
        for s in states {
            let delayed: Vec<&[f64]> = (0..7).map(|_| &s[..]).collect();
            let dx = model.rhs(&s, &delayed).unwrap();
            for c in dx {
                assert_abs_diff_eq!(c, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rhs_rejects_wrong_channel_count() {
        let model = NodeModel::node(NodeDynamics::WilsonCowan(wc_params()));
        let s = [0.3, 0.1];
        assert!(matches!(
            model.rhs(&s, &[&s[..], &s[..]]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn ring_profile_is_circulant_with_uniform_row_sums() {
        for (n, topo) in [
            (7, RingTopology::exp_decay(7, 1.0, 0.2, 2.0, 1.5).unwrap()),
            (7, RingTopology::geometric(7, 1.0, 1.0, 0.5, 1.0).unwrap()),
            (6, RingTopology::geometric(6, 0.7, 1.0, 0.5, 1.0).unwrap()),
        ] {
            let w = topo.weights();
            for k in 1..n {
                assert_eq!(w[k], w[n - k]);
            }
            let mat = topo.weight_matrix();
            let base: f64 = mat.row(0).iter().sum();
            for i in 0..n {
                let row: f64 = mat.row(i).iter().sum();
                assert_abs_diff_eq!(row, base, epsilon = 1e-12);
            }
            let total: f64 = topo.eps() * w.iter().sum::<f64>();
            let expect = if n == 7 && w[1] < 0.1 { 0.2 } else { 1.0 };
            assert_abs_diff_eq!(total, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn asymmetric_profile_is_rejected() {
        let weights = vec![0.0, 0.3, 0.1, 0.2, 0.3];
        assert!(matches!(
            RingTopology::new(5, 1.0, weights, 1.0),
            Err(Error::InvalidTopology(_))
        ));
    }

    #[test]
    fn uncoupled_ring_has_zero_distance_blocks() {
        let topo = RingTopology::exp_decay(5, 0.0, 0.2, 2.0, 1.0).unwrap();
        let model = NodeModel::ring(NodeDynamics::WilsonCowan(wc_params()), topo);
        let s = [0.3, 0.2];
        let delayed: Vec<&[f64]> = (0..5).map(|_| &s[..]).collect();
        let blocks = model.jacobian_blocks(&delayed).unwrap();
        for wk in &blocks.w[1..] {
            assert_eq!(wk.amax(), 0.0);
        }
    }

    #[test]
    fn primer_self_block_is_scalar_chain_rule() {
        let p = PrimerParams::new(-1.0, 0.5, 20.0, 2.0).unwrap();
        let model = NodeModel::node(NodeDynamics::Primer(p));
        let x_tau = 0.41;
        let blocks = model.jacobian_blocks(&[&[x_tau]]).unwrap();
        let expect = p.w * sigmoid_derivative(p.drive + p.w * x_tau, &p.sigmoid);
        assert_abs_diff_eq!(blocks.w[0][(0, 0)], expect, epsilon = 1e-14);
    }

    #[test]
    fn jacobian_blocks_match_finite_differences() {
        let topo = RingTopology::exp_decay(5, 1.0, 0.2, 2.0, 1.2).unwrap();
        let models = [
            NodeModel::ring(NodeDynamics::WilsonCowan(wc_params()), topo.clone()),
            NodeModel::ring(
                NodeDynamics::Primer(PrimerParams::new(1.0, -0.5, 10.0, 1.5).unwrap()),
                topo,
            ),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for model in &models {
            let p = model.dim();
            let channels = model.delay_channels();
            let upsilon = model.upsilon();
            for _ in 0..50 {
                let current: Vec<f64> = (0..p).map(|_| rng.gen_range(0.0..1.0)).collect();
                let delayed: Vec<Vec<f64>> = (0..channels)
                    .map(|_| (0..p).map(|_| rng.gen_range(0.0..1.0)).collect())
                    .collect();
                let refs: Vec<&[f64]> = delayed.iter().map(|d| d.as_slice()).collect();
                let blocks = model.jacobian_blocks(&refs).unwrap();

                // d rhs / d current = j1 scaled by upsilon row-wise? j1 is
                // already the full derivative (-upsilon).
                for a in 0..p {
                    for b in 0..p {
                        let mut plus = current.clone();
                        let mut minus = current.clone();
                        plus[b] += h;
                        minus[b] -= h;
                        let fp = model.rhs(&plus, &refs).unwrap();
                        let fm = model.rhs(&minus, &refs).unwrap();
                        let fd = (fp[a] - fm[a]) / (2.0 * h);
                        assert_abs_diff_eq!(blocks.j1[(a, b)], fd, epsilon = 1e-6);
                    }
                }
                for k in 0..channels {
                    let expected = &upsilon * &blocks.w[k];
                    for a in 0..p {
                        for b in 0..p {
                            let mut dp = delayed.clone();
                            let mut dm = delayed.clone();
                            dp[k][b] += h;
                            dm[k][b] -= h;
                            let rp: Vec<&[f64]> = dp.iter().map(|d| d.as_slice()).collect();
                            let rm: Vec<&[f64]> = dm.iter().map(|d| d.as_slice()).collect();
                            let fp = model.rhs(&current, &rp).unwrap();
                            let fm = model.rhs(&current, &rm).unwrap();
                            let fd = (fp[a] - fm[a]) / (2.0 * h);
                            assert_abs_diff_eq!(expected[(a, b)], fd, epsilon = 1e-6);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn wilson_cowan_derivative_points_inward_on_unit_box() {
        let model = NodeModel::node(NodeDynamics::WilsonCowan(wc_params()));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let d0 = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            for comp in 0..2 {
                for (value, sign) in [(0.0, 1.0), (1.0, -1.0)] {
                    let mut s = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                    s[comp] = value;
                    let dx = model.rhs(&s, &[&d0]).unwrap();
                    assert!(sign * dx[comp] > 0.0, "flow leaves the box at {s:?}");
                }
            }
        }
    }
}
