//! Second-order attractor dynamics with a phase-indexed forcing term.
//!
//! The transformation system is `tau * y'' = alpha * (beta * (g - y) - y') + f`,
//! driven by a canonical phase `x` that decays from 1 toward 0. Rollouts use
//! semi-implicit Euler (velocity first, then position), and [`inverse_dynamics`]
//! uses the finite-difference stencil that exactly inverts that update, so a
//! force recovered from a trajectory integrates back to the same trajectory.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activation sums below this are replaced by it when normalizing the basis.
pub const BASIS_EPS: f64 = 1e-10;
/// Goal offsets `|g - y0|` below this cannot be expressed by a weighted basis.
pub const SPAN_EPS: f64 = 1e-9;
/// Ridge penalty used by [`fit_weights`].
pub const RIDGE_LAMBDA: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmpConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub alpha_x: f64,
    pub n_basis: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub dims: usize,
}

impl Default for DmpConfig {
    fn default() -> Self {
        Self {
            alpha: 25.0,
            beta: 25.0 / 4.0,
            tau: 1.0,
            alpha_x: 4.6,
            n_basis: 50,
            n_steps: 100,
            dt: 0.01,
            dims: 2,
        }
    }
}

impl DmpConfig {
    /// Critically damped configuration (`beta = alpha / 4`).
    pub fn critically_damped(alpha: f64) -> Self {
        Self {
            alpha,
            beta: alpha / 4.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("tau", self.tau),
            ("alpha_x", self.alpha_x),
            ("dt", self.dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_basis < 2 {
            return Err(Error::Config(format!("n_basis must be >= 2, got {}", self.n_basis)));
        }
        if self.n_steps < 2 {
            return Err(Error::Config(format!("n_steps must be >= 2, got {}", self.n_steps)));
        }
        if self.dims == 0 {
            return Err(Error::Config("dims must be >= 1".into()));
        }
        Ok(())
    }

    /// Time covered by a rollout, `(n_steps - 1) * dt`.
    pub fn duration(&self) -> f64 {
        (self.n_steps - 1) as f64 * self.dt
    }
}

/// Time-ordered state samples, stored row-major (`n_steps x dims`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    data: Vec<f64>,
    dims: usize,
    pub dt: f64,
    pub task_id: Option<u32>,
}

impl Trajectory {
    pub fn from_flat(data: Vec<f64>, dims: usize, dt: f64) -> Result<Self> {
        if dims == 0 || !data.len().is_multiple_of(dims) {
            return Err(Error::shape("trajectory buffer", format!("multiple of {dims}"), data.len()));
        }
        let len = data.len() / dims;
        if len < 2 {
            return Err(Error::TooShort { len, min: 2 });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory point {} dim {}", i / dims, i % dims)));
        }
        Ok(Self {
            data,
            dims,
            dt,
            task_id: None,
        })
    }

    pub fn from_points(points: &[Vec<f64>], dt: f64) -> Result<Self> {
        let dims = points.first().map_or(0, Vec::len);
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dims) {
            return Err(Error::shape(format!("trajectory point {i}"), dims, p.len()));
        }
        Self::from_flat(points.concat(), dims, dt)
    }

    pub fn with_task(mut self, task_id: u32) -> Self {
        self.task_id = Some(task_id);
        self
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn point(&self, t: usize) -> &[f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    pub fn first(&self) -> &[f64] {
        self.point(0)
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.len() - 1)
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_points(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    /// Values of one dimension over time.
    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.points().map(|p| p[dim]).collect()
    }

    /// Applies `f` to every point, keeping dt and task id.
    pub fn map_points(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let pts: Vec<Vec<f64>> = self.points().map(&mut f).collect();
        let mut out = Self::from_points(&pts, self.dt)?;
        out.task_id = self.task_id;
        Ok(out)
    }
}

/// Forcing values aligned with canonical phase samples, stored row-major
/// (`n_steps x dims`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForceProfile {
    f: Vec<f64>,
    dims: usize,
    pub phase: Vec<f64>,
}

impl ForceProfile {
    pub fn new(f: Vec<f64>, dims: usize, phase: Vec<f64>) -> Result<Self> {
        if dims == 0 || f.len() != phase.len() * dims {
            return Err(Error::shape(
                "force profile",
                format!("{} x {dims}", phase.len()),
                f.len(),
            ));
        }
        if let Some(i) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("force at step {} dim {}", i / dims, i % dims)));
        }
        Ok(Self { f, dims, phase })
    }

    pub fn zeros(cfg: &DmpConfig) -> Self {
        Self {
            f: vec![0.0; cfg.n_steps * cfg.dims],
            dims: cfg.dims,
            phase: canonical_rollout(cfg),
        }
    }

    pub fn len(&self) -> usize {
        self.phase.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phase.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.f[t * self.dims..(t + 1) * self.dims]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.f
    }

    /// Dimension-major layout `[dim][step]`, the layout the networks use.
    pub fn to_channel_major(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; self.f.len()];
        for t in 0..n {
            for k in 0..self.dims {
                out[k * n + t] = self.f[t * self.dims + k];
            }
        }
        out
    }

    pub fn from_channel_major(values: &[f64], dims: usize, phase: Vec<f64>) -> Result<Self> {
        let n = phase.len();
        if values.len() != n * dims {
            return Err(Error::shape("channel-major force", n * dims, values.len()));
        }
        let mut f = vec![0.0; values.len()];
        for k in 0..dims {
            for t in 0..n {
                f[t * dims + k] = values[k * n + t];
            }
        }
        Self::new(f, dims, phase)
    }

    /// Multiplies dimension `k` by `scale[k]`.
    pub fn scaled(&self, scale: &[f64]) -> Self {
        let f = self
            .f
            .iter()
            .enumerate()
            .map(|(i, v)| v * scale[i % self.dims])
            .collect();
        Self {
            f,
            dims: self.dims,
            phase: self.phase.clone(),
        }
    }

    pub fn rms(&self) -> f64 {
        (self.f.iter().map(|v| v * v).sum::<f64>() / self.f.len() as f64).sqrt()
    }
}

/// Gaussian basis over the canonical phase with its weight matrix
/// (`n_basis x dims`, row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisWeights {
    pub w: Vec<f64>,
    pub dims: usize,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl BasisWeights {
    /// Zero weights on the default layout: centers spaced evenly in time
    /// across the rollout, widths chosen so neighbours cross at half
    /// activation.
    pub fn zeros(cfg: &DmpConfig) -> Self {
        let n = cfg.n_basis;
        let centers: Vec<f64> = (0..n)
            .map(|i| (-cfg.alpha_x * i as f64 / (n - 1) as f64 * cfg.duration() / cfg.tau).exp())
            .collect();
        let mut widths: Vec<f64> = centers
            .windows(2)
            .map(|c| 4.0 * std::f64::consts::LN_2 / (c[0] - c[1]).powi(2))
            .collect();
        widths.push(*widths.last().expect("n_basis >= 2"));
        Self {
            w: vec![0.0; n * cfg.dims],
            dims: cfg.dims,
            centers,
            widths,
        }
    }

    pub fn n_basis(&self) -> usize {
        self.centers.len()
    }

    pub fn weight(&self, i: usize, dim: usize) -> f64 {
        self.w[i * self.dims + dim]
    }

    fn activations(&self, x: f64) -> (Vec<f64>, f64, bool) {
        let psi: Vec<f64> = self
            .centers
            .iter()
            .zip(&self.widths)
            .map(|(c, h)| (-h * (x - c).powi(2)).exp())
            .collect();
        let sum: f64 = psi.iter().sum();
        if sum < BASIS_EPS {
            (psi, BASIS_EPS, true)
        } else {
            (psi, sum, false)
        }
    }
}

/// Phase samples `x_0 = 1`, `x_{t+1} = x_t - dt * alpha_x * x_t / tau`.
pub fn canonical_rollout(cfg: &DmpConfig) -> Vec<f64> {
    let decay = 1.0 - cfg.dt * cfg.alpha_x / cfg.tau;
    std::iter::successors(Some(1.0), |x| Some(x * decay))
        .take(cfg.n_steps)
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForceDiagnostics {
    /// Steps where the basis activation sum fell below [`BASIS_EPS`].
    pub clamped_steps: Vec<usize>,
}

/// Evaluates `f(x) = sum(w_i psi_i(x)) / sum(psi_i(x)) * x * (g - y0)`.
pub fn force_from_weights(
    weights: &BasisWeights,
    phase: &[f64],
    y0: &[f64],
    g: &[f64],
) -> Result<(ForceProfile, ForceDiagnostics)> {
    let d = weights.dims;
    if y0.len() != d || g.len() != d {
        return Err(Error::shape("force_from_weights endpoints", d, y0.len().max(g.len())));
    }
    let mut diag = ForceDiagnostics::default();
    let mut f = Vec::with_capacity(phase.len() * d);
    for (t, &x) in phase.iter().enumerate() {
        let (psi, sum, clamped) = weights.activations(x);
        if clamped {
            diag.clamped_steps.push(t);
        }
        for k in 0..d {
            let num: f64 = psi.iter().enumerate().map(|(i, p)| p * weights.weight(i, k)).sum();
            f.push(num / sum * x * (g[k] - y0[k]));
        }
    }
    Ok((ForceProfile::new(f, d, phase.to_vec())?, diag))
}

fn check_endpoints(cfg: &DmpConfig, y0: &[f64], g: &[f64]) -> Result<()> {
    if y0.len() != cfg.dims || g.len() != cfg.dims {
        return Err(Error::shape("start/goal", cfg.dims, y0.len().max(g.len())));
    }
    Ok(())
}

/// Rolls the attractor forward from `y0` at rest. Returns `n_steps` points
/// with `points[0] == y0`.
pub fn integrate(cfg: &DmpConfig, force: &ForceProfile, y0: &[f64], g: &[f64]) -> Result<Trajectory> {
    check_endpoints(cfg, y0, g)?;
    if force.len() != cfg.n_steps || force.dims() != cfg.dims {
        return Err(Error::shape(
            "integrate force",
            format!("{} x {}", cfg.n_steps, cfg.dims),
            format!("{} x {}", force.len(), force.dims()),
        ));
    }
    let d = cfg.dims;
    let mut out = Vec::with_capacity(cfg.n_steps * d);
    out.extend_from_slice(y0);
    let mut y = y0.to_vec();
    let mut v = vec![0.0; d];
    for t in 0..cfg.n_steps - 1 {
        let f = force.at(t);
        for k in 0..d {
            let acc = (cfg.alpha * (cfg.beta * (g[k] - y[k]) - v[k]) + f[k]) / cfg.tau;
            v[k] += cfg.dt * acc;
            y[k] += cfg.dt * v[k];
            if !y[k].is_finite() || !v[k].is_finite() {
                return Err(Error::Integration { step: t + 1 });
            }
        }
        out.extend_from_slice(&y);
    }
    Trajectory::from_flat(out, d, cfg.dt)
}

/// Gradients of a scalar loss with respect to the inputs of [`integrate`],
/// given the loss gradient with respect to every trajectory point.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrateGrad {
    /// Row-major `n_steps x dims`; the last row is always zero.
    pub force: Vec<f64>,
    pub y0: Vec<f64>,
    pub goal: Vec<f64>,
}

/// Reverse-mode pass through [`integrate`]. The rollout is linear in force,
/// start and goal, so no forward tape is needed.
pub fn integrate_adjoint(cfg: &DmpConfig, point_grad: &[f64]) -> Result<IntegrateGrad> {
    let (n, d) = (cfg.n_steps, cfg.dims);
    if point_grad.len() != n * d {
        return Err(Error::shape("integrate_adjoint", n * d, point_grad.len()));
    }
    let (a, b, tau, dt) = (cfg.alpha, cfg.beta, cfg.tau, cfg.dt);
    let mut force = vec![0.0; n * d];
    let mut goal = vec![0.0; d];
    let mut y0 = vec![0.0; d];
    for k in 0..d {
        let mut ybar = point_grad[(n - 1) * d + k];
        let mut vbar = 0.0;
        for t in (0..n - 1).rev() {
            let v_next = vbar + dt * ybar;
            let acc_bar = dt * v_next;
            force[t * d + k] = acc_bar / tau;
            goal[k] += acc_bar * a * b / tau;
            vbar = v_next - acc_bar * a / tau;
            ybar = point_grad[t * d + k] + ybar - acc_bar * a * b / tau;
        }
        y0[k] = ybar;
    }
    Ok(IntegrateGrad { force, y0, goal })
}

/// Recovers the forcing profile that reproduces `traj` under [`integrate`],
/// taking the goal to be the last trajectory point.
///
/// Acceleration is the central second difference and velocity the backward
/// difference, with a ghost point `y_{-1} = y_0` (rest start) and
/// `y_L = y_{L-1}` for the final sample, which the rollout never reads.
pub fn inverse_dynamics(cfg: &DmpConfig, traj: &Trajectory) -> Result<ForceProfile> {
    let n = traj.len();
    if n < 3 {
        return Err(Error::TooShort { len: n, min: 3 });
    }
    if n != cfg.n_steps || traj.dims() != cfg.dims {
        return Err(Error::shape(
            "inverse_dynamics trajectory",
            format!("{} x {}", cfg.n_steps, cfg.dims),
            format!("{} x {}", n, traj.dims()),
        ));
    }
    let d = cfg.dims;
    let g = traj.last();
    let dt2 = cfg.dt * cfg.dt;
    let mut f = Vec::with_capacity(n * d);
    for t in 0..n {
        let prev = traj.point(t.saturating_sub(1));
        let cur = traj.point(t);
        let next = traj.point((t + 1).min(n - 1));
        for k in 0..d {
            let vel = (cur[k] - prev[k]) / cfg.dt;
            let acc = (next[k] - 2.0 * cur[k] + prev[k]) / dt2;
            f.push(cfg.tau * acc - cfg.alpha * (cfg.beta * (g[k] - cur[k]) - vel));
        }
    }
    ForceProfile::new(f, d, canonical_rollout(cfg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFit {
    pub weights: BasisWeights,
    /// RMS of the reconstructed force against the target, over all dims.
    pub rms: f64,
    /// Dimensions whose goal offset was too small to fit; weights are zero.
    pub flagged_dims: Vec<usize>,
}

/// Ridge least-squares fit of basis weights to a force profile, all phase
/// samples jointly.
pub fn fit_weights(cfg: &DmpConfig, force: &ForceProfile, y0: &[f64], g: &[f64]) -> Result<WeightFit> {
    check_endpoints(cfg, y0, g)?;
    if force.dims() != cfg.dims {
        return Err(Error::shape("fit_weights force dims", cfg.dims, force.dims()));
    }
    let mut weights = BasisWeights::zeros(cfg);
    let nb = weights.n_basis();
    let n = force.len();
    let phase = &force.phase;

    // Normalized activations times phase, shared by all dimensions.
    let mut design = DMatrix::<f64>::zeros(n, nb);
    for (t, &x) in phase.iter().enumerate() {
        let (psi, sum, _) = weights.activations(x);
        for (i, p) in psi.iter().enumerate() {
            design[(t, i)] = p / sum * x;
        }
    }
    let gram = design.transpose() * &design + DMatrix::<f64>::identity(nb, nb) * RIDGE_LAMBDA;
    let chol = gram.clone().cholesky();

    let mut flagged = Vec::new();
    for k in 0..cfg.dims {
        let span = g[k] - y0[k];
        if span.abs() < SPAN_EPS {
            flagged.push(k);
            continue;
        }
        let target = DVector::from_iterator(n, (0..n).map(|t| force.at(t)[k] / span));
        let rhs = design.transpose() * target;
        let sol = match &chol {
            Some(c) => c.solve(&rhs),
            None => gram
                .clone()
                .svd(true, true)
                .solve(&rhs, 1e-14)
                .map_err(|e| Error::Data(format!("weight fit failed: {e}")))?,
        };
        for i in 0..nb {
            weights.w[i * cfg.dims + k] = sol[i];
        }
    }

    let (recon, _) = force_from_weights(&weights, phase, y0, g)?;
    let sq: f64 = recon
        .as_flat()
        .iter()
        .zip(force.as_flat())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let rms = (sq / force.as_flat().len() as f64).sqrt();
    Ok(WeightFit {
        weights,
        rms,
        flagged_dims: flagged,
    })
}

/// Root-mean-square of the per-point Euclidean distance between two
/// equal-length trajectories.
pub fn rms_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() || a.dims() != b.dims() {
        return Err(Error::shape("rms_distance", a.len(), b.len()));
    }
    let sq: f64 = a
        .as_flat()
        .iter()
        .zip(b.as_flat())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok((sq / a.len() as f64).sqrt())
}
