use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    euclid, nearest_sample, scaled_rollout, shape_error, trajectory_distance, Diagnostics, GenerationResult, ScaleParams,
};
use crate::cvae::CvaeModel;
use crate::dmp::{canonical_rollout, integrate, integrate_adjoint, ForceProfile, Trajectory};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Dense, Gradients, Layer, Network, Tensor};

/// Largest number of step halvings tried before an iteration gives up.
const MAX_HALVINGS: usize = 12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneOptimizer {
    /// Damped Gauss-Newton preconditioning of the final-layer gradient; the
    /// step length doubles after an accepted step and halves on rejection.
    #[default]
    GaussNewton,
    /// Adaptive moments on every unfrozen decoder layer and the scale.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Shape, endpoint and via-point weights; normalized to sum to one.
    pub weights: [f64; 3],
    pub max_iters: usize,
    pub tolerance: f64,
    /// Leading parametric decoder layers kept fixed.
    pub frozen_layers: usize,
    pub optimizer: FinetuneOptimizer,
    /// Learning rate for Adam.
    pub lr: f64,
    /// Marquardt damping relative to the Gauss-Newton diagonal. Larger values
    /// spread a correction over more of the trajectory.
    pub damping: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            weights: [0.6, 0.2, 0.2],
            max_iters: 300,
            tolerance: 1e-6,
            frozen_layers: 2,
            optimizer: FinetuneOptimizer::default(),
            lr: 1e-3,
            damping: 3e-2,
        }
    }
}

impl FinetuneConfig {
    pub fn with_weights(p1: f64, p2: f64, p3: f64) -> Result<Self> {
        let mut c = Self {
            weights: [p1, p2, p3],
            ..Self::default()
        };
        c.weights = c.normalized_weights()?;
        Ok(c)
    }

    pub fn normalized_weights(&self) -> Result<[f64; 3]> {
        let sum: f64 = self.weights.iter().sum();
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || sum <= 0.0 {
            return Err(Error::Config(format!(
                "fine-tune weights must be non-negative with a positive sum, got {:?}",
                self.weights
            )));
        }
        Ok(self.weights.map(|w| w / sum))
    }

    pub fn validate(&self) -> Result<()> {
        self.normalized_weights()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("fine-tune lr must be positive, got {}", self.lr)));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config("fine-tune tolerance must be >= 0".into()));
        }
        if !(self.damping.is_finite() && self.damping > 0.0) {
            return Err(Error::Config(format!("fine-tune damping must be positive, got {}", self.damping)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneLoss {
    pub total: f64,
    pub shape: f64,
    pub end: f64,
    pub via: f64,
}

/// Weighted fine-tune loss of `traj` and its gradient with respect to every
/// point (row-major). Shape is the mean squared deviation from `initial`,
/// end is the squared endpoint miss and via sums the distance from each
/// via-point to its nearest sample.
pub fn finetune_loss(
    traj: &Trajectory,
    initial: &Trajectory,
    goal: &[f64],
    via: &[Vec<f64>],
    weights: [f64; 3],
) -> Result<(FinetuneLoss, Vec<f64>)> {
    if traj.len() != initial.len() || traj.dims() != initial.dims() {
        return Err(Error::shape("finetune_loss", initial.len(), traj.len()));
    }
    let [p1, p2, p3] = weights;
    let (n, d) = (traj.len(), traj.dims());
    let mut grad = vec![0.0; n * d];
    let mut shape = 0.0;
    for (i, (a, b)) in traj.points().zip(initial.points()).enumerate() {
        for k in 0..d {
            let diff = a[k] - b[k];
            shape += diff * diff;
            grad[i * d + k] = p1 * 2.0 * diff / n as f64;
        }
    }
    shape /= n as f64;
    let last = traj.last();
    let end: f64 = (0..d).map(|k| (last[k] - goal[k]).powi(2)).sum();
    for k in 0..d {
        grad[(n - 1) * d + k] += p2 * 2.0 * (last[k] - goal[k]);
    }
    let mut via_total = 0.0;
    for c in via {
        let (i, dist) = nearest_sample(traj, c);
        via_total += dist;
        if dist > 0.0 {
            let p = traj.point(i);
            for k in 0..d {
                grad[i * d + k] += p3 * (p[k] - c[k]) / dist;
            }
        }
    }
    let loss = FinetuneLoss {
        total: p1 * shape + p2 * end + p3 * via_total,
        shape,
        end,
        via: via_total,
    };
    Ok((loss, grad))
}

/// Fixed data of one fine-tuning run; everything lives in the normalized
/// frame.
pub struct FinetuneProblem<'a> {
    model: &'a CvaeModel,
    task_id: u32,
    input: Tensor,
    initial: Trajectory,
    start: Vec<f64>,
    goal: Vec<f64>,
    via: Vec<Vec<f64>>,
    weights: [f64; 3],
}

/// Loss gradients with respect to the decoder parameters (all layers), the
/// decoder output and the scale.
pub struct ProblemGrad {
    pub decoder: Gradients,
    pub output: Vec<f64>,
    pub scale: Vec<f64>,
}

impl<'a> FinetuneProblem<'a> {
    pub fn new(model: &'a CvaeModel, initial: &GenerationResult, cfg: &FinetuneConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = &initial.spec;
        spec.validate(model)?;
        let norm = &model.normalization;
        Ok(Self {
            model,
            task_id: spec.task_id,
            input: model.decoder_input(&initial.latent, spec.task_id)?,
            initial: initial.normalized.clone(),
            start: norm.to_normalized(&spec.start),
            goal: norm.to_normalized(&spec.goal),
            via: spec.via_points.iter().map(|v| norm.to_normalized(v)).collect(),
            weights: cfg.normalized_weights()?,
        })
    }

    /// Unscaled force and normalized rollout for the given decoder and scale.
    pub fn rollout(&self, decoder: &Network, scale: &[f64]) -> Result<(ForceProfile, Trajectory)> {
        let out = decoder.predict(&self.input)?;
        self.rollout_from(out.data(), scale)
    }

    fn rollout_from(&self, out: &[f64], scale: &[f64]) -> Result<(ForceProfile, Trajectory)> {
        let force = self.model.denormalize_force(out)?;
        let r = self.model.reference(self.task_id)?;
        let y = scaled_rollout(&self.model.dmp, &force, scale, &self.start, &r.start, &r.goal)?;
        Ok((force, y))
    }

    pub fn evaluate(&self, decoder: &Network, scale: &[f64]) -> Result<(FinetuneLoss, ProblemGrad)> {
        let (out, tape) = decoder.forward(&self.input)?;
        let (force, y) = self.rollout_from(out.data(), scale)?;
        let (loss, point_grad) = finetune_loss(&y, &self.initial, &self.goal, &self.via, self.weights)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("fine-tune loss {loss:?}")));
        }
        let cfg = &self.model.dmp;
        let (n, d) = (cfg.n_steps, cfg.dims);
        let adj = integrate_adjoint(cfg, &point_grad)?;
        let r = self.model.reference(self.task_id)?;
        let mut gscale: Vec<f64> = (0..d).map(|k| adj.goal[k] * (r.goal[k] - r.start[k])).collect();
        let mut gout = vec![0.0; n * d];
        for t in 0..n {
            let f = force.at(t);
            for k in 0..d {
                let gf = adj.force[t * d + k];
                gscale[k] += gf * f[k];
                gout[k * n + t] = gf * scale[k] * self.model.force_scale[k];
            }
        }
        let decoder_grads = decoder.backward(&tape, &Tensor::row(gout.clone()))?;
        Ok((
            loss,
            ProblemGrad {
                decoder: decoder_grads,
                output: gout,
                scale: gscale,
            },
        ))
    }

    /// Descent direction `-(J'J + damping * diag(J'J))^-1 g` over the decoder
    /// output and the scale, where `J` is the Jacobian of the rollout. The
    /// rollout is linear in each and dimensions do not interact, so `J` splits
    /// into one lower-triangular Toeplitz block per dimension (the impulse
    /// response) plus one scale column.
    pub fn gauss_newton_direction(
        &self,
        decoder: &Network,
        scale: &[f64],
        grad: &ProblemGrad,
        damping: f64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let cfg = &self.model.dmp;
        let (n, d) = (cfg.n_steps, cfg.dims);
        let mut unit = vec![0.0; n * d];
        unit[..d].iter_mut().for_each(|v| *v = 1.0);
        let zero = vec![0.0; d];
        let h = integrate(cfg, &ForceProfile::new(unit, d, canonical_rollout(cfg))?, &zero, &zero)?;
        let (force, _) = self.rollout(decoder, scale)?;
        let r = self.model.reference(self.task_id)?;
        let unscaled = integrate(cfg, &force, &r.start, &r.goal)?;

        let mut d_out = vec![0.0; n * d];
        let mut d_scale = vec![0.0; d];
        for k in 0..d {
            let c = scale[k] * self.model.force_scale[k];
            let mut j = DMatrix::<f64>::zeros(n, n + 1);
            for t in 1..n {
                for tp in 0..t {
                    j[(t, tp)] = h.point(t - tp)[k] * c;
                }
                j[(t, n)] = unscaled.point(t)[k] - r.start[k];
            }
            let mut a = j.transpose() * &j;
            let mean_diag = (0..=n).map(|i| a[(i, i)]).sum::<f64>() / (n + 1) as f64;
            for i in 0..=n {
                // The floor keeps columns the rollout never reads invertible.
                a[(i, i)] += damping * a[(i, i)].max(1e-12 * mean_diag).max(f64::MIN_POSITIVE);
            }
            let g = DVector::from_iterator(
                n + 1,
                grad.output[k * n..(k + 1) * n].iter().copied().chain([grad.scale[k]]),
            );
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => a
                    .svd(true, true)
                    .solve(&g, 1e-14)
                    .map_err(|e| Error::NonFinite(format!("Gauss-Newton system: {e}")))?,
            };
            for t in 0..n {
                d_out[k * n + t] = -step[t];
            }
            d_scale[k] = -step[n];
        }
        Ok((d_out, d_scale))
    }
}

fn final_dense(decoder: &mut Network) -> Result<&mut Dense> {
    let last = *decoder
        .parametric_layers()
        .last()
        .ok_or_else(|| Error::Config("decoder has no parametric layer".into()))?;
    match decoder.layer_mut(last) {
        Layer::Dense(dense) => Ok(dense),
        _ => Err(Error::Config("decoder must end in a dense layer".into())),
    }
}

/// Changes the final dense layer by the minimum-norm amount that shifts its
/// output, for the fixed input `hidden`, by `alpha * delta`.
fn shift_output(decoder: &mut Network, hidden: &[f64], delta: &[f64], alpha: f64) -> Result<()> {
    let denom = 1.0 + hidden.iter().map(|v| v * v).sum::<f64>();
    let dense = final_dense(decoder)?;
    let cols = hidden.len();
    let w = dense.weight.data_mut();
    for (o, dv) in delta.iter().enumerate() {
        let c = alpha * dv / denom;
        w[o * cols..(o + 1) * cols]
            .iter_mut()
            .zip(hidden)
            .for_each(|(wi, hi)| *wi += c * hi);
    }
    dense
        .bias
        .data_mut()
        .iter_mut()
        .zip(delta)
        .for_each(|(b, dv)| *b += alpha * dv / denom);
    Ok(())
}

enum Stepper {
    Adam(Adam),
    GaussNewton { hidden: Vec<f64>, damping: f64 },
}

/// Adjusts the decoder's trailing layers (on a copy) and the scale so the
/// trajectory passes the spec's via-points while keeping its shape and goal.
/// A step that would raise the loss is retried at half the length; the run
/// stops when the improvement drops below the tolerance or no shorter step
/// helps.
pub fn finetune(model: &CvaeModel, initial: &GenerationResult, cfg: &FinetuneConfig) -> Result<GenerationResult> {
    let problem = FinetuneProblem::new(model, initial, cfg)?;
    let mut decoder = model.decoder.clone();
    let mut scale = Tensor::row(initial.scale.s.clone());
    let parametric = decoder.parametric_layers();

    let mut stepper = match cfg.optimizer {
        FinetuneOptimizer::Adam => {
            let mut blocks = decoder.params();
            blocks.push(&scale);
            let mut adam = Adam::new(
                AdamConfig {
                    lr: cfg.lr,
                    ..AdamConfig::default()
                },
                &blocks,
            );
            let mut block = 0;
            for (j, &l) in parametric.iter().enumerate() {
                let count = decoder.layers()[l].params().len();
                if j < cfg.frozen_layers {
                    (block..block + count).for_each(|b| adam.freeze(b));
                }
                block += count;
            }
            Stepper::Adam(adam)
        }
        FinetuneOptimizer::GaussNewton => {
            if cfg.frozen_layers + 1 != parametric.len() {
                return Err(Error::Config(format!(
                    "Gauss-Newton fine-tuning updates only the final layer; frozen_layers must be {} (got {})",
                    parametric.len() - 1,
                    cfg.frozen_layers
                )));
            }
            let last = parametric[parametric.len() - 1];
            let trunk = Network::from_layers(decoder.layers()[..last].to_vec());
            Stepper::GaussNewton {
                hidden: trunk.predict(&problem.input)?.into_data(),
                damping: cfg.damping,
            }
        }
    };

    let (mut loss, mut grad) = problem.evaluate(&decoder, scale.data())?;
    let mut history = vec![loss.total];
    let mut warning = None;
    let mut iterations = 0;
    // Gauss-Newton carries its step length between iterations; Adam restarts
    // at its configured rate.
    let mut step_len = 1.0;
    'outer: for _ in 0..cfg.max_iters {
        let direction = match &stepper {
            Stepper::GaussNewton { damping, .. } => {
                Some(problem.gauss_newton_direction(&decoder, scale.data(), &grad, *damping)?)
            }
            Stepper::Adam(_) => {
                step_len = 1.0;
                None
            }
        };
        let saved = (decoder.clone(), scale.clone());
        let saved_adam = match &stepper {
            Stepper::Adam(a) => Some(a.clone()),
            Stepper::GaussNewton { .. } => None,
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            match &mut stepper {
                Stepper::Adam(adam) => {
                    let mut params = decoder.params_mut();
                    params.push(&mut scale);
                    let st = Tensor::row(grad.scale.clone());
                    let mut grads = grad.decoder.flat();
                    grads.push(&st);
                    adam.step_scaled(&mut params, &grads, step_len)?;
                }
                Stepper::GaussNewton { hidden, .. } => {
                    let (d_out, d_scale) = direction.as_ref().expect("direction computed above");
                    shift_output(&mut decoder, hidden, d_out, step_len)?;
                    for (s, ds) in scale.data_mut().iter_mut().zip(d_scale) {
                        *s += step_len * ds;
                    }
                }
            }
            match problem.evaluate(&decoder, scale.data()) {
                Ok((l, g)) if l.total <= loss.total => {
                    accepted = Some((l, g));
                    break;
                }
                Ok(_) => {}
                Err(e) if e.is_numerical() => {
                    warning = Some(format!("stopped on non-finite loss: {e}"));
                    (decoder, scale) = saved;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
            (decoder, scale) = saved.clone();
            if let (Stepper::Adam(a), Some(s)) = (&mut stepper, &saved_adam) {
                *a = s.clone();
            }
            step_len *= 0.5;
        }
        let Some((l, g)) = accepted else { break };
        if matches!(stepper, Stepper::GaussNewton { .. }) {
            step_len = (2.0 * step_len).min(1.0);
        }
        iterations += 1;
        let improvement = loss.total - l.total;
        loss = l;
        grad = g;
        history.push(loss.total);
        if improvement < cfg.tolerance {
            break;
        }
    }

    let (force, y) = problem.rollout(&decoder, scale.data())?;
    let s = scale.into_data();
    let norm = &model.normalization;
    let spec = initial.spec.clone();
    let diagnostics = Diagnostics {
        end_error: euclid(y.last(), &problem.goal),
        via_errors: problem.via.iter().map(|v| trajectory_distance(&y, v)).collect(),
        shape_error: shape_error(&initial.normalized, &y)?,
        iterations,
        loss_history: history,
        warning,
    };
    Ok(GenerationResult {
        trajectory: norm.invert(&y)?.with_task(spec.task_id),
        normalized: y.with_task(spec.task_id),
        force: force.scaled(&s),
        scale: ScaleParams { s },
        latent: initial.latent.clone(),
        spec,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::cvae::tests::small_model;
    use crate::generator::{generate, TaskSpec};

    fn initial(model: &CvaeModel, via: Vec<Vec<f64>>) -> GenerationResult {
        let spec = TaskSpec::new(2, vec![0.0, 1.0], vec![0.9, 0.1])
            .with_latent(vec![0.3, -0.2])
            .with_via_points(via);
        generate(model, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn point_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let pts: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.gen(), rng.gen()]).collect();
            let init: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] + 0.1, p[1] - 0.05]).collect();
            let traj = Trajectory::from_points(&pts, 0.01).unwrap();
            let initial = Trajectory::from_points(&init, 0.01).unwrap();
            let goal = [rng.gen(), rng.gen()];
            let via = vec![vec![rng.gen(), rng.gen()], vec![rng.gen(), rng.gen()]];
            let w = [0.5, 0.3, 0.2];
            let (_, g) = finetune_loss(&traj, &initial, &goal, &via, w).unwrap();
            let eps = 1e-6;
            for i in 0..traj.as_flat().len() {
                let bump = |h: f64| {
                    let mut v = traj.as_flat().to_vec();
                    v[i] += h;
                    let t = Trajectory::from_flat(v, 2, 0.01).unwrap();
                    finetune_loss(&t, &initial, &goal, &via, w).unwrap().0.total
                };
                let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
                assert!(rel(fd, g[i]) < 1e-4 || (fd - g[i]).abs() < 1e-9, "{i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn loss_gradient_through_integrator_matches_differences() {
        let model = small_model(5);
        let init = initial(&model, vec![vec![0.2, 0.4]]);
        let problem = FinetuneProblem::new(&model, &init, &FinetuneConfig::default()).unwrap();
        let mut decoder = model.decoder.clone();
        let scale = vec![1.1, 0.9];
        // Move away from the initial trajectory so the shape term is active.
        let last = *decoder.parametric_layers().last().unwrap();
        decoder.params_mut().last_mut().unwrap().data_mut()[3] += 0.05;
        let (_, grad) = problem.evaluate(&decoder, &scale).unwrap();
        let eps = 1e-6;
        let loss = |dec: &Network, s: &[f64]| problem.evaluate(dec, s).unwrap().0.total;

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let blocks = decoder.layers()[last].params().len();
        for _ in 0..20 {
            let b = rng.gen_range(0..blocks);
            let len = decoder.layers()[last].params()[b].len();
            let i = rng.gen_range(0..len);
            let bump = |h: f64| {
                let mut d = decoder.clone();
                let n = d.params_mut().len();
                d.params_mut()[n - blocks + b].data_mut()[i] += h;
                loss(&d, &scale)
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let an = grad.decoder.layers[last][b].data()[i];
            assert!(rel(fd, an) < 1e-4 || (fd - an).abs() < 1e-10, "block {b}[{i}]: {fd} vs {an}");
        }
        for k in 0..2 {
            let mut up = scale.clone();
            let mut down = scale.clone();
            up[k] += eps;
            down[k] -= eps;
            let fd = (loss(&decoder, &up) - loss(&decoder, &down)) / (2.0 * eps);
            assert!(rel(fd, grad.scale[k]) < 1e-4, "scale {k}: {fd} vs {}", grad.scale[k]);
        }
    }

    #[test]
    fn no_via_points_leaves_the_trajectory_alone() {
        let model = small_model(1);
        let init = initial(&model, Vec::new());
        let cfg = FinetuneConfig {
            weights: [0.6, 0.4, 0.0],
            ..FinetuneConfig::default()
        };
        let out = finetune(&model, &init, &cfg).unwrap();
        let worst = out
            .normalized
            .as_flat()
            .iter()
            .zip(init.normalized.as_flat())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn tuning_reaches_via_point_without_touching_frozen_layers() {
        let model = small_model(2);
        let before = model.clone();
        let target = vec![0.3, 0.5];
        let init = initial(&model, vec![target.clone()]);
        let out = finetune(&model, &init, &FinetuneConfig::default()).unwrap();
        assert_eq!(model, before);
        let d = &out.diagnostics;
        assert!(d.via_errors[0] < init.diagnostics.via_errors[0]);
        assert!(d.loss_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", d.loss_history);
        assert_eq!(d.iterations + 1, d.loss_history.len());
        assert_eq!(out.normalized.first(), init.normalized.first());

        // Re-run on a copy to check the frozen layers directly.
        let problem = FinetuneProblem::new(&model, &init, &FinetuneConfig::default()).unwrap();
        let (_, y) = problem.rollout(&model.decoder, &init.scale.s).unwrap();
        assert_eq!(y.as_flat(), init.normalized.as_flat());
    }

    #[test]
    fn gauss_newton_needs_exactly_one_free_layer() {
        let model = small_model(0);
        let init = initial(&model, vec![vec![0.3, 0.5]]);
        let cfg = FinetuneConfig {
            frozen_layers: 1,
            ..FinetuneConfig::default()
        };
        assert!(matches!(finetune(&model, &init, &cfg), Err(Error::Config(_))));
        let adam = FinetuneConfig {
            optimizer: FinetuneOptimizer::Adam,
            max_iters: 50,
            ..cfg
        };
        let out = finetune(&model, &init, &adam).unwrap();
        assert!(out.diagnostics.via_errors[0] <= init.diagnostics.via_errors[0]);
    }

    #[test]
    fn weights_are_normalized_and_checked() {
        let c = FinetuneConfig::with_weights(3.0, 1.0, 1.0).unwrap();
        assert!((c.weights[0] - 0.6).abs() < 1e-15);
        assert!(FinetuneConfig::with_weights(0.0, 0.0, 0.0).is_err());
        assert!(FinetuneConfig::with_weights(-1.0, 1.0, 1.0).is_err());
    }
}
