//! Turning decoded forces into trajectories for a requested start and goal,
//! and fine-tuning them through via-points.
//!
//! A decoded force `F` reproduces its task's shape when rolled out between the
//! task's reference start `r0` and goal `rg`, giving a reference trajectory
//! `R`. For a new start `y0` and goal `g` the force is scaled per dimension by
//! `s = (g - y0) / (R_end - R_0)` and integrated towards the attractor
//! `y0 + s (rg - r0)`. Because the rollout is linear in force, start and
//! attractor, the result is exactly `y0 + s (R - r0)`: the reference shape,
//! stretched to land on `g`.

mod export;
mod finetune;
mod metrics;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cvae::CvaeModel;
use crate::dmp::{integrate, DmpConfig, ForceProfile, Trajectory};
use crate::error::{Error, Result};

pub use export::{export_result, GenerationRecord};
pub use finetune::{finetune, finetune_loss, FinetuneConfig, FinetuneLoss, FinetuneOptimizer, FinetuneProblem, ProblemGrad};
pub use metrics::{align_to, classify, hausdorff, nearest_sample, shape_error, trajectory_distance};

/// Spans smaller than this are treated as zero when computing scales.
pub const SPAN_EPS: f64 = 1e-6;
/// Fixed-point corrections applied after the span ratio.
pub const MAX_SCALE_REFINEMENTS: usize = 5;
/// Endpoint error at which scale refinement stops.
pub const SCALE_TOLERANCE: f64 = 1e-3;

/// A generation request. Positions are in workspace units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: u32,
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
    #[serde(default)]
    pub via_points: Vec<Vec<f64>>,
    #[serde(default)]
    pub latent: Option<Vec<f64>>,
}

impl TaskSpec {
    pub fn new(task_id: u32, start: Vec<f64>, goal: Vec<f64>) -> Self {
        Self {
            task_id,
            start,
            goal,
            via_points: Vec::new(),
            latent: None,
        }
    }

    pub fn with_via_points(mut self, via: Vec<Vec<f64>>) -> Self {
        self.via_points = via;
        self
    }

    pub fn with_latent(mut self, z: Vec<f64>) -> Self {
        self.latent = Some(z);
        self
    }

    pub fn validate(&self, model: &CvaeModel) -> Result<()> {
        model.task_index(self.task_id)?;
        let d = model.dmp.dims;
        if self.start.len() != d || self.goal.len() != d {
            return Err(Error::shape("task start/goal", d, self.start.len().max(self.goal.len())));
        }
        if let Some(v) = self.via_points.iter().find(|v| v.len() != d) {
            return Err(Error::shape("via-point", d, v.len()));
        }
        if let Some(z) = &self.latent {
            if z.len() != model.latent_dim() {
                return Err(Error::shape("latent z", model.latent_dim(), z.len()));
            }
        }
        let all = self.start.iter().chain(&self.goal).chain(self.via_points.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("task spec contains non-finite values".into()));
        }
        if self.start == self.goal {
            return Err(Error::Config(format!(
                "start equals goal {:?} in every dimension",
                self.goal
            )));
        }
        Ok(())
    }
}

/// Per-dimension force multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub s: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Normalized distance from the last point to the goal.
    pub end_error: f64,
    pub via_errors: Vec<f64>,
    /// Against the trajectory before fine-tuning; zero for plain generation.
    pub shape_error: f64,
    pub iterations: usize,
    pub loss_history: Vec<f64>,
    /// Set when fine-tuning stopped on a non-finite loss.
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    pub spec: TaskSpec,
    pub trajectory: Trajectory,
    pub normalized: Trajectory,
    /// Force as integrated, i.e. with the scale applied.
    pub force: ForceProfile,
    pub scale: ScaleParams,
    pub latent: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn attractor(scale: &[f64], start: &[f64], ref_start: &[f64], ref_goal: &[f64]) -> Vec<f64> {
    (0..start.len())
        .map(|k| start[k] + scale[k] * (ref_goal[k] - ref_start[k]))
        .collect()
}

/// Integrates `scale ⊙ force` from `start` towards the matching attractor.
pub fn scaled_rollout(
    cfg: &DmpConfig,
    force: &ForceProfile,
    scale: &[f64],
    start: &[f64],
    ref_start: &[f64],
    ref_goal: &[f64],
) -> Result<Trajectory> {
    integrate(cfg, &force.scaled(scale), start, &attractor(scale, start, ref_start, ref_goal))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Span-ratio scale for moving `reference` (the unscaled rollout of `force`
/// towards `ref_goal`) onto `start`/`goal`, refined by fixed-point corrections
/// against the re-integrated endpoint.
pub fn compute_scale(
    cfg: &DmpConfig,
    force: &ForceProfile,
    start: &[f64],
    goal: &[f64],
    reference: &Trajectory,
    ref_goal: &[f64],
) -> Result<ScaleParams> {
    let (r0, r1) = (reference.first(), reference.last());
    let mut s = Vec::with_capacity(cfg.dims);
    for k in 0..cfg.dims {
        let (span, want) = (r1[k] - r0[k], goal[k] - start[k]);
        if span.abs() > SPAN_EPS {
            s.push(want / span);
        } else if want.abs() <= SPAN_EPS {
            s.push(1.0);
        } else {
            return Err(Error::Data(format!(
                "reference span in dimension {k} is {span:e}; cannot scale it to reach the goal"
            )));
        }
    }
    for _ in 0..MAX_SCALE_REFINEMENTS {
        let y = scaled_rollout(cfg, force, &s, start, r0, ref_goal)?;
        let (t0, t1) = (y.first(), y.last());
        if euclid(t1, goal) < SCALE_TOLERANCE {
            break;
        }
        for k in 0..cfg.dims {
            let span = t1[k] - t0[k];
            if span.abs() > SPAN_EPS {
                s[k] *= 1.0 + (goal[k] - t1[k]) / span;
            }
        }
    }
    Ok(ScaleParams { s })
}

/// Decodes a force for `spec` and stretches it onto the requested start and
/// goal. `rng` is only used when the spec carries no latent.
pub fn generate(model: &CvaeModel, spec: &TaskSpec, rng: &mut impl Rng) -> Result<GenerationResult> {
    spec.validate(model)?;
    let z = match &spec.latent {
        Some(z) => z.clone(),
        None => (0..model.latent_dim()).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let force = model.decode(&z, spec.task_id)?;
    let norm = &model.normalization;
    let start = norm.to_normalized(&spec.start);
    let goal = norm.to_normalized(&spec.goal);
    let r = model.reference(spec.task_id)?;
    let cfg = &model.dmp;
    let reference = integrate(cfg, &force, &r.start, &r.goal)?;
    let scale = compute_scale(cfg, &force, &start, &goal, &reference, &r.goal)?;
    let normalized = scaled_rollout(cfg, &force, &scale.s, &start, &r.start, &r.goal)?;
    let via: Vec<Vec<f64>> = spec.via_points.iter().map(|v| norm.to_normalized(v)).collect();
    let diagnostics = Diagnostics {
        end_error: euclid(normalized.last(), &goal),
        via_errors: via.iter().map(|v| trajectory_distance(&normalized, v)).collect(),
        ..Diagnostics::default()
    };
    Ok(GenerationResult {
        spec: spec.clone(),
        trajectory: norm.invert(&normalized)?.with_task(spec.task_id),
        normalized: normalized.with_task(spec.task_id),
        force: force.scaled(&scale.s),
        scale,
        latent: z,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::digit_template;
    use crate::dmp::inverse_dynamics;

    #[test]
    fn matching_endpoints_give_unit_scale() {
        let cfg = DmpConfig::default();
        let t = digit_template(3, &cfg).unwrap();
        let f = inverse_dynamics(&cfg, &t).unwrap();
        let reference = integrate(&cfg, &f, t.first(), t.last()).unwrap();
        let s = compute_scale(&cfg, &f, t.first(), t.last(), &reference, t.last()).unwrap();
        assert!(s.s.iter().all(|v| (v - 1.0).abs() < 1e-9), "{s:?}");
    }

    #[test]
    fn doubled_span_gives_scale_two_and_exact_endpoint() {
        let cfg = DmpConfig::default();
        let t = digit_template(2, &cfg).unwrap();
        let f = inverse_dynamics(&cfg, &t).unwrap();
        let reference = integrate(&cfg, &f, t.first(), t.last()).unwrap();
        let start = [0.2, 0.3];
        let goal = [0.2 + 2.0, 0.3 - 2.0];
        let s = compute_scale(&cfg, &f, &start, &goal, &reference, t.last()).unwrap();
        assert!(s.s.iter().all(|v| (v - 2.0).abs() < 1e-6), "{s:?}");
        let y = scaled_rollout(&cfg, &f, &s.s, &start, t.first(), t.last()).unwrap();
        assert!(euclid(y.last(), &goal) < 1e-3);
        assert_eq!(y.first(), &start);
        // The rollout is the reference stretched about its start.
        for (p, q) in y.points().zip(t.points()) {
            for k in 0..2 {
                assert!((p[k] - (start[k] + 2.0 * (q[k] - t.first()[k]))).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn unreachable_flat_dimension_is_an_error() {
        let cfg = DmpConfig::default();
        let flat = Trajectory::from_flat(
            (0..cfg.n_steps).flat_map(|i| [i as f64 / 99.0, 0.5]).collect(),
            2,
            cfg.dt,
        )
        .unwrap();
        let f = ForceProfile::zeros(&cfg);
        let err = compute_scale(&cfg, &f, &[0.0, 0.0], &[1.0, 1.0], &flat, &[1.0, 0.5]).unwrap_err();
        assert!(err.to_string().contains("dimension 1"), "{err}");
        let ok = compute_scale(&cfg, &f, &[0.0, 0.2], &[1.0, 0.2], &flat, &[1.0, 0.5]).unwrap();
        assert_eq!(ok.s[1], 1.0);
    }
}
