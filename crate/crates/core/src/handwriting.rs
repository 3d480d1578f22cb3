//! Handwriting benchmark: per digit, end error over random endpoints, and
//! via-point and shape error for a via-point pulled off the stroke midpoint.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cvae::CvaeModel;
use crate::error::{Error, Result};
use crate::generator::{finetune, generate, FinetuneConfig, GenerationResult, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandwritingConfig {
    pub tasks: Vec<u32>,
    pub start: Vec<f64>,
    /// Endpoints are `goal_center + goal_spread * r` with `r` standard normal.
    pub goal_center: Vec<f64>,
    pub goal_spread: f64,
    pub endpoints: usize,
    /// Added to the x coordinate of the generated midpoint.
    pub via_offset_x: f64,
    pub finetune: FinetuneConfig,
    /// Weights of the via-heavy comparison run.
    pub via_heavy_weights: [f64; 3],
}

impl Default for HandwritingConfig {
    fn default() -> Self {
        Self {
            tasks: vec![1, 2, 3, 7],
            start: vec![0.0, 1.0],
            goal_center: vec![1.0, 0.0],
            goal_spread: 0.3,
            endpoints: 50,
            via_offset_x: -0.2,
            finetune: FinetuneConfig::default(),
            via_heavy_weights: [0.05, 0.05, 0.9],
        }
    }
}

/// Means over all endpoints of one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: u32,
    pub end_error_pre: f64,
    pub end_error_post: f64,
    pub via_error: f64,
    pub shape_error: f64,
    pub via_error_heavy: f64,
    pub shape_error_heavy: f64,
    pub iterations: f64,
    pub warnings: usize,
}

/// Wall-clock seconds, kept apart from the rows so that reports from the
/// same seed compare equal.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskTiming {
    pub task_id: u32,
    pub generate_secs: f64,
    pub finetune_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandwritingReport {
    pub seed: u64,
    pub config: HandwritingConfig,
    pub rows: Vec<TaskRow>,
    pub timings: Vec<TaskTiming>,
}

fn midpoint_via(g: &GenerationResult, offset_x: f64) -> Vec<f64> {
    let t = &g.trajectory;
    let mut p = t.point(t.len() / 2).to_vec();
    p[0] += offset_x;
    p
}

/// Runs every task of `cfg`. Endpoint and latent draws come from one stream
/// per task, so adding a task does not change the others.
pub fn evaluate_handwriting(model: &CvaeModel, cfg: &HandwritingConfig, seed: u64) -> Result<HandwritingReport> {
    if cfg.endpoints == 0 {
        return Err(Error::Config("handwriting evaluation needs at least one endpoint".into()));
    }
    let heavy_cfg = FinetuneConfig {
        weights: cfg.via_heavy_weights,
        ..cfg.finetune.clone()
    };
    heavy_cfg.validate()?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &task in &cfg.tasks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(task));
        let mut sums = [0.0; 7];
        let mut warnings = 0;
        let mut timing = TaskTiming {
            task_id: task,
            ..TaskTiming::default()
        };
        for _ in 0..cfg.endpoints {
            let goal: Vec<f64> = cfg
                .goal_center
                .iter()
                .map(|c| {
                    let r: f64 = StandardNormal.sample(&mut rng);
                    c + cfg.goal_spread * r
                })
                .collect();
            let spec = TaskSpec::new(task, cfg.start.clone(), goal);
            let t = Instant::now();
            let initial = generate(model, &spec, &mut rng)?;
            timing.generate_secs += t.elapsed().as_secs_f64();

            let via = midpoint_via(&initial, cfg.via_offset_x);
            let spec = spec.with_via_points(vec![via]).with_latent(initial.latent.clone());
            let initial = generate(model, &spec, &mut rng)?;
            let t = Instant::now();
            let tuned = finetune(model, &initial, &cfg.finetune)?;
            timing.finetune_secs += t.elapsed().as_secs_f64();
            let heavy = finetune(model, &initial, &heavy_cfg)?;

            let (d, h) = (&tuned.diagnostics, &heavy.diagnostics);
            warnings += usize::from(d.warning.is_some()) + usize::from(h.warning.is_some());
            let vals = [
                initial.diagnostics.end_error,
                d.end_error,
                d.via_errors[0],
                d.shape_error,
                h.via_errors[0],
                h.shape_error,
                d.iterations as f64,
            ];
            for (s, v) in sums.iter_mut().zip(vals) {
                *s += v;
            }
        }
        let n = cfg.endpoints as f64;
        let m = sums.map(|s| s / n);
        rows.push(TaskRow {
            task_id: task,
            end_error_pre: m[0],
            end_error_post: m[1],
            via_error: m[2],
            shape_error: m[3],
            via_error_heavy: m[4],
            shape_error_heavy: m[5],
            iterations: m[6],
            warnings,
        });
        timing.generate_secs /= n;
        timing.finetune_secs /= n;
        timings.push(timing);
    }
    Ok(HandwritingReport {
        seed,
        config: cfg.clone(),
        rows,
        timings,
    })
}

impl HandwritingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "task_id,end_error_pre,end_error_post,via_error,shape_error,via_error_heavy,shape_error_heavy,iterations\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.task_id,
                r.end_error_pre,
                r.end_error_post,
                r.via_error,
                r.shape_error,
                r.via_error_heavy,
                r.shape_error_heavy,
                r.iterations
            )
            .expect("string write");
        }
        s
    }

    pub fn to_table(&self) -> String {
        let w = self.config.finetune.weights;
        let mut s = format!(
            "{:<6}{:>12}{:>12}{:>12}{:>12}{:>14}{:>14}{:>12}\n",
            "task", "end (pre)", "end (post)", "via", "shape", "via (heavy)", "shape (heavy)", "tune ms"
        );
        for (r, t) in self.rows.iter().zip(&self.timings) {
            writeln!(
                s,
                "{:<6}{:>12.4}{:>12.4}{:>12.4}{:>12.4}{:>14.4}{:>14.4}{:>12.1}",
                r.task_id,
                r.end_error_pre,
                r.end_error_post,
                r.via_error,
                r.shape_error,
                r.via_error_heavy,
                r.shape_error_heavy,
                t.finetune_secs * 1e3
            )
            .expect("string write");
        }
        writeln!(
            s,
            "means over {} endpoints; weights {:?}, heavy {:?}",
            self.config.endpoints, w, self.config.via_heavy_weights
        )
        .expect("string write");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvae::tests::small_model;

    fn small_cfg() -> HandwritingConfig {
        HandwritingConfig {
            tasks: vec![1, 2],
            endpoints: 3,
            finetune: FinetuneConfig {
                max_iters: 20,
                ..FinetuneConfig::default()
            },
            ..HandwritingConfig::default()
        }
    }

    #[test]
    fn same_seed_same_rows() {
        let m = small_model(4);
        let a = evaluate_handwriting(&m, &small_cfg(), 7).unwrap();
        let b = evaluate_handwriting(&m, &small_cfg(), 7).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 2);
        assert!(a.to_table().lines().count() == 4);
        let c = evaluate_handwriting(&m, &small_cfg(), 8).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn tasks_use_independent_streams() {
        let m = small_model(4);
        let both = evaluate_handwriting(&m, &small_cfg(), 7).unwrap();
        let one = HandwritingConfig {
            tasks: vec![2],
            ..small_cfg()
        };
        let only = evaluate_handwriting(&m, &one, 7).unwrap();
        assert_eq!(only.rows[0], both.rows[1]);
    }

    #[test]
    fn zero_endpoints_is_a_config_error() {
        let cfg = HandwritingConfig {
            endpoints: 0,
            ..small_cfg()
        };
        assert!(matches!(evaluate_handwriting(&small_model(0), &cfg, 0), Err(Error::Config(_))));
    }
}
