use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dmp::{fit_weights, force_from_weights, integrate, inverse_dynamics, BasisWeights, ForceProfile};
use crate::error::{Error, Result};

use super::{DatasetBundle, Demonstration, Source};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Relative noise scale applied to every basis weight.
    pub k: f64,
    pub copies_per_demo: usize,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            k: 0.1,
            copies_per_demo: 100,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k.is_finite() && self.k >= 0.0) {
            return Err(Error::Config(format!("augmentation k must be >= 0, got {}", self.k)));
        }
        Ok(())
    }
}

/// `w_i * (1 + k * eps_i)` with independent standard-normal `eps_i`.
pub fn perturb_weights(weights: &BasisWeights, k: f64, rng: &mut impl Rng) -> BasisWeights {
    let mut out = weights.clone();
    for w in out.w.iter_mut() {
        let eps: f64 = rng.sample(StandardNormal);
        *w *= 1.0 + k * eps;
    }
    out
}

/// The RNG for copy `copy` of demonstration `demo`: one ChaCha stream per
/// copy, so results do not depend on evaluation order.
fn copy_rng(seed: u64, demo: usize, copy: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((demo as u64) << 32) | copy as u64);
    rng
}

/// Appends `copies_per_demo` noisy copies of every demonstration.
///
/// The fitted weights are perturbed and only the perturbation is pushed
/// back through the basis; it is added to the demonstration's exact
/// inverse-dynamics force, so `k = 0` reproduces the source exactly rather
/// than the basis fit of it.
pub fn augment(bundle: &DatasetBundle, cfg: &AugmentConfig) -> Result<DatasetBundle> {
    cfg.validate()?;
    if bundle.is_empty() {
        return Err(Error::Data("cannot augment an empty bundle".into()));
    }
    let dmp = bundle.dmp;
    let mut out = bundle.clone();
    out.augment = Some(*cfg);
    for (demo_idx, demo) in bundle.demos().enumerate() {
        let context = |e: Error| {
            let msg = format!("augmenting demonstration {demo_idx} (task {}): {e}", demo.task_id);
            if e.is_numerical() {
                Error::NonFinite(msg)
            } else {
                Error::Data(msg)
            }
        };
        let traj = &demo.trajectory;
        let (y0, g) = (traj.first().to_vec(), traj.last().to_vec());
        let base = inverse_dynamics(&dmp, traj).map_err(context)?;
        let fit = fit_weights(&dmp, &base, &y0, &g).map_err(context)?;
        for copy in 0..cfg.copies_per_demo {
            let mut rng = copy_rng(cfg.rng_seed, demo_idx, copy);
            let mut delta = perturb_weights(&fit.weights, cfg.k, &mut rng);
            for (d, w) in delta.w.iter_mut().zip(&fit.weights.w) {
                *d -= w;
            }
            let (noise, _) = force_from_weights(&delta, &base.phase, &y0, &g).map_err(context)?;
            let f: Vec<f64> = base.as_flat().iter().zip(noise.as_flat()).map(|(a, b)| a + b).collect();
            let force = ForceProfile::new(f, dmp.dims, base.phase.clone()).map_err(context)?;
            let mut new_traj = integrate(&dmp, &force, &y0, &g).map_err(context)?;
            new_traj.task_id = Some(demo.task_id);
            out.push(Demonstration {
                trajectory: new_traj,
                task_id: demo.task_id,
                source: Source::Augmented,
            });
        }
    }
    Ok(out)
}
