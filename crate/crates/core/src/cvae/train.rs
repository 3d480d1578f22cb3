use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{CvaeArch, CvaeModel, ElboLoss, TaskReference};
use crate::dataset::DatasetBundle;
use crate::dmp::inverse_dynamics;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: CvaeArch,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub kl_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: CvaeArch::default(),
            epochs: 150,
            batch_size: 32,
            lr: 1e-3,
            kl_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return Err(Error::Config(format!("kl_weight must be >= 0, got {}", self.kl_weight)));
        }
        if self.arch.latent_dim == 0 {
            return Err(Error::Config("latent_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Mean loss over one pass of the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

struct Sample {
    x: Vec<f64>,
    task: usize,
}

/// Trains a model on every demonstration of `bundle`. Targets are the exact
/// inverse-dynamics forces of the trajectories in the bundle's normalized
/// frame. Deterministic for a given `cfg.seed`.
pub fn train(bundle: &DatasetBundle, cfg: &TrainConfig) -> Result<CvaeModel> {
    cfg.validate()?;
    if bundle.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    let dmp = bundle.dmp;
    let norm = bundle.normalized()?;
    let dims = dmp.dims;

    let mut references = BTreeMap::new();
    let mut forces = Vec::with_capacity(norm.len());
    for (&task, demos) in &norm.tasks {
        if demos.is_empty() {
            continue;
        }
        let mut start = vec![0.0; dims];
        let mut goal = vec![0.0; dims];
        for d in demos {
            let t = &d.trajectory;
            if t.len() != dmp.n_steps {
                return Err(Error::shape(
                    format!("task {task} trajectory length"),
                    dmp.n_steps,
                    t.len(),
                ));
            }
            for k in 0..dims {
                start[k] += t.first()[k] / demos.len() as f64;
                goal[k] += t.last()[k] / demos.len() as f64;
            }
            forces.push((task, inverse_dynamics(&dmp, t)?));
        }
        references.insert(task, TaskReference { start, goal });
    }

    // Per-dimension RMS over all forces keeps network targets near unit scale.
    let mut scale = vec![0.0; dims];
    let mut count = 0usize;
    for (_, f) in &forces {
        for i in 0..f.len() {
            for (k, s) in scale.iter_mut().enumerate() {
                *s += f.at(i)[k].powi(2);
            }
        }
        count += f.len();
    }
    let scale: Vec<f64> = scale.iter().map(|s| (s / count as f64).sqrt().max(1e-6)).collect();

    let tasks: Vec<u32> = references.keys().copied().collect();
    let mut model = CvaeModel::new(cfg.arch.clone(), dmp, &tasks, references, scale, cfg.seed)?;
    model.normalization = bundle.normalization.clone();

    let samples = forces
        .iter()
        .map(|(task, f)| {
            Ok(Sample {
                x: model.normalize_force(f)?,
                task: model.task_index(*task)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params(),
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let n_tasks = model.tasks.len();
    let row = dims * dmp.n_steps;
    let ld = model.latent_dim();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = ElboLoss::default();
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut x = Vec::with_capacity(b * row);
            let mut onehot = vec![0.0; b * n_tasks];
            for (j, &i) in batch.iter().enumerate() {
                x.extend_from_slice(&samples[i].x);
                onehot[j * n_tasks + samples[i].task] = 1.0;
            }
            let noise: Vec<f64> = (0..b * ld).map(|_| rng.sample(StandardNormal)).collect();
            let (loss, grads) = model.elbo_batch(
                &Tensor::new(&[b, dims, dmp.n_steps], x)?,
                &Tensor::new(&[b, n_tasks], onehot)?,
                &Tensor::new(&[b, ld], noise)?,
                cfg.kl_weight,
            )?;
            adam.step(&mut model.params_mut(), &grads.flat())?;
            let w = b as f64 / samples.len() as f64;
            acc.total += w * loss.total;
            acc.recon += w * loss.recon;
            acc.kl += w * loss.kl;
        }
        curve.push(EpochLoss {
            epoch,
            total: acc.total,
            recon: acc.recon,
            kl: acc.kl,
        });
    }

    model.meta.epochs = cfg.epochs;
    model.meta.samples = samples.len();
    model.meta.loss_curve = curve;
    Ok(model)
}
