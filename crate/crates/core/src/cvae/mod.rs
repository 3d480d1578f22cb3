//! Conditional VAE over forcing profiles.
//!
//! The encoder is a 1D-conv trunk over the `[dims, n_steps]` force, whose
//! flattened features are concatenated with a one-hot task id and mapped to
//! `(mu, log_var)`. The decoder maps `[z, one-hot]` through three dense
//! layers to a flattened force. Forces are divided by a per-dimension scale
//! (their RMS over the training set) before they reach the networks.

mod checkpoint;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Normalization;
use crate::dmp::{canonical_rollout, DmpConfig, ForceProfile};
use crate::error::{Error, Result};
use crate::nn::{
    kl_standard_normal, kl_standard_normal_grad, mse, reparameterize, reparameterize_backward, Gradients,
    LayerSpec, Network, Tensor,
};

pub use checkpoint::{from_bytes, load, save, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, EpochLoss, TrainConfig};

/// Layer sizes; everything else about the networks is fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvaeArch {
    pub latent_dim: usize,
    pub conv_channels: [usize; 2],
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub decoder_hidden: [usize; 2],
}

impl Default for CvaeArch {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            conv_channels: [16, 32],
            conv_kernel: 5,
            conv_stride: 2,
            decoder_hidden: [128, 256],
        }
    }
}

impl CvaeArch {
    fn conv_out_len(&self, len: usize) -> Option<usize> {
        let k = self.conv_kernel;
        let l1 = len.checked_sub(k)? / self.conv_stride + 1;
        Some(l1.checked_sub(k)? / self.conv_stride + 1)
    }

    pub fn trunk_specs(&self, dims: usize) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Conv1d {
                in_channels: dims,
                out_channels: self.conv_channels[0],
                kernel: self.conv_kernel,
                stride: self.conv_stride,
            },
            LayerSpec::Relu,
            LayerSpec::Conv1d {
                in_channels: self.conv_channels[0],
                out_channels: self.conv_channels[1],
                kernel: self.conv_kernel,
                stride: self.conv_stride,
            },
            LayerSpec::Relu,
            LayerSpec::Flatten,
        ]
    }

    pub fn head_specs(&self, n_steps: usize, n_tasks: usize) -> Result<Vec<LayerSpec>> {
        let l = self
            .conv_out_len(n_steps)
            .ok_or_else(|| Error::Config(format!("n_steps {n_steps} too short for the conv encoder")))?;
        Ok(vec![LayerSpec::Dense {
            inputs: self.conv_channels[1] * l + n_tasks,
            outputs: 2 * self.latent_dim,
        }])
    }

    pub fn decoder_specs(&self, n_steps: usize, dims: usize, n_tasks: usize) -> Vec<LayerSpec> {
        let [h1, h2] = self.decoder_hidden;
        vec![
            LayerSpec::Dense {
                inputs: self.latent_dim + n_tasks,
                outputs: h1,
            },
            LayerSpec::Relu,
            LayerSpec::Dense { inputs: h1, outputs: h2 },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: h2,
                outputs: n_steps * dims,
            },
        ]
    }
}

/// Start and goal of a task's demonstrations (their means) in the
/// normalized frame; decoded forces are rolled out against these before
/// being scaled to a new start and goal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReference {
    pub start: Vec<f64>,
    pub goal: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub seed: u64,
    pub samples: usize,
    pub loss_curve: Vec<EpochLoss>,
    /// Hash of the run configuration that produced the model, if recorded.
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvaeModel {
    pub arch: CvaeArch,
    pub encoder_trunk: Network,
    pub encoder_head: Network,
    pub decoder: Network,
    /// Sorted task vocabulary; position is the one-hot index.
    pub tasks: Vec<u32>,
    pub dmp: DmpConfig,
    pub force_scale: Vec<f64>,
    pub references: BTreeMap<u32, TaskReference>,
    pub normalization: Normalization,
    pub meta: TrainingMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub noise: Vec<f64>,
    pub z: Vec<f64>,
}

/// Batch-mean loss split into its two terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ElboLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Gradients for every network of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct CvaeGradients {
    pub trunk: Gradients,
    pub head: Gradients,
    pub decoder: Gradients,
}

impl CvaeGradients {
    pub fn flat(&self) -> Vec<&Tensor> {
        let mut v = self.trunk.flat();
        v.extend(self.head.flat());
        v.extend(self.decoder.flat());
        v
    }
}

impl CvaeModel {
    /// Freshly initialized model. `references` must cover every task.
    pub fn new(
        arch: CvaeArch,
        dmp: DmpConfig,
        tasks: &[u32],
        references: BTreeMap<u32, TaskReference>,
        force_scale: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        dmp.validate()?;
        let mut tasks = tasks.to_vec();
        tasks.sort_unstable();
        tasks.dedup();
        if tasks.is_empty() {
            return Err(Error::Config("task vocabulary is empty".into()));
        }
        if let Some(t) = tasks.iter().find(|t| !references.contains_key(t)) {
            return Err(Error::Config(format!("no reference start/goal for task {t}")));
        }
        if force_scale.len() != dmp.dims || force_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!("bad force scale {force_scale:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = tasks.len();
        Ok(Self {
            encoder_trunk: Network::new(&arch.trunk_specs(dmp.dims), &mut rng)?,
            encoder_head: Network::new(&arch.head_specs(dmp.n_steps, m)?, &mut rng)?,
            decoder: Network::new(&arch.decoder_specs(dmp.n_steps, dmp.dims, m), &mut rng)?,
            arch,
            tasks,
            dmp,
            force_scale,
            references,
            normalization: Normalization::identity(dmp.dims),
            meta: TrainingMeta {
                seed,
                ..TrainingMeta::default()
            },
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn task_index(&self, task_id: u32) -> Result<usize> {
        self.tasks.binary_search(&task_id).map_err(|_| Error::UnknownTask {
            id: task_id,
            supported: self.tasks.clone(),
        })
    }

    pub fn one_hot(&self, task_id: u32) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.tasks.len()];
        v[self.task_index(task_id)?] = 1.0;
        Ok(v)
    }

    pub fn reference(&self, task_id: u32) -> Result<&TaskReference> {
        self.task_index(task_id)?;
        Ok(&self.references[&task_id])
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.encoder_trunk.params();
        v.extend(self.encoder_head.params());
        v.extend(self.decoder.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder_trunk.params_mut();
        v.extend(self.encoder_head.params_mut());
        v.extend(self.decoder.params_mut());
        v
    }

    /// Force scaled into network units, dimension-major.
    pub fn normalize_force(&self, force: &ForceProfile) -> Result<Vec<f64>> {
        if force.len() != self.dmp.n_steps || force.dims() != self.dmp.dims {
            return Err(Error::shape(
                "cvae force",
                format!("{} x {}", self.dmp.n_steps, self.dmp.dims),
                format!("{} x {}", force.len(), force.dims()),
            ));
        }
        let inv: Vec<f64> = self.force_scale.iter().map(|s| 1.0 / s).collect();
        Ok(force.scaled(&inv).to_channel_major())
    }

    /// Network output (dimension-major, network units) back to a force.
    pub fn denormalize_force(&self, values: &[f64]) -> Result<ForceProfile> {
        let f = ForceProfile::from_channel_major(values, self.dmp.dims, canonical_rollout(&self.dmp))?;
        Ok(f.scaled(&self.force_scale))
    }

    fn encoder_forward(&self, x: &Tensor, onehot: &Tensor) -> Result<(Tensor, Tensor)> {
        let feat = self.encoder_trunk.predict(x)?;
        let out = self.encoder_head.predict(&Tensor::concat_features(&feat, onehot)?)?;
        out.split_features(self.latent_dim())
    }

    /// Posterior mean and log-variance, and `z` drawn with the given noise.
    pub fn encode_with_noise(&self, force: &ForceProfile, task_id: u32, noise: &[f64]) -> Result<LatentCode> {
        if noise.len() != self.latent_dim() {
            return Err(Error::shape("latent noise", self.latent_dim(), noise.len()));
        }
        let x = Tensor::new(&[1, self.dmp.dims, self.dmp.n_steps], self.normalize_force(force)?)?;
        let onehot = Tensor::row(self.one_hot(task_id)?);
        let (mu, lv) = self.encoder_forward(&x, &onehot)?;
        let z = reparameterize(&mu, &lv, &Tensor::row(noise.to_vec()))?;
        let code = LatentCode {
            mu: mu.into_data(),
            log_var: lv.into_data(),
            noise: noise.to_vec(),
            z: z.into_data(),
        };
        if code.mu.iter().chain(&code.log_var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("encoder output".into()));
        }
        Ok(code)
    }

    pub fn encode(&self, force: &ForceProfile, task_id: u32, rng: &mut impl Rng) -> Result<LatentCode> {
        let noise: Vec<f64> = (0..self.latent_dim()).map(|_| rng.sample(StandardNormal)).collect();
        self.encode_with_noise(force, task_id, &noise)
    }

    /// Decoder input row `[z, one-hot]`.
    pub fn decoder_input(&self, z: &[f64], task_id: u32) -> Result<Tensor> {
        if z.len() != self.latent_dim() {
            return Err(Error::shape("latent z", self.latent_dim(), z.len()));
        }
        let mut row = z.to_vec();
        row.extend(self.one_hot(task_id)?);
        Ok(Tensor::row(row))
    }

    pub fn decode(&self, z: &[f64], task_id: u32) -> Result<ForceProfile> {
        let out = self.decoder.predict(&self.decoder_input(z, task_id)?)?;
        self.denormalize_force(out.data())
    }

    /// Loss and gradients for a batch: `x` is `[B, dims, n_steps]` in network
    /// units, `onehot` is `[B, tasks]`, `noise` is `[B, latent]`.
    pub fn elbo_batch(
        &self,
        x: &Tensor,
        onehot: &Tensor,
        noise: &Tensor,
        kl_weight: f64,
    ) -> Result<(ElboLoss, CvaeGradients)> {
        let b = x.batch();
        let ld = self.latent_dim();
        let (feat, trunk_tape) = self.encoder_trunk.forward(x)?;
        let (enc, head_tape) = self.encoder_head.forward(&Tensor::concat_features(&feat, onehot)?)?;
        let (mu, lv) = enc.split_features(ld)?;
        let z = reparameterize(&mu, &lv, noise)?;
        let (recon_out, dec_tape) = self.decoder.forward(&Tensor::concat_features(&z, onehot)?)?;
        let target = x.clone().reshape(&[b, x.row_len()])?;
        let (recon, grad_out) = mse(&recon_out, &target)?;
        let kl = kl_standard_normal(&mu, &lv)? / b as f64;
        let loss = ElboLoss {
            total: recon + kl_weight * kl,
            recon,
            kl,
        };
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!(
                "ELBO loss (reconstruction {}, KL {})",
                loss.recon, loss.kl
            )));
        }

        let dec_grads = self.decoder.backward(&dec_tape, &grad_out)?;
        let (grad_z, _) = dec_grads.input.split_features(ld)?;
        let (mut gmu, mut glv) = reparameterize_backward(&grad_z, &lv, noise)?;
        let (kmu, klv) = kl_standard_normal_grad(&mu, &lv)?;
        let s = kl_weight / b as f64;
        gmu.data_mut().iter_mut().zip(kmu.data()).for_each(|(g, k)| *g += s * k);
        glv.data_mut().iter_mut().zip(klv.data()).for_each(|(g, k)| *g += s * k);
        let head_grads = self.encoder_head.backward(&head_tape, &Tensor::concat_features(&gmu, &glv)?)?;
        let (grad_feat, _) = head_grads.input.split_features(feat.row_len())?;
        let trunk_grads = self.encoder_trunk.backward(&trunk_tape, &grad_feat.reshape(feat.shape())?)?;
        Ok((
            loss,
            CvaeGradients {
                trunk: trunk_grads,
                head: head_grads,
                decoder: dec_grads,
            },
        ))
    }

    /// Single-example ELBO: mean squared force reconstruction (network units)
    /// plus `kl_weight` times the KL to the standard-normal prior.
    pub fn elbo_loss(
        &self,
        force: &ForceProfile,
        task_id: u32,
        noise: &[f64],
        kl_weight: f64,
    ) -> Result<(ElboLoss, CvaeGradients)> {
        let x = Tensor::new(&[1, self.dmp.dims, self.dmp.n_steps], self.normalize_force(force)?)?;
        let onehot = Tensor::row(self.one_hot(task_id)?);
        if noise.len() != self.latent_dim() {
            return Err(Error::shape("latent noise", self.latent_dim(), noise.len()));
        }
        self.elbo_batch(&x, &onehot, &Tensor::row(noise.to_vec()), kl_weight)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dmp::canonical_rollout;

    pub(crate) fn small_model(seed: u64) -> CvaeModel {
        let dmp = DmpConfig {
            n_steps: 20,
            ..DmpConfig::default()
        };
        let arch = CvaeArch {
            latent_dim: 2,
            conv_channels: [3, 4],
            conv_kernel: 3,
            conv_stride: 2,
            decoder_hidden: [6, 5],
        };
        let refs = [1, 2]
            .into_iter()
            .map(|t| {
                (
                    t,
                    TaskReference {
                        start: vec![0.0, 1.0],
                        goal: vec![1.0, 0.0],
                    },
                )
            })
            .collect();
        CvaeModel::new(arch, dmp, &[2, 1], refs, vec![50.0, 80.0], seed).unwrap()
    }

    fn force(model: &CvaeModel, seed: u64) -> ForceProfile {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase = canonical_rollout(&model.dmp);
        let f = (0..phase.len() * 2).map(|_| rng.gen_range(-100.0..100.0)).collect();
        ForceProfile::new(f, 2, phase).unwrap()
    }

    #[test]
    fn vocabulary_is_sorted_and_checked() {
        let m = small_model(0);
        assert_eq!(m.tasks, vec![1, 2]);
        assert_eq!(m.one_hot(2).unwrap(), vec![0.0, 1.0]);
        let err = m.one_hot(7).unwrap_err();
        assert!(matches!(err, Error::UnknownTask { id: 7, ref supported } if supported == &vec![1, 2]));
        assert!(m.decode(&[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn encode_and_decode_are_deterministic() {
        let m = small_model(1);
        let f = force(&m, 2);
        let a = m.encode_with_noise(&f, 1, &[0.3, -0.2]).unwrap();
        let b = m.encode_with_noise(&f, 1, &[0.3, -0.2]).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.decode(&a.z, 2).unwrap(), m.decode(&a.z, 2).unwrap());
    }

    #[test]
    fn zeroed_head_weights_give_bias_as_mu() {
        let mut m = small_model(3);
        let params = m.encoder_head.params_mut();
        let [w, b] = <[&mut Tensor; 2]>::try_from(params).unwrap();
        w.data_mut().iter_mut().for_each(|v| *v = 0.0);
        b.data_mut().copy_from_slice(&[0.1, -0.2, 0.3, 0.4]);
        for s in 0..3 {
            let code = m.encode_with_noise(&force(&m, s), 1 + (s as u32 % 2), &[0.0, 0.0]).unwrap();
            assert_eq!(code.mu, vec![0.1, -0.2]);
            assert_eq!(code.log_var, vec![0.3, 0.4]);
        }
    }

    #[test]
    fn perfect_reconstruction_at_prior_has_zero_loss() {
        // A decoder whose last layer outputs exactly the input force: zero
        // weights and the normalized force as bias.
        let mut m = small_model(4);
        let f = force(&m, 5);
        let target = m.normalize_force(&f).unwrap();
        {
            let mut last = m.decoder.params_mut();
            let n = last.len();
            last[n - 2].data_mut().iter_mut().for_each(|v| *v = 0.0);
            last[n - 1].data_mut().copy_from_slice(&target);
        }
        {
            let mut head = m.encoder_head.params_mut();
            head[0].data_mut().iter_mut().for_each(|v| *v = 0.0);
            head[1].data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let (loss, _) = m.elbo_loss(&f, 1, &[0.7, -1.1], 1.0).unwrap();
        assert!(loss.total.abs() < 1e-20, "{loss:?}");
    }

    #[test]
    fn zero_kl_weight_is_pure_reconstruction() {
        let m = small_model(6);
        let f = force(&m, 7);
        let (loss, _) = m.elbo_loss(&f, 2, &[0.1, 0.2], 0.0).unwrap();
        assert_eq!(loss.total, loss.recon);
        let (weighted, _) = m.elbo_loss(&f, 2, &[0.1, 0.2], 2.5).unwrap();
        assert!((weighted.total - (weighted.recon + 2.5 * weighted.kl)).abs() < 1e-12);
        assert!(weighted.recon >= 0.0 && weighted.kl >= 0.0);
    }

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let mut m = small_model(8);
        let f = force(&m, 9);
        let noise = [0.4, -0.9];
        let (_, grads) = m.elbo_loss(&f, 1, &noise, 0.7).unwrap();
        let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|t| t.data().to_vec()).collect();
        let eps = 1e-5;
        let mut diff = 0.0;
        let mut norm = 0.0f64;
        for (bi, an) in analytic.iter().enumerate() {
            for j in 0..an.len() {
                m.params_mut()[bi].data_mut()[j] += eps;
                let lp = m.elbo_loss(&f, 1, &noise, 0.7).unwrap().0.total;
                m.params_mut()[bi].data_mut()[j] -= 2.0 * eps;
                let lm = m.elbo_loss(&f, 1, &noise, 0.7).unwrap().0.total;
                m.params_mut()[bi].data_mut()[j] += eps;
                let num = (lp - lm) / (2.0 * eps);
                diff += (num - an[j]).powi(2);
                norm = norm.max(an[j].abs()).max(num.abs());
            }
        }
        let total_norm: f64 = analytic.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        let rel = diff.sqrt() / total_norm;
        assert!(rel < 1e-4, "relative error {rel}");
    }
}
