//! Demonstration sets: built-in digit strokes, CSV ingestion, min-max
//! normalization and force-noise augmentation.

mod augment;
mod csv_io;
mod templates;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dmp::{DmpConfig, Trajectory};
use crate::error::{Error, Result};

pub use augment::{augment, perturb_weights, AugmentConfig};
pub use csv_io::{
    config_hash, export_csv, ingest_csv, read_trajectories_csv, sidecar_path, write_trajectories_csv,
    BundleMetadata, CsvStamp,
};
pub use templates::{digit_template, digit_templates, SUPPORTED_DIGITS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Template,
    Ingested,
    Augmented,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub trajectory: Trajectory,
    pub task_id: u32,
    pub source: Source,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// One scale for all dimensions (the largest span), preserving aspect.
    #[default]
    Joint,
    /// Each dimension mapped onto [0, 1] independently.
    PerDimension,
}

/// Affine map `u = (y - min) / scale` recorded from source data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mode: NormMode,
}

impl Normalization {
    pub fn identity(dims: usize) -> Self {
        Self {
            min: vec![0.0; dims],
            max: vec![1.0; dims],
            mode: NormMode::PerDimension,
        }
    }

    /// Bounding box of all points of `trajs`.
    pub fn fit<'a>(trajs: impl IntoIterator<Item = &'a Trajectory>, mode: NormMode) -> Result<Self> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for t in trajs {
            if min.is_empty() {
                min = vec![f64::INFINITY; t.dims()];
                max = vec![f64::NEG_INFINITY; t.dims()];
            }
            if t.dims() != min.len() {
                return Err(Error::shape("normalization input", min.len(), t.dims()));
            }
            for p in t.points() {
                for k in 0..p.len() {
                    min[k] = min[k].min(p[k]);
                    max[k] = max[k].max(p[k]);
                }
            }
        }
        if min.is_empty() {
            return Err(Error::Data("no trajectories to normalize".into()));
        }
        for k in 0..min.len() {
            if max[k] <= min[k] {
                return Err(Error::FlatDimension { dim: k, value: min[k] });
            }
        }
        Ok(Self { min, max, mode })
    }

    pub fn dims(&self) -> usize {
        self.min.len()
    }

    pub fn scale(&self) -> Vec<f64> {
        let spans: Vec<f64> = self.min.iter().zip(&self.max).map(|(a, b)| b - a).collect();
        match self.mode {
            NormMode::PerDimension => spans,
            NormMode::Joint => {
                let m = spans.iter().cloned().fold(0.0, f64::max);
                vec![m; spans.len()]
            }
        }
    }

    pub fn to_normalized(&self, p: &[f64]) -> Vec<f64> {
        let s = self.scale();
        p.iter().enumerate().map(|(k, v)| (v - self.min[k]) / s[k]).collect()
    }

    pub fn to_workspace(&self, u: &[f64]) -> Vec<f64> {
        let s = self.scale();
        u.iter().enumerate().map(|(k, v)| v * s[k] + self.min[k]).collect()
    }

    /// Scales a displacement (no offset).
    pub fn delta_to_normalized(&self, d: &[f64]) -> Vec<f64> {
        d.iter().zip(self.scale()).map(|(v, s)| v / s).collect()
    }

    pub fn apply(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.check(traj)?;
        traj.map_points(|p| self.to_normalized(p))
    }

    pub fn invert(&self, traj: &Trajectory) -> Result<Trajectory> {
        self.check(traj)?;
        traj.map_points(|p| self.to_workspace(p))
    }

    fn check(&self, traj: &Trajectory) -> Result<()> {
        if traj.dims() != self.dims() {
            return Err(Error::shape("normalization", self.dims(), traj.dims()));
        }
        Ok(())
    }
}

/// Min-max normalizes one trajectory onto [0, 1] (joint scale).
pub fn normalize(traj: &Trajectory) -> Result<(Trajectory, Normalization)> {
    normalize_with_mode(traj, NormMode::Joint)
}

pub fn normalize_with_mode(traj: &Trajectory, mode: NormMode) -> Result<(Trajectory, Normalization)> {
    let rec = Normalization::fit([traj], mode)?;
    Ok((rec.apply(traj)?, rec))
}

pub fn denormalize(traj: &Trajectory, rec: &Normalization) -> Result<Trajectory> {
    rec.invert(traj)
}

/// Demonstrations grouped by task id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub tasks: BTreeMap<u32, Vec<Demonstration>>,
    pub normalization: Normalization,
    pub dmp: DmpConfig,
    pub augment: Option<AugmentConfig>,
}

impl DatasetBundle {
    pub fn empty(dmp: DmpConfig) -> Self {
        Self {
            tasks: BTreeMap::new(),
            normalization: Normalization::identity(dmp.dims),
            dmp,
            augment: None,
        }
    }

    pub fn push(&mut self, demo: Demonstration) {
        self.tasks.entry(demo.task_id).or_default().push(demo);
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.tasks.values().map(Vec::len).sum()
    }

    pub fn task_ids(&self) -> Vec<u32> {
        self.tasks.keys().copied().collect()
    }

    pub fn demos(&self) -> impl Iterator<Item = &Demonstration> {
        self.tasks.values().flatten()
    }

    pub fn count(&self, task_id: u32) -> usize {
        self.tasks.get(&task_id).map_or(0, Vec::len)
    }

    /// Every trajectory in the normalized frame of this bundle.
    pub fn normalized(&self) -> Result<Self> {
        let mut out = self.clone();
        for demos in out.tasks.values_mut() {
            for d in demos.iter_mut() {
                d.trajectory = self.normalization.apply(&d.trajectory)?;
            }
        }
        out.normalization = Normalization::identity(self.dmp.dims);
        Ok(out)
    }
}
