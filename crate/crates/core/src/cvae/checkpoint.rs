//! Binary checkpoint: 8-byte magic, `u32` LE format version, `u64` LE header
//! length, a JSON header, then every parameter as `f64` LE in network order
//! (encoder trunk, encoder head, decoder). The header carries a SHA-256 of
//! the parameter bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CvaeArch, CvaeModel, TaskReference, TrainingMeta};
use crate::dataset::Normalization;
use crate::dmp::DmpConfig;
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DMPCVAE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: CvaeArch,
    encoder_trunk: Vec<LayerSpec>,
    encoder_head: Vec<LayerSpec>,
    decoder: Vec<LayerSpec>,
    latent_dim: usize,
    tasks: Vec<u32>,
    n_steps: usize,
    dims: usize,
    dmp: DmpConfig,
    force_scale: Vec<f64>,
    references: BTreeMap<u32, TaskReference>,
    normalization: Normalization,
    training: TrainingMeta,
    param_count: usize,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn param_bytes(model: &CvaeModel) -> Vec<u8> {
    model
        .params()
        .iter()
        .flat_map(|t| t.data().iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

pub fn to_bytes(model: &CvaeModel) -> Result<Vec<u8>> {
    let params = param_bytes(model);
    let header = Header {
        arch: model.arch.clone(),
        encoder_trunk: model.encoder_trunk.specs(),
        encoder_head: model.encoder_head.specs(),
        decoder: model.decoder.specs(),
        latent_dim: model.latent_dim(),
        tasks: model.tasks.clone(),
        n_steps: model.dmp.n_steps,
        dims: model.dmp.dims,
        dmp: model.dmp,
        force_scale: model.force_scale.clone(),
        references: model.references.clone(),
        normalization: model.normalization.clone(),
        training: model.meta.clone(),
        param_count: params.len() / 8,
        sha256: hex(&Sha256::digest(&params)),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + json.len() + params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&params);
    Ok(out)
}

fn take<'a>(buf: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Truncated(format!("{what}: need {n} bytes, {} left", buf.len())));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub fn from_bytes(bytes: &[u8]) -> Result<CvaeModel> {
    let mut buf = bytes;
    if take(&mut buf, 8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(&mut buf, 4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(take(&mut buf, 8, "header length")?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| Error::BadCheckpoint(format!("header length {hlen}")))?;
    let header: Header = serde_json::from_slice(take(&mut buf, hlen, "header")?)?;
    let params = take(&mut buf, header.param_count * 8, "parameters")?;
    if !buf.is_empty() {
        return Err(Error::BadCheckpoint(format!("{} trailing bytes after parameters", buf.len())));
    }
    let actual = hex(&Sha256::digest(params));
    if actual != header.sha256 {
        return Err(Error::Checksum {
            expected: header.sha256,
            actual,
        });
    }
    if header.dmp.n_steps != header.n_steps || header.dmp.dims != header.dims || header.arch.latent_dim != header.latent_dim {
        return Err(Error::BadCheckpoint("header fields disagree".into()));
    }

    // Layers are rebuilt from their specs and then overwritten.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = CvaeModel {
        encoder_trunk: Network::new(&header.encoder_trunk, &mut rng)?,
        encoder_head: Network::new(&header.encoder_head, &mut rng)?,
        decoder: Network::new(&header.decoder, &mut rng)?,
        arch: header.arch,
        tasks: header.tasks,
        dmp: header.dmp,
        force_scale: header.force_scale,
        references: header.references,
        normalization: header.normalization,
        meta: header.training,
    };
    let expected: usize = model.params().iter().map(|t| t.len()).sum();
    if expected != header.param_count {
        return Err(Error::BadCheckpoint(format!(
            "layer specs need {expected} parameters, header declares {}",
            header.param_count
        )));
    }
    let mut values = params.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in model.params_mut() {
        for v in t.data_mut() {
            *v = values.next().unwrap();
        }
    }
    Ok(model)
}

pub fn save(model: &CvaeModel, path: &Path) -> Result<()> {
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing checkpoint {}", path.display()), e))
}

pub fn load(path: &Path) -> Result<CvaeModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    from_bytes(&bytes)
}
