//! Trajectory CSV (`task_id,step,dim0,dim1[,...]`) and its JSON sidecar.
//!
//! Leading lines starting with `#` carry provenance (seed and config hash)
//! and are skipped by the reader.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dmp::{DmpConfig, Trajectory};
use crate::error::{Error, Result};

use super::{AugmentConfig, DatasetBundle, Demonstration, NormMode, Normalization, Source};

/// Provenance written as a `#` comment ahead of the header.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvStamp {
    pub seed: u64,
    pub config_hash: String,
}

impl CsvStamp {
    pub fn new(seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            seed,
            config_hash: config_hash(config)?,
        })
    }
}

/// SHA-256 (hex) of `config` as JSON with object keys sorted, so field order
/// in the source file does not matter.
pub fn config_hash(config: &impl Serialize) -> Result<String> {
    // serde_json's default map is ordered, so a round trip through `Value`
    // canonicalizes key order.
    let canonical = serde_json::to_string(&serde_json::to_value(config)?)?;
    Ok(Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub task_ids: Vec<u32>,
    pub n_steps: usize,
    pub normalization: Normalization,
    pub augment: Option<AugmentConfig>,
    pub rng_seed: Option<u64>,
    pub dmp: DmpConfig,
    /// One entry per CSV trajectory, in file order.
    pub sources: Vec<Source>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut s = csv_path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_trajectories_csv(
    path: &Path,
    trajs: &[(u32, &Trajectory)],
    stamp: Option<&CsvStamp>,
) -> Result<()> {
    let dims = trajs.first().map_or(0, |(_, t)| t.dims());
    let mut buf = Vec::new();
    if let Some(s) = stamp {
        writeln!(buf, "# seed={} config_hash={}", s.seed, s.config_hash).expect("vec write");
    }
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(&mut buf);
        let mut header = vec!["task_id".to_string(), "step".to_string()];
        header.extend((0..dims).map(|k| format!("dim{k}")));
        w.write_record(&header).map_err(csv_err(path))?;
        for (id, t) in trajs {
            if t.dims() != dims {
                return Err(Error::shape("csv export dims", dims, t.dims()));
            }
            for (step, p) in t.points().enumerate() {
                let mut row = vec![id.to_string(), step.to_string()];
                // `{:?}` on f64 prints the shortest representation that
                // parses back to the same value.
                row.extend(p.iter().map(|v| format!("{v:?}")));
                w.write_record(&row).map_err(csv_err(path))?;
            }
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Reads every trajectory in file order. A trajectory ends where the next
/// row restarts at step 0.
pub fn read_trajectories_csv(path: &Path, dt: f64) -> Result<Vec<(u32, Trajectory)>> {
    let text = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let parse = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_slice());
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let header_line = header.position().map_or(1, |p| p.line());
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Data(format!("{}: no trajectories", path.display())));
    }
    let ncols = header.len();
    if ncols < 3 || &header[0] != "task_id" || &header[1] != "step" {
        return Err(parse(header_line, format!("unknown header {:?}", header.iter().collect::<Vec<_>>())));
    }
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("dim{k}") {
            return Err(parse(header_line, format!("unknown header column {name:?}, expected \"dim{k}\"")));
        }
    }
    let dims = ncols - 2;

    let mut out = Vec::new();
    let mut cur: Option<(u32, Vec<f64>)> = None;
    let finish = |cur: Option<(u32, Vec<f64>)>, out: &mut Vec<(u32, Trajectory)>, line: u64| -> Result<()> {
        if let Some((id, data)) = cur {
            let t = Trajectory::from_flat(data, dims, dt)
                .map_err(|e| parse(line, format!("trajectory ending here: {e}")))?;
            out.push((id, t.with_task(id)));
        }
        Ok(())
    };
    let mut last_line = header_line;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        last_line = line;
        if rec.len() != ncols {
            return Err(parse(line, format!("row has {} columns, expected {ncols}", rec.len())));
        }
        let id: u32 = rec[0].trim().parse().map_err(|_| parse(line, format!("bad task_id {:?}", &rec[0])))?;
        let step: usize = rec[1].trim().parse().map_err(|_| parse(line, format!("bad step {:?}", &rec[1])))?;
        let mut vals = Vec::with_capacity(dims);
        for f in rec.iter().skip(2) {
            let v: f64 = f.trim().parse().map_err(|_| parse(line, format!("bad number {f:?}")))?;
            vals.push(v);
        }
        if step == 0 {
            finish(cur.take(), &mut out, line.saturating_sub(1))?;
            cur = Some((id, vals));
        } else {
            let Some((cur_id, data)) = cur.as_mut() else {
                return Err(parse(line, format!("trajectory starts at step {step}, expected 0")));
            };
            if *cur_id != id {
                return Err(parse(line, format!("task_id changed from {cur_id} to {id} mid-trajectory")));
            }
            let expected = data.len() / dims;
            if step != expected {
                return Err(parse(line, format!("step {step} out of sequence, expected {expected}")));
            }
            data.extend(vals);
        }
    }
    finish(cur, &mut out, last_line)?;
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no trajectories", path.display())));
    }
    Ok(out)
}

/// Writes the bundle's trajectories plus a `<path>.json` metadata sidecar.
pub fn export_csv(bundle: &DatasetBundle, path: &Path, stamp: Option<&CsvStamp>) -> Result<()> {
    let trajs: Vec<(u32, &Trajectory)> = bundle.demos().map(|d| (d.task_id, &d.trajectory)).collect();
    write_trajectories_csv(path, &trajs, stamp)?;
    let meta = BundleMetadata {
        task_ids: bundle.task_ids(),
        n_steps: bundle.dmp.n_steps,
        normalization: bundle.normalization.clone(),
        augment: bundle.augment,
        rng_seed: bundle.augment.map(|a| a.rng_seed),
        dmp: bundle.dmp,
        sources: bundle.demos().map(|d| d.source).collect(),
        config_hash: stamp.map(|s| s.config_hash.clone()),
    };
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(format!("writing {}", side.display()), e))
}

/// Reads a trajectory CSV. When a sidecar is present its metadata is
/// restored; otherwise every trajectory is tagged ingested and the
/// normalization record is fit to the data's bounding box.
pub fn ingest_csv(path: &Path) -> Result<DatasetBundle> {
    let side = sidecar_path(path);
    let meta: Option<BundleMetadata> = if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(format!("reading {}", side.display()), e))?;
        Some(serde_json::from_str(&text)?)
    } else {
        None
    };
    let dt = meta.as_ref().map_or(DmpConfig::default().dt, |m| m.dmp.dt);
    let trajs = read_trajectories_csv(path, dt)?;
    let dims = trajs[0].1.dims();
    if let Some((i, (_, t))) = trajs.iter().enumerate().find(|(_, (_, t))| t.dims() != dims) {
        return Err(Error::Data(format!("trajectory {i} has {} dims, expected {dims}", t.dims())));
    }
    let n_steps = trajs[0].1.len();
    let (dmp, normalization, augment, sources) = match meta {
        Some(m) => {
            if m.sources.len() != trajs.len() {
                return Err(Error::Data(format!(
                    "sidecar lists {} trajectories, file has {}",
                    m.sources.len(),
                    trajs.len()
                )));
            }
            (m.dmp, m.normalization, m.augment, m.sources)
        }
        None => {
            let dmp = DmpConfig {
                n_steps,
                dims,
                ..DmpConfig::default()
            };
            let norm = Normalization::fit(trajs.iter().map(|(_, t)| t), NormMode::Joint)?;
            (dmp, norm, None, vec![Source::Ingested; trajs.len()])
        }
    };
    let mut bundle = DatasetBundle::empty(dmp);
    bundle.normalization = normalization;
    bundle.augment = augment;
    for ((id, t), source) in trajs.into_iter().zip(sources) {
        bundle.push(Demonstration {
            trajectory: t,
            task_id: id,
            source,
        });
    }
    Ok(bundle)
}
