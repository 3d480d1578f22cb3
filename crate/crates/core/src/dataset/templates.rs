//! Parametric handwriting strokes for digits 1, 2, 3 and 7.
//!
//! Each digit is a control polygon drawn in the unit square starting at the
//! top-left corner, rounded with Chaikin corner cutting, resampled with a
//! minimum-jerk time law that also slows through curves (so the stroke starts
//! and ends at rest), and normalized per dimension onto [0, 1]^2.

use crate::dmp::{DmpConfig, Trajectory};
use crate::error::{Error, Result};

use super::{DatasetBundle, Demonstration, NormMode, Normalization, Source};

pub const SUPPORTED_DIGITS: [u32; 4] = [1, 2, 3, 7];

const CHAIKIN_PASSES: usize = 5;
const CURVATURE_FLOOR: f64 = 1.0;

fn control_polygon(digit: u32) -> Option<&'static [[f64; 2]]> {
    Some(match digit {
        1 => &[[0.0, 1.0], [0.3, 0.78], [1.0, 0.0]],
        2 => &[
            [0.0, 1.0],
            [0.55, 1.0],
            [0.9, 0.85],
            [0.85, 0.55],
            [0.45, 0.25],
            [0.0, 0.0],
            [1.0, 0.0],
        ],
        3 => &[
            [0.0, 1.0],
            [0.5, 1.0],
            [0.72, 0.86],
            [0.58, 0.63],
            [0.3, 0.55],
            [0.75, 0.46],
            [1.0, 0.23],
            [0.85, 0.03],
            [0.55, 0.0],
        ],
        7 => &[[0.0, 1.0], [1.0, 1.0], [0.45, 0.0]],
        _ => return None,
    })
}

fn chaikin(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(points.len() * 2);
    out.push(points[0]);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        out.push([0.75 * a[0] + 0.25 * b[0], 0.75 * a[1] + 0.25 * b[1]]);
        out.push([0.25 * a[0] + 0.75 * b[0], 0.25 * a[1] + 0.75 * b[1]]);
    }
    out.push(points[points.len() - 1]);
    out
}

fn min_jerk(s: f64) -> f64 {
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Samples the polyline at `n` points. Progress follows a minimum-jerk
/// profile in a warped arc length whose density grows with curvature as
/// `kappa^(1/3)`, so the pen slows through tight turns (two-thirds power law).
fn resample(poly: &[[f64; 2]], n: usize) -> Vec<Vec<f64>> {
    let seg_len: Vec<f64> = poly
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect();
    // Turning angle per unit length at each interior vertex.
    let mut kappa = vec![0.0; poly.len()];
    for i in 1..poly.len() - 1 {
        let (a, b, c) = (poly[i - 1], poly[i], poly[i + 1]);
        let (u, v) = ([b[0] - a[0], b[1] - a[1]], [c[0] - b[0], c[1] - b[1]]);
        let angle = (u[0] * v[1] - u[1] * v[0]).atan2(u[0] * v[0] + u[1] * v[1]).abs();
        kappa[i] = angle / (0.5 * (seg_len[i - 1] + seg_len[i])).max(1e-12);
    }
    let mut cum = vec![0.0];
    for (i, len) in seg_len.iter().enumerate() {
        let k = 0.5 * (kappa[i] + kappa[i + 1]);
        cum.push(cum.last().unwrap() + len * (CURVATURE_FLOOR + k).cbrt());
    }
    let total = *cum.last().unwrap();
    let mut seg = 0;
    (0..n)
        .map(|i| {
            let target = total * min_jerk(i as f64 / (n - 1) as f64);
            while seg + 2 < cum.len() && cum[seg + 1] < target {
                seg += 1;
            }
            let span = cum[seg + 1] - cum[seg];
            let u = if span > 0.0 { ((target - cum[seg]) / span).clamp(0.0, 1.0) } else { 0.0 };
            let (a, b) = (poly[seg], poly[seg + 1]);
            vec![a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])]
        })
        .collect()
}

/// One normalized stroke for `digit`, `cfg.n_steps` samples long.
pub fn digit_template(digit: u32, cfg: &DmpConfig) -> Result<Trajectory> {
    let poly = control_polygon(digit).ok_or_else(|| Error::UnknownTask {
        id: digit,
        supported: SUPPORTED_DIGITS.to_vec(),
    })?;
    if cfg.dims != 2 {
        return Err(Error::Config(format!("digit templates are planar; dims = {}", cfg.dims)));
    }
    let mut smooth = poly.to_vec();
    for _ in 0..CHAIKIN_PASSES {
        smooth = chaikin(&smooth);
    }
    let raw = Trajectory::from_points(&resample(&smooth, cfg.n_steps), cfg.dt)?;
    let rec = Normalization::fit([&raw], NormMode::PerDimension)?;
    Ok(rec.apply(&raw)?.with_task(digit))
}

/// One template per requested digit. The strokes are already in the unit
/// square, so the bundle's normalization record is the identity.
pub fn digit_templates(task_ids: &[u32], cfg: &DmpConfig) -> Result<DatasetBundle> {
    let mut bundle = DatasetBundle::empty(*cfg);
    for &id in task_ids {
        bundle.push(Demonstration {
            trajectory: digit_template(id, cfg)?,
            task_id: id,
            source: Source::Template,
        });
    }
    Ok(bundle)
}
