use crate::dmp::Trajectory;
use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Index and distance of the trajectory sample nearest to `point`.
pub fn nearest_sample(traj: &Trajectory, point: &[f64]) -> (usize, f64) {
    traj.points()
        .map(|p| dist(p, point))
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best })
}

/// Minimum Euclidean distance from `point` to any trajectory sample.
pub fn trajectory_distance(traj: &Trajectory, point: &[f64]) -> f64 {
    nearest_sample(traj, point).1
}

/// Mean per-point Euclidean distance between two equal-length trajectories.
pub fn shape_error(initial: &Trajectory, tuned: &Trajectory) -> Result<f64> {
    if initial.len() != tuned.len() || initial.dims() != tuned.dims() {
        return Err(Error::shape(
            "shape_error",
            format!("{} x {}", initial.len(), initial.dims()),
            format!("{} x {}", tuned.len(), tuned.dims()),
        ));
    }
    let total: f64 = initial.points().zip(tuned.points()).map(|(a, b)| dist(a, b)).sum();
    Ok(total / initial.len() as f64)
}

/// Symmetric Hausdorff distance between the two sample sets.
pub fn hausdorff(a: &Trajectory, b: &Trajectory) -> f64 {
    let directed = |x: &Trajectory, y: &Trajectory| {
        x.points().map(|p| trajectory_distance(y, p)).fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// `template` mapped per dimension so its first and last points land on
/// those of `frame`. Dimensions where either span is negligible are only
/// translated.
pub fn align_to(template: &Trajectory, frame: &Trajectory) -> Result<Trajectory> {
    let (t0, t1) = (template.first(), template.last());
    let (f0, f1) = (frame.first(), frame.last());
    let scale: Vec<f64> = (0..template.dims())
        .map(|k| {
            let (ts, fs) = (t1[k] - t0[k], f1[k] - f0[k]);
            if ts.abs() < 1e-6 || fs.abs() < 1e-6 {
                1.0
            } else {
                fs / ts
            }
        })
        .collect();
    template.map_points(|p| (0..p.len()).map(|k| f0[k] + (p[k] - t0[k]) * scale[k]).collect())
}

/// Label of the template nearest to `traj` in Hausdorff distance after each
/// template is aligned to the trajectory's start and end.
pub fn classify(traj: &Trajectory, templates: &[(u32, Trajectory)]) -> Result<(u32, f64)> {
    let mut best = None;
    for (id, t) in templates {
        let d = hausdorff(traj, &align_to(t, traj)?);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((*id, d));
        }
    }
    best.ok_or_else(|| Error::Data("no templates to classify against".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(points: &[[f64; 2]]) -> Trajectory {
        let v: Vec<Vec<f64>> = points.iter().map(|p| p.to_vec()).collect();
        Trajectory::from_points(&v, 0.01).unwrap()
    }

    #[test]
    fn distance_on_and_off_the_path() {
        let square = traj(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(trajectory_distance(&square, &[1.0, 1.0]), 0.0);
        // Samples are the corners; the centre is sqrt(0.5) from each.
        assert!((trajectory_distance(&square, &[0.5, 0.5]) - 0.5f64.sqrt()).abs() < 1e-15);
        let dense: Vec<[f64; 2]> = (0..=400)
            .map(|i| {
                let s = i as f64 / 100.0;
                match i / 100 {
                    0 => [s, 0.0],
                    1 => [1.0, s - 1.0],
                    2 => [3.0 - s, 1.0],
                    _ => [0.0, 4.0 - s],
                }
            })
            .collect();
        assert!((trajectory_distance(&traj(&dense), &[0.5, 0.5]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn discrete_min_is_within_one_spacing_of_polyline_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 2]> = (0..30).map(|_| [rng.gen(), rng.gen()]).collect();
        let coarse = traj(&pts);
        let spacing = pts.windows(2).map(|w| dist(&w[0], &w[1])).fold(0.0, f64::max);
        let mut dense = Vec::new();
        for w in pts.windows(2) {
            for j in 0..200 {
                let a = j as f64 / 200.0;
                dense.push([w[0][0] + a * (w[1][0] - w[0][0]), w[0][1] + a * (w[1][1] - w[0][1])]);
            }
        }
        dense.push(pts[29]);
        let dense = traj(&dense);
        for _ in 0..50 {
            let q = [rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
            let (c, d) = (trajectory_distance(&coarse, &q), trajectory_distance(&dense, &q));
            assert!(c >= d - 1e-12 && c - d <= spacing, "{c} {d} {spacing}");
        }
    }

    #[test]
    fn shape_error_cases() {
        let a = traj(&[[0.0, 0.0], [0.3, 0.5], [1.0, 1.0]]);
        assert_eq!(shape_error(&a, &a).unwrap(), 0.0);
        let b = a.map_points(|p| vec![p[0] + 0.01, p[1]]).unwrap();
        assert!((shape_error(&a, &b).unwrap() - 0.01).abs() < 1e-15);
        let short = traj(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(shape_error(&a, &short), Err(Error::Shape { .. })));
    }

    #[test]
    fn hausdorff_and_alignment() {
        let a = traj(&[[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]);
        assert_eq!(hausdorff(&a, &a), 0.0);
        let b = traj(&[[0.0, 1.0], [0.5, 0.7], [1.0, 0.0]]);
        assert!((hausdorff(&a, &b) - 0.2).abs() < 1e-12);
        let frame = traj(&[[2.0, 3.0], [9.0, 9.0], [4.0, 2.0]]);
        let m = align_to(&a, &frame).unwrap();
        assert_eq!(m.to_points(), vec![vec![2.0, 3.0], vec![3.0, 2.5], vec![4.0, 2.0]]);
    }

    #[test]
    fn classify_picks_nearest_template() {
        let line = traj(&[[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]]);
        let bent = traj(&[[0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]);
        let templates = vec![(1, line.clone()), (7, bent.clone())];
        let probe = traj(&[[0.0, 0.5], [0.45, 0.3], [0.5, 0.0]]);
        assert_eq!(classify(&probe, &templates).unwrap().0, 1);
        let probe = traj(&[[0.0, 0.5], [0.48, 0.5], [0.5, 0.0]]);
        assert_eq!(classify(&probe, &templates).unwrap().0, 7);
        assert!(classify(&probe, &[]).is_err());
    }
}
