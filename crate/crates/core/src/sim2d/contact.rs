//! Quasi-static pushing of a round puck by a point effector.

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sub(a: &[f64], b: &[f64]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Distance from `c` to the segment `a`-`b`.
pub fn segment_distance(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 > 0.0 { (dot(sub(c, a), ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let p = [a[0] + t * ab[0], a[1] + t * ab[1]];
    dot(sub(c, &p), sub(c, &p)).sqrt()
}

/// New puck centre after the effector moves from `from` to `to`.
///
/// If the swept segment comes within `radius` of the centre the puck slides
/// along the motion direction until the effector sits on its rim, ahead of
/// the effector. The slide never exceeds the effector's own displacement.
/// Returns `None` when there is no contact.
pub fn push_step(from: &[f64], to: &[f64], center: &[f64], radius: f64) -> Option<[f64; 2]> {
    let step = sub(to, from);
    let len = dot(step, step).sqrt();
    if len == 0.0 || segment_distance(from, to, center) >= radius {
        return None;
    }
    let u = [step[0] / len, step[1] / len];
    let w = sub(to, center);
    let along = dot(w, u);
    let disc = along * along - dot(w, w) + radius * radius;
    if disc < 0.0 {
        return None;
    }
    let slide = (along + disc.sqrt()).min(len);
    if slide <= 0.0 {
        return None;
    }
    Some([center[0] + slide * u[0], center[1] + slide * u[1]])
}
