//! Minimal SVG line plots.

use std::fmt::Write as _;

use dmpvae::dataset::CsvStamp;

const SIZE: f64 = 480.0;
const PAD: f64 = 24.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub points: Vec<[f64; 2]>,
    /// Faint, thin line (e.g. augmented copies under their source).
    pub faint: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Plot {
    pub series: Vec<Series>,
    pub goals: Vec<[f64; 2]>,
    pub vias: Vec<[f64; 2]>,
    /// Squares drawn with the given half-extent.
    pub boxes: Vec<([f64; 2], f64)>,
}

impl Plot {
    pub fn line(&mut self, points: Vec<[f64; 2]>) -> &mut Self {
        self.series.push(Series { points, faint: false });
        self
    }

    fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let boxes = self.boxes.iter().flat_map(|(c, h)| [[c[0] - h, c[1] - h], [c[0] + h, c[1] + h]]);
        let all = self.series.iter().flat_map(|s| s.points.iter().copied());
        for p in all.chain(self.goals.iter().copied()).chain(self.vias.iter().copied()).chain(boxes) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return ([0.0, 0.0], [1.0, 1.0]);
        }
        // Equal scale on both axes.
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        ([mid[0] - span / 2.0, mid[1] - span / 2.0], [mid[0] + span / 2.0, mid[1] + span / 2.0])
    }

    pub fn to_svg(&self, stamp: Option<&CsvStamp>) -> String {
        let (lo, hi) = self.bounds();
        let inner = SIZE - 2.0 * PAD;
        let map = |p: [f64; 2]| {
            (
                PAD + (p[0] - lo[0]) / (hi[0] - lo[0]) * inner,
                SIZE - PAD - (p[1] - lo[1]) / (hi[1] - lo[1]) * inner,
            )
        };
        let mut s = String::new();
        writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#).unwrap();
        if let Some(st) = stamp {
            writeln!(s, "<!-- seed={} config_hash={} -->", st.seed, st.config_hash).unwrap();
        }
        writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
        for (c, h) in &self.boxes {
            let (x0, y0) = map([c[0] - h, c[1] + h]);
            let (x1, y1) = map([c[0] + h, c[1] - h]);
            writeln!(
                s,
                r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#4a90d9" fill-opacity="0.5"/>"##,
                x1 - x0,
                y1 - y0
            )
            .unwrap();
        }
        let mut colour = 0;
        for series in &self.series {
            let pts: Vec<String> = series
                .points
                .iter()
                .map(|&p| {
                    let (x, y) = map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let (stroke, width, opacity) = if series.faint {
                ("#888888", 0.6, 0.35)
            } else {
                colour += 1;
                (PALETTE[(colour - 1) % PALETTE.len()], 1.8, 1.0)
            };
            writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
                pts.join(" ")
            )
            .unwrap();
            if let Some(&first) = series.points.first().filter(|_| !series.faint) {
                let (x, y) = map(first);
                writeln!(s, r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#000000"/>"##).unwrap();
            }
        }
        for &g in &self.goals {
            let (x, y) = map(g);
            writeln!(s, r##"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="#2ca02c"/>"##, x - 4.0, y - 4.0).unwrap();
        }
        for &v in &self.vias {
            let (x, y) = map(v);
            writeln!(
                s,
                r##"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="#d62728" stroke-width="2"/>"##,
                x - 5.0,
                y - 5.0,
                x + 5.0,
                y + 5.0,
                x - 5.0,
                y + 5.0,
                x + 5.0,
                y - 5.0
            )
            .unwrap();
        }
        s.push_str("</svg>\n");
        s
    }
}
