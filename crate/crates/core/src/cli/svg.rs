//! Minimal SVG 1.1 writers. Every coordinate is rounded to six significant
//! digits so outputs diff cleanly.

use std::fmt::Write;

use crate::sampling::Sampler;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 24.0;

/// `x` at six significant digits, shortest form.
pub fn num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float");
    format!("{rounded}")
}

pub struct SceneTrack {
    pub agents: Vec<Vec<[f64; 2]>>,
    pub label: usize,
    pub weight: f64,
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <title>{title}</title>\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
        w = num(WIDTH),
        h = num(HEIGHT),
        title = escape(title),
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps world meters onto the canvas with equal axis scales, y up.
struct Frame {
    min: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit<'a>(points: impl Iterator<Item = &'a [f64; 2]>) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if !lo[0].is_finite() {
            return Self { min: [0.0; 2], scale: 1.0 };
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        Self { min: lo, scale: (WIDTH - 2.0 * MARGIN) / span }
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (MARGIN + (p[0] - self.min[0]) * self.scale, HEIGHT - MARGIN - (p[1] - self.min[1]) * self.scale)
    }

    fn points(&self, path: &[[f64; 2]]) -> String {
        path.iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{},{}", num(x), num(y))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Bird's-eye view: lanes in grey, samples colored by mode label with opacity
/// following weight, ground truth dashed black.
pub fn scene_svg(title: &str, map: &[Vec<[f64; 2]>], tracks: &[SceneTrack], truth: &[Vec<[f64; 2]>]) -> String {
    let all = map.iter().flatten().chain(tracks.iter().flat_map(|t| t.agents.iter().flatten())).chain(truth.iter().flatten());
    let frame = Frame::fit(all);
    let mut out = String::new();
    header(&mut out, title);
    for lane in map {
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"14\"/>",
            frame.points(lane)
        );
    }
    let top = tracks.iter().map(|t| t.weight).fold(0.0f64, f64::max);
    // lightest first so heavy samples stay on top
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| tracks[a].weight.total_cmp(&tracks[b].weight).then(b.cmp(&a)));
    for k in order {
        let t = &tracks[k];
        let opacity = if top > 0.0 { 0.15 + 0.85 * t.weight / top } else { 1.0 };
        for path in &t.agents {
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" stroke-opacity=\"{}\"><title>sample {k} mode {}</title></polyline>",
                frame.points(path),
                PALETTE[t.label % PALETTE.len()],
                num(opacity),
                t.label
            );
        }
    }
    for path in truth {
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" stroke-dasharray=\"4 3\"/>",
            frame.points(path)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Modes covered against number of samples, one line per sampler.
pub fn coverage_svg(counts: &[usize], curves: &[(Sampler, Vec<usize>)], n_modes: usize) -> String {
    let mut out = String::new();
    header(&mut out, "mode coverage against sample count");
    let x_max = counts.last().copied().unwrap_or(1).max(1) as f64;
    let y_max = n_modes.max(1) as f64;
    let px = |c: f64| MARGIN * 2.0 + (c - 1.0).max(0.0) / (x_max - 1.0).max(1.0) * (WIDTH - 3.0 * MARGIN);
    let py = |m: f64| HEIGHT - MARGIN * 2.0 - m / y_max * (HEIGHT - 3.0 * MARGIN);
    let _ = writeln!(
        out,
        "<polyline points=\"{},{} {},{} {},{}\" fill=\"none\" stroke=\"black\"/>",
        num(px(1.0)),
        num(py(y_max)),
        num(px(1.0)),
        num(py(0.0)),
        num(px(x_max)),
        num(py(0.0))
    );
    for m in 0..=n_modes {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{m}</text>",
            num(px(1.0) - 6.0),
            num(py(m as f64) + 4.0)
        );
    }
    for &c in counts {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{c}</text>",
            num(px(c as f64)),
            num(py(0.0) + 16.0)
        );
    }
    for (k, (sampler, ys)) in curves.iter().enumerate() {
        let pts: Vec<String> = counts
            .iter()
            .zip(ys)
            .map(|(&c, &y)| format!("{},{}", num(px(c as f64)), num(py(y as f64))))
            .collect();
        let color = PALETTE[k % PALETTE.len()];
        let name = format!("{sampler:?}").to_lowercase();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"><title>{name}</title></polyline>",
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{name}</text>",
            num(WIDTH - MARGIN * 3.0),
            num(MARGIN + 14.0 * (k as f64 + 1.0))
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(num(123.456789), "123.457");
        assert_eq!(num(-0.000123456789), "-0.000123457");
        assert_eq!(num(-0.0), "0");
        assert_eq!(num(24.0), "24");
    }
}
