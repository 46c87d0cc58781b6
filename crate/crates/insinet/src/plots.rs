//! Minimal hand-rolled SVG line charts for the benchmark reports. No
//! plotting dependency: each chart is a polyline with axis ticks and labels.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// One named series of (x label, y value) points.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(String, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 30.0;
const MT: f64 = 50.0;
const MB: f64 = 60.0;
const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Renders series sharing one categorical x-axis into an SVG file.
pub fn line_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        bail!("cannot plot an empty report");
    }
    let n = series[0].points.len();
    if series.iter().any(|s| s.points.len() != n) {
        bail!("all series must share the x axis");
    }
    let ymin = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(f64::INFINITY, f64::min);
    let ymax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(f64::NEG_INFINITY, f64::max);
    if !ymin.is_finite() || !ymax.is_finite() {
        bail!("non-finite values in plot data");
    }
    let pad = ((ymax - ymin) * 0.1).max(1e-6);
    let (lo, hi) = (ymin - pad, ymax + pad);
    let px = |i: usize| {
        if n == 1 {
            ML + (W - ML - MR) / 2.0
        } else {
            ML + (W - ML - MR) * i as f64 / (n - 1) as f64
        }
    };
    let py = |v: f64| H - MB - (H - MT - MB) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{}</text>\n",
        W / 2.0,
        escape(title)
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR
    ));
    // y ticks
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = py(v);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ML}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3}</text>\n",
            ML - 5.0,
            ML - 8.0,
            y + 4.0,
            v
        ));
    }
    // x ticks
    for (i, (label, _)) in series[0].points.iter().enumerate() {
        let x = px(i);
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{}\" x2=\"{x}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            H - MB,
            H - MB + 5.0,
            H - MB + 20.0,
            escape(label)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" transform=\"rotate(-90 18 {0})\" text-anchor=\"middle\">{}</text>\n",
        (MT + H - MB) / 2.0,
        escape(y_label)
    ));
    // series
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.2},{:.2}", px(i), py(p.1)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            pts.join(" ")
        ));
        for (i, p) in s.points.iter().enumerate() {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                px(i),
                py(p.1)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            W - MR - 150.0,
            MT + 16.0 * si as f64,
            escape(&s.name)
        ));
    }
    svg.push_str("</svg>\n");
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, svg).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_valid_svg_with_ticks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let series = vec![Series {
            name: "f1".into(),
            points: vec![
                ("outer".into(), 0.9),
                ("middle".into(), 0.8),
                ("inner".into(), 0.7),
                ("core".into(), 0.6),
            ],
        }];
        line_chart(&path, "ring", "F1", &series).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.contains("polyline"));
        assert_eq!(text.matches(">outer<").count(), 1);
        assert_eq!(text.matches("<circle").count(), 4);
    }

    #[test]
    fn empty_report_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(line_chart(&dir.path().join("e.svg"), "t", "y", &[]).is_err());
        let empty = vec![Series { name: "a".into(), points: vec![] }];
        assert!(line_chart(&dir.path().join("e2.svg"), "t", "y", &empty).is_err());
    }
}
