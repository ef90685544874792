//! Minimal SVG renderings of the analysis outputs.

use ndarray::Array2;
use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 720.0;
const H: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
    /// Labelled points drawn as crosses.
    pub markers: Vec<(f64, f64, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1e-12) {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

impl LinePlot {
    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.log10() } else { x };
        let all_x = self.series.iter().flat_map(|s| s.x.iter().map(|&x| tx(x)));
        let marker_x = self.markers.iter().map(|m| tx(m.0));
        let (x0, x1) = range(all_x.chain(marker_x));
        let all_y = self.series.iter().flat_map(|s| s.y.iter().copied());
        let (y0, y1) = range(all_y.chain(self.markers.iter().map(|m| m.1)));
        let pw = W - MARGIN_L - MARGIN_R;
        let ph = H - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (tx(x) - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

        let mut out = String::new();
        header(&mut out, W, H, &self.title);
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let gx = MARGIN_L + f * pw;
            let gy = MARGIN_T + (1.0 - f) * ph;
            let xt = if self.log_x { format!("1e{xv:.1}") } else { format!("{xv:.3}") };
            let _ = writeln!(
                out,
                r##"<line x1="{gx:.1}" y1="{MARGIN_T}" x2="{gx:.1}" y2="{:.1}" stroke="#ddd"/><text x="{gx:.1}" y="{:.1}" text-anchor="middle">{xt}</text>"##,
                MARGIN_T + ph,
                MARGIN_T + ph + 16.0
            );
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_L}" y1="{gy:.1}" x2="{:.1}" y2="{gy:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.4}</text>"##,
                MARGIN_L + pw,
                MARGIN_L - 4.0,
                gy + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<String> = s
                .x
                .iter()
                .zip(&s.y)
                .filter(|(x, y)| tx(**x).is_finite() && y.is_finite())
                .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                pts.join(" ")
            );
            if k < 24 {
                let ly = MARGIN_T + 14.0 * k as f64 + 6.0;
                let lx = W - MARGIN_R + 10.0;
                let _ = writeln!(
                    out,
                    r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                    lx + 18.0,
                    lx + 22.0,
                    ly + 4.0,
                    escape(&s.name)
                );
            }
        }
        for (x, y, label) in &self.markers {
            let (cx, cy) = (px(*x), py(*y));
            let _ = writeln!(
                out,
                r#"<path d="M{:.1},{:.1}L{:.1},{:.1}M{:.1},{:.1}L{:.1},{:.1}" stroke="red" stroke-width="2"/><text x="{:.1}" y="{:.1}" fill="red">{}</text>"#,
                cx - 5.0,
                cy - 5.0,
                cx + 5.0,
                cy + 5.0,
                cx - 5.0,
                cy + 5.0,
                cx + 5.0,
                cy - 5.0,
                cx + 7.0,
                cy - 7.0,
                escape(label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Phasor rays of unit-normalized magnitude at the given angles.
pub fn compass(title: &str, entries: &[(String, f64, f64)]) -> String {
    let size = 460.0;
    let (cx, cy, r) = (size / 2.0, size / 2.0 + 10.0, size / 2.0 - 50.0);
    let mut out = String::new();
    header(&mut out, size, size + 20.0, title);
    let _ = writeln!(out, r##"<circle cx="{cx}" cy="{cy}" r="{r}" fill="none" stroke="#bbb"/>"##);
    let _ = writeln!(
        out,
        r##"<path d="M{},{cy}H{}M{cx},{}V{}" stroke="#bbb"/>"##,
        cx - r,
        cx + r,
        cy - r,
        cy + r
    );
    let peak = entries.iter().map(|e| e.1).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    for (k, (name, mag, angle_deg)) in entries.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let a = angle_deg.to_radians();
        let len = r * mag / peak;
        let (ex, ey) = (cx + len * a.cos(), cy - len * a.sin());
        let _ = writeln!(
            out,
            r#"<line x1="{cx}" y1="{cy}" x2="{ex:.1}" y2="{ey:.1}" stroke="{color}" stroke-width="2"/>"#
        );
        if mag / peak > 0.2 {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" fill="{color}" font-size="10">{}</text>"#,
                ex + 3.0,
                ey - 3.0,
                escape(name)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Grey-scale map of values in [0, 1], rows labelled on the left.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &Array2<f64>) -> String {
    let cell_w = (600.0 / cols.len().max(1) as f64).clamp(4.0, 24.0);
    let cell_h = (900.0 / rows.len().max(1) as f64).clamp(4.0, 14.0);
    let (left, top) = (110.0, 60.0);
    let w = left + cell_w * cols.len() as f64 + 20.0;
    let h = top + cell_h * rows.len() as f64 + 20.0;
    let mut out = String::new();
    header(&mut out, w.max(300.0), h, title);
    for (i, row) in rows.iter().enumerate() {
        let y = top + cell_h * i as f64;
        if cell_h >= 8.0 {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="{:.0}">{}</text>"#,
                left - 4.0,
                y + cell_h * 0.8,
                (cell_h * 0.8).min(11.0),
                escape(row)
            );
        }
        for j in 0..cols.len() {
            let v = values[[i, j]].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let x = left + cell_w * j as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell_w:.1}" height="{cell_h:.1}" fill="rgb({shade},{shade},255)"/>"#
            );
        }
    }
    for (j, col) in cols.iter().enumerate() {
        let x = left + cell_w * (j as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" font-size="9" transform="rotate(-60 {x:.1} {:.1})">{}</text>"#,
            top - 4.0,
            top - 4.0,
            escape(col)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, content: &str) -> std::io::Result<()> {
    std::fs::write(path, content)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_plot_has_one_polyline_per_series() {
        let p = LinePlot {
            title: "a & b".into(),
            series: vec![
                Series { name: "s1".into(), x: vec![0.0, 1.0], y: vec![0.0, 1.0] },
                Series { name: "s2".into(), x: vec![0.0, 1.0], y: vec![1.0, 1.0] },
            ],
            markers: vec![(-1.0, 0.0, "(-1, 0)".into())],
            ..Default::default()
        };
        let s = p.render();
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("a &amp; b") && s.trim_end().ends_with("</svg>"));
        assert!(!s.contains("NaN"));
    }

    #[test]
    fn constant_and_log_axes_stay_finite() {
        let p = LinePlot {
            log_x: true,
            series: vec![Series { name: "c".into(), x: vec![0.1, 10.0], y: vec![2.0, 2.0] }],
            ..Default::default()
        };
        assert!(!p.render().contains("NaN"));
    }

    #[test]
    fn heatmap_and_compass_render() {
        let h = heatmap("p", &["a".into(), "b".into()], &["m1".into()], &array![[1.0], [0.0]]);
        assert_eq!(h.matches("<rect").count(), 3);
        assert!(h.contains("rgb(0,0,255)") && h.contains("rgb(255,255,255)"));
        let c = compass("m", &[("x".into(), 1.0, 0.0), ("y".into(), 0.5, 180.0)]);
        assert_eq!(c.matches("stroke-width=\"2\"").count(), 2);
    }
}
