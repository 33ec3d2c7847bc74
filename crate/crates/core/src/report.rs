//! Versioned CSV writers and deterministic SVG plots.
//!
//! Every CSV written by this crate starts with one `# fusionscreen/<kind>/v1`
//! line. Loaders in this crate skip `#` lines. SVG output uses a fixed canvas
//! and six significant digits for every coordinate so that re-runs are
//! byte-identical.

use std::fmt::Write as _;
use std::io::Write;

pub const SCHEMA_VERSION: u32 = 1;

pub fn schema_line(kind: &str) -> String {
    format!("# fusionscreen/{kind}/v{SCHEMA_VERSION}")
}

/// A CSV writer whose first line is the schema header for `kind`.
pub fn csv_writer<W: Write>(mut writer: W, kind: &str) -> std::io::Result<csv::Writer<W>> {
    writeln!(writer, "{}", schema_line(kind))?;
    Ok(csv::WriterBuilder::new().flexible(false).from_writer(writer))
}

/// Shortest round-trip representation, used for CSV cells.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "Inf".into() } else { "-Inf".into() }
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "NA".to_string())
}

/// Six significant digits, trailing zeros trimmed.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return fmt_f64(x);
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).clamp(0, 17) as usize;
    let mut s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;
const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN + (x - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - MARGIN - (y - self.y0) / span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn open_svg(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r) = (MARGIN, WIDTH - MARGIN);
    let (t, b) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let fx = frame.x0 + (frame.x1 - frame.x0) * k as f64 / 4.0;
        let fy = frame.y0 + (frame.y1 - frame.y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            sig6(frame.px(fx)),
            b + 16.0,
            sig6(fx)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            l - 6.0,
            sig6(frame.py(fy) + 4.0),
            sig6(fy)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn polyline(out: &mut String, frame: &Frame, pts: &[(f64, f64)], color: &str) {
    let mut d = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let _ = write!(
            d,
            "{}{} {}",
            if i == 0 { "M" } else { " L" },
            sig6(frame.px(x)),
            sig6(frame.py(y))
        );
    }
    let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Ranked score curve with the kept prefix highlighted.
pub fn elbow_svg(title: &str, scores: &[f64], kept: usize) -> String {
    let mut out = String::new();
    open_svg(&mut out, title);
    let ymax = scores.iter().cloned().fold(0.0_f64, f64::max);
    let ymin = scores.iter().cloned().fold(0.0_f64, f64::min);
    let frame = Frame { x0: 1.0, x1: scores.len().max(2) as f64, y0: ymin, y1: ymax };
    axes(&mut out, &frame, "feature rank", "ranking score");
    let pts: Vec<(f64, f64)> = scores.iter().enumerate().map(|(i, &s)| ((i + 1) as f64, s)).collect();
    polyline(&mut out, &frame, &pts, "#555555");
    for (i, &(x, y)) in pts.iter().enumerate() {
        let fill = if i < kept { "#8ecae6" } else { "#bbbbbb" };
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="4" fill="{fill}" stroke="black"/>"#,
            sig6(frame.px(x)),
            sig6(frame.py(y))
        );
    }
    if kept > 0 {
        let x = frame.px(kept as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{}" x2="{x}" y2="{}" stroke="black" stroke-dasharray="4 3"/>"#,
            MARGIN,
            HEIGHT - MARGIN,
            x = sig6(x)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Label, (fpr, tpr) points and AUC.
pub type RocSeries = (String, Vec<(f64, f64)>, f64);

/// One or more ROC curves; the legend carries each AUC.
pub fn roc_svg(title: &str, curves: &[RocSeries]) -> String {
    let mut out = String::new();
    open_svg(&mut out, title);
    let frame = Frame { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
    axes(&mut out, &frame, "1 - specificity", "sensitivity");
    polyline(&mut out, &frame, &[(0.0, 0.0), (1.0, 1.0)], "#cccccc");
    for (k, (name, pts, auc)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        polyline(&mut out, &frame, pts, color);
        let y = HEIGHT - MARGIN - 20.0 - 18.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{} (AUC {}%)</text>"#,
            WIDTH - MARGIN - 200.0,
            y,
            escape(name),
            sig6(auc * 100.0)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// 2×2 confusion heatmaps laid out side by side, one per named model.
pub fn confusion_svg(title: &str, panels: &[(String, [[u64; 2]; 2])]) -> String {
    let mut out = String::new();
    open_svg(&mut out, title);
    let n = panels.len().max(1) as f64;
    let cell = ((WIDTH - 2.0 * MARGIN) / n / 2.0 - 10.0).min(110.0);
    for (k, (name, m)) in panels.iter().enumerate() {
        let total: u64 = m.iter().flatten().sum();
        let left = MARGIN + k as f64 * (WIDTH - 2.0 * MARGIN) / n;
        let top = MARGIN + 30.0;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            sig6(left + cell),
            top - 10.0,
            escape(name)
        );
        for (r, row) in m.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let frac = if total > 0 { v as f64 / total as f64 } else { 0.0 };
                let shade = (255.0 - 200.0 * frac).round() as u8;
                let x = left + c as f64 * cell;
                let y = top + r as f64 * cell;
                let _ = writeln!(
                    out,
                    r#"<rect x="{}" y="{}" width="{}" height="{}" fill="rgb({shade},{shade},255)" stroke="black"/>"#,
                    sig6(x),
                    sig6(y),
                    sig6(cell),
                    sig6(cell)
                );
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#,
                    sig6(x + cell / 2.0),
                    sig6(y + cell / 2.0 + 4.0)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">rows: true M/B, cols: predicted M/B</text>"#,
            sig6(left + cell),
            sig6(top + 2.0 * cell + 18.0)
        );
    }
    out.push_str("</svg>\n");
    out
}
