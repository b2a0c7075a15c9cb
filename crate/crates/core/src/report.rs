//! Minimal SVG charts for batch reports.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

pub fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn axes(s: &mut String, y_max: f64) {
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN / 2.0, MARGIN);
    let _ = writeln!(s, "<line class=\"axis\" x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line class=\"axis\" x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>");
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let y = y0 - (y0 - y1) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            x0 - 4.0,
            y + 3.0,
            trim_number(v)
        );
    }
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".into() } else { s.to_string() }
}

/// Vertical bars, one per label. Each bar is a `<rect class="bar">`.
pub fn bar_chart(title: &str, labels: &[String], values: &[f64]) -> String {
    let y_max = values.iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut s = open(title);
    axes(&mut s, y_max);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = plot_w / values.len().max(1) as f64;
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let h = plot_h * v / y_max;
        let x = MARGIN + i as f64 * slot + slot * 0.1;
        let _ = writeln!(
            s,
            "<rect class=\"bar\" x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"><title>{}: {}</title></rect>",
            HEIGHT - MARGIN - h,
            slot * 0.8,
            PALETTE[0],
            escape(label),
            trim_number(*v)
        );
        if values.len() <= 12 {
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"9\">{}</text>",
                x + slot * 0.4,
                HEIGHT - MARGIN + 14.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Polyline over `(x, y)` points with one `<circle class="point">` each and
/// an optional dashed reference level.
pub fn line_chart(title: &str, points: &[(f64, f64)], reference: Option<f64>) -> String {
    let x_max = points.iter().map(|p| p.0).fold(1.0, f64::max);
    let y_max = points
        .iter()
        .map(|p| p.1)
        .chain(reference)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = open(title);
    axes(&mut s, y_max);
    let sx = |x: f64| MARGIN + (WIDTH - 1.5 * MARGIN) * x / x_max;
    let sy = |y: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * y / y_max;
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>", PALETTE[1], path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(s, "<circle class=\"point\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.5\" fill=\"{}\"/>", sx(x), sy(y), PALETTE[1]);
    }
    if let Some(r) = reference {
        let _ = writeln!(
            s,
            "<line class=\"reference\" x1=\"{MARGIN}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
            sy(r),
            WIDTH - MARGIN / 2.0,
            sy(r)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter plot colored by group index, with a legend.
pub fn scatter(title: &str, points: &[(f64, f64, usize)], groups: &[String]) -> String {
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (xw, yw) = (span(x_lo, x_hi), span(y_lo, y_hi));
    let plot_w = WIDTH - 2.0 * MARGIN - 120.0;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let mut s = open(title);
    for &(x, y, g) in points {
        let _ = writeln!(
            s,
            "<circle class=\"point\" cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>",
            MARGIN + plot_w * (x - x_lo) / xw,
            HEIGHT - MARGIN - plot_h * (y - y_lo) / yw,
            PALETTE[g % PALETTE.len()]
        );
    }
    for (i, name) in groups.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - 110.0;
        let _ = writeln!(s, "<circle cx=\"{lx}\" cy=\"{y}\" r=\"4\" fill=\"{}\"/>", PALETTE[i % PALETTE.len()]);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>",
            lx + 8.0,
            y + 3.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}
