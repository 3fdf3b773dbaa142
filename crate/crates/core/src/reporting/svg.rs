//! Deterministic static SVG rendering of plot specs.

use std::fmt::Write;

use super::plot::{PlotKind, PlotSpec};

const W: f64 = 760.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = ["#4477aa", "#ee6677", "#228833", "#ccbb44", "#66ccee", "#aa3377", "#bbbbbb", "#000000"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub fn render_svg(spec: &PlotSpec) -> String {
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let y_max = spec.y_max();
    let y_of = |v: f64| TOP + ph - (v / y_max).clamp(0.0, 1.0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" font-size="14" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, esc(&spec.title));

    for i in 0..=4 {
        let v = y_max * f64::from(i) / 4.0;
        let y = y_of(v);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/>"#, TOP + ph);
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, TOP + ph, LEFT + pw, TOP + ph);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(&spec.x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(&spec.y_label)
    );

    let n = spec.x.len().max(1);
    match spec.kind {
        PlotKind::ModelComparison => {
            let gw = pw / n as f64;
            let k = spec.series.len().max(1);
            let bw = gw * 0.8 / k as f64;
            for (gi, label) in spec.x.iter().enumerate() {
                let gx = LEFT + gi as f64 * gw;
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    gx + gw / 2.0,
                    TOP + ph + 16.0,
                    esc(label)
                );
                for (si, series) in spec.series.iter().enumerate() {
                    if let Some(Some(v)) = series.y.get(gi) {
                        let x = gx + gw * 0.1 + si as f64 * bw;
                        let y = y_of(*v);
                        let _ = writeln!(
                            s,
                            r#"<rect x="{x:.1}" y="{y:.1}" width="{bw:.1}" height="{:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                            TOP + ph - y,
                            color(si),
                            esc(&series.label)
                        );
                    }
                }
            }
        }
        PlotKind::WorkloadVersions | PlotKind::Scaling => {
            let xs = x_positions(spec, pw);
            for (i, label) in spec.x.iter().enumerate() {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    xs[i],
                    TOP + ph + 16.0,
                    esc(label)
                );
            }
            for (si, series) in spec.series.iter().enumerate() {
                let pts: Vec<Option<(f64, f64)>> = series
                    .y
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v.map(|v| (xs[i], y_of(v))))
                    .collect();
                for w in pts.windows(2) {
                    if let (Some(a), Some(b)) = (w[0], w[1]) {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="2"/>"#,
                            a.0,
                            a.1,
                            b.0,
                            b.1,
                            color(si)
                        );
                    }
                }
                for (i, p) in pts.iter().enumerate() {
                    if let Some((x, y)) = p {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="{}"><title>{} {}: {:.4}</title></circle>"#,
                            color(si),
                            esc(&series.label),
                            esc(&spec.x[i]),
                            series.y[i].unwrap_or_default()
                        );
                    }
                }
            }
        }
    }

    for (si, series) in spec.series.iter().enumerate() {
        let y = TOP + 8.0 + si as f64 * 18.0;
        let x = LEFT + pw + 16.0;
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{}"/>"#, y - 9.0, color(si));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 18.0, esc(&series.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Evenly spaced ticks, or logarithmic positions when `log_x` is set.
fn x_positions(spec: &PlotSpec, pw: f64) -> Vec<f64> {
    let n = spec.x.len();
    if n <= 1 {
        return vec![LEFT + pw / 2.0; n];
    }
    let pad = pw * 0.05;
    let span = pw - 2.0 * pad;
    let nums: Option<Vec<f64>> = spec.x.iter().map(|x| x.parse::<f64>().ok().filter(|v| *v > 0.0)).collect();
    match nums {
        Some(v) if spec.log_x => {
            let (lo, hi) = (v[0].log10(), v[n - 1].log10());
            v.iter().map(|x| LEFT + pad + (x.log10() - lo) / (hi - lo) * span).collect()
        }
        _ => (0..n).map(|i| LEFT + pad + i as f64 / (n - 1) as f64 * span).collect(),
    }
}
