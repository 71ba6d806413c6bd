//! SVG charts and their plain-text fallbacks.

use std::fmt::Write as _;

use polarimeter_core::quantum::BASIS_LABELS;
use polarimeter_core::DensityMatrix;

const CELL: f64 = 56.0;
const PANEL_GAP: f64 = 60.0;
const MARGIN: f64 = 40.0;

fn parts(rho: &DensityMatrix) -> [[[f64; 4]; 4]; 2] {
    let m = rho.matrix();
    let mut out = [[[0.0; 4]; 4]; 2];
    for i in 0..4 {
        for j in 0..4 {
            out[0][i][j] = m[(i, j)].re;
            out[1][i][j] = m[(i, j)].im;
        }
    }
    out
}

/// Vertical scale: at least ±0.5, widened to the largest entry.
fn z_scale(values: &[[[f64; 4]; 4]; 2]) -> f64 {
    values
        .iter()
        .flatten()
        .flatten()
        .fold(0.5_f64, |acc, v| acc.max(v.abs()))
}

/// Two 4×4 bar grids, `Re ρ` and `Im ρ`, one bar per entry drawn from the
/// cell's mid-line.
pub fn density_svg(rho: &DensityMatrix, title: &str) -> String {
    let values = parts(rho);
    let scale = z_scale(&values);
    let panel = 4.0 * CELL;
    let width = 2.0 * panel + PANEL_GAP + 2.0 * MARGIN;
    let height = panel + 2.0 * MARGIN + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    for (p, name) in ["Re ρ", "Im ρ"].iter().enumerate() {
        let x0 = MARGIN + p as f64 * (panel + PANEL_GAP);
        let y0 = MARGIN + 20.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#,
            x0 + panel / 2.0,
            y0 - 8.0
        );
        for k in 0..4 {
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="middle" fill="#555">{}</text>"##,
                x0 + (k as f64 + 0.5) * CELL,
                y0 + panel + 16.0,
                BASIS_LABELS[k]
            );
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" text-anchor="end" fill="#555">{}</text>"##,
                x0 - 4.0,
                y0 + (k as f64 + 0.5) * CELL + 4.0,
                BASIS_LABELS[k]
            );
        }
        for i in 0..4 {
            for j in 0..4 {
                let cx = x0 + j as f64 * CELL;
                let cy = y0 + i as f64 * CELL;
                let mid = cy + CELL / 2.0;
                let v = values[p][i][j];
                let h = (v.abs() / scale) * (CELL / 2.0 - 3.0);
                let (top, fill) = if v >= 0.0 {
                    (mid - h, "#3b6fb6")
                } else {
                    (mid, "#c0504d")
                };
                let _ = writeln!(
                    s,
                    r##"<rect x="{cx}" y="{cy}" width="{CELL}" height="{CELL}" fill="none" stroke="#ddd"/>"##
                );
                let _ = writeln!(
                    s,
                    r##"<line x1="{cx}" y1="{mid}" x2="{}" y2="{mid}" stroke="#999" stroke-width="0.5"/>"##,
                    cx + CELL
                );
                let _ = writeln!(
                    s,
                    r#"<rect x="{}" y="{top:.3}" width="{}" height="{h:.3}" fill="{fill}"><title>{}{} {v:+.4}</title></rect>"#,
                    cx + CELL * 0.3,
                    CELL * 0.4,
                    BASIS_LABELS[i],
                    BASIS_LABELS[j]
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r##"<text x="{MARGIN}" y="{}" fill="#555">bar half-height = {scale:.2}</text>"##,
        height - 8.0
    );
    s.push_str("</svg>\n");
    s
}

/// Text rendering of `Re ρ` and `Im ρ`, one signed bar per entry.
pub fn density_ascii(rho: &DensityMatrix) -> String {
    const WIDTH: usize = 6;
    let values = parts(rho);
    let scale = z_scale(&values);
    let mut s = String::new();
    for (p, name) in ["Re(rho)", "Im(rho)"].iter().enumerate() {
        let _ = write!(s, "{name:<8}");
        for label in BASIS_LABELS {
            let _ = write!(s, " {label:^w$}", w = 2 * WIDTH + 7);
        }
        s.push('\n');
        for i in 0..4 {
            let _ = write!(s, "  {:<6}", BASIS_LABELS[i]);
            for j in 0..4 {
                let v = values[p][i][j];
                let n = ((v.abs() / scale) * WIDTH as f64).round() as usize;
                let (neg, pos) = if v < 0.0 {
                    (format!("{:>WIDTH$}", "-".repeat(n)), " ".repeat(WIDTH))
                } else {
                    (" ".repeat(WIDTH), format!("{:<WIDTH$}", "#".repeat(n)))
                };
                let _ = write!(s, " {neg}|{pos}{v:+.3}");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

/// One curve of a fidelity plot.
pub struct Series {
    pub label: String,
    /// `(x, mean, standard error)`.
    pub points: Vec<(f64, f64, f64)>,
}

/// Mean fidelity against `x` with ±1 standard error bars.
pub fn curves_svg(series: &[Series], x_label: &str, log_x: bool, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 150.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let colors = ["#3b6fb6", "#c0504d", "#4f9a4f", "#8064a2", "#d08a2d", "#333"];
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let all: Vec<&(f64, f64, f64)> = series.iter().flat_map(|s| &s.points).collect();
    let (mut x_min, mut x_max) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(tx(p.0)), b.max(tx(p.0)))
        });
    let (mut y_min, mut y_max) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min(p.1 - p.2), b.max(p.1 + p.2))
    });
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    y_max = y_max.min(1.0);
    if y_max - y_min < 1e-3 {
        y_min -= 5e-4;
        y_max += 5e-4;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);
    let px = |x: f64| L + (tx(x) - x_min) / (x_max - x_min) * (W - L - R);
    let py = |y: f64| T + (y_max - y) / (y_max - y_min) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (L + W - R) / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - L - R,
        H - T - B
    );
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{y:.4}</text>"#,
            L - 6.0,
            py(y) + 4.0
        );
    }
    for k in 0..=4 {
        let xt = x_min + (x_max - x_min) * k as f64 / 4.0;
        let x = if log_x { 10f64.powf(xt) } else { xt };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            px(x),
            H - B + 18.0,
            compact(x)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (L + W - R) / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">mean fidelity</text>"#,
        (T + H - B) / 2.0,
        (T + H - B) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = colors[k % colors.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
        for p in &ser.points {
            let x = px(p.0);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#,
                py(p.1 - p.2),
                py(p.1 + p.2)
            );
            let _ = writeln!(
                s,
                r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                py(p.1)
            );
        }
        let ly = T + 10.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            W - R + 12.0,
            W - R + 32.0,
            W - R + 38.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One line per point with a bar spanning the plotted fidelity range.
pub fn curves_ascii(series: &[Series], x_name: &str) -> String {
    const WIDTH: usize = 40;
    let all: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min).min(0.999);
    let hi = 1.0;
    let mut s = String::new();
    for ser in series {
        let _ = writeln!(s, "{}", ser.label);
        for &(x, mean, se) in &ser.points {
            let n = (((mean - lo) / (hi - lo)).clamp(0.0, 1.0) * WIDTH as f64).round() as usize;
            let _ = writeln!(
                s,
                "  {x_name}={:<10} {mean:.4} ±{se:.4} |{:<WIDTH$}|",
                compact(x),
                "#".repeat(n)
            );
        }
    }
    let _ = writeln!(s, "  (bar spans {lo:.4} .. {hi:.4})");
    s
}

fn compact(x: f64) -> String {
    if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-2) {
        format!("{x:.2e}")
    } else {
        let t = format!("{x:.1}");
        t.strip_suffix(".0").map(str::to_string).unwrap_or(t)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use polarimeter_core::PureState2Q;

    #[test]
    fn ascii_marks_corner_entries_of_phi_plus() {
        let rho = DensityMatrix::from_pure(&PureState2Q::phi_plus());
        let text = density_ascii(&rho);
        let hh = text.lines().nth(1).unwrap();
        assert_eq!(hh.matches("+0.500").count(), 2);
        assert_eq!(hh.matches("+0.000").count(), 2);
        assert!(hh.contains("|######"));
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let rho = DensityMatrix::from_pure(&PureState2Q::hh());
        let svg = density_svg(&rho, "a < b");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<title>").count(), 32);
        let plot = curves_svg(
            &[Series {
                label: "lls".into(),
                points: vec![(100.0, 0.8, 0.01), (1000.0, 0.9, 0.01)],
            }],
            "N",
            true,
            "t",
        );
        assert_eq!(plot.matches("<circle").count(), 2);
        assert!(!plot.contains("NaN"));
    }
}
