//! Static SVG figures. Every number is printed with a fixed number of
//! decimals and nothing time-dependent is emitted, so equal inputs give
//! byte-identical files.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width_px: u32,
    pub height_px: u32,
    pub stroke_width: f64,
    pub x_label: String,
    pub y_label: String,
    /// Sample indices drawn as dashed vertical lines.
    pub boundaries: Vec<usize>,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width_px: 960,
            height_px: 320,
            stroke_width: 1.0,
            x_label: "sample".into(),
            y_label: "amplitude".into(),
            boundaries: Vec::new(),
        }
    }
}

const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 10.0;
const MARGIN_T: f64 = 10.0;
const MARGIN_B: f64 = 40.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Fixed two-decimal formatting; `-0.00` is folded to `0.00`.
fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn header(out: &mut String, w: u32, h: u32) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
}

/// Line plot of `samples`. Traces wider than the plot area are reduced to a
/// min/max pair per pixel column so peaks survive.
pub fn trace_svg(samples: &[f32], style: &PlotStyle) -> String {
    let (w, h) = (f64::from(style.width_px), f64::from(style.height_px));
    let pw = (w - MARGIN_L - MARGIN_R).max(1.0);
    let ph = (h - MARGIN_T - MARGIN_B).max(1.0);
    let len = samples.len().max(1);
    let (mut lo, mut hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(f64::from(v)), b.max(f64::from(v)))
        });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let x_of = |i: f64| MARGIN_L + pw * i / len.saturating_sub(1).max(1) as f64;
    let y_of = |v: f64| MARGIN_T + ph * (hi - v) / (hi - lo);

    let mut pts: Vec<(f64, f64)> = Vec::new();
    let cols = pw as usize;
    if samples.len() <= cols * 2 {
        pts.extend(
            samples
                .iter()
                .enumerate()
                .map(|(i, &v)| (x_of(i as f64), y_of(f64::from(v)))),
        );
    } else {
        for c in 0..cols {
            let a = c * samples.len() / cols;
            let b = ((c + 1) * samples.len() / cols).max(a + 1);
            let chunk = &samples[a..b];
            let (mut imin, mut imax) = (0, 0);
            for (j, &v) in chunk.iter().enumerate() {
                if v < chunk[imin] {
                    imin = j;
                }
                if v > chunk[imax] {
                    imax = j;
                }
            }
            let (first, second) = if imin <= imax {
                (imin, imax)
            } else {
                (imax, imin)
            };
            for j in [first, second] {
                pts.push((x_of((a + j) as f64), y_of(f64::from(chunk[j]))));
            }
        }
    }

    let mut out = String::new();
    header(&mut out, style.width_px, style.height_px);
    axes(&mut out, style, w, h, (0.0, len as f64), (lo, hi));
    let mut path = String::with_capacity(pts.len() * 14);
    for (k, (x, y)) in pts.iter().enumerate() {
        path.push(if k == 0 { 'M' } else { 'L' });
        path.push_str(&n(*x));
        path.push(' ');
        path.push_str(&n(*y));
    }
    let _ = writeln!(
        out,
        r##"<path d="{path}" fill="none" stroke="#1f4e9c" stroke-width="{}"/>"##,
        n(style.stroke_width)
    );
    for &b in &style.boundaries {
        let x = x_of(b as f64);
        let _ = writeln!(
            out,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#c0392b" stroke-width="1.00" stroke-dasharray="4 3"/>"##,
            n(x),
            n(MARGIN_T),
            n(MARGIN_T + ph)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn axes(out: &mut String, style: &PlotStyle, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) {
    let (x0, y0, x1, y1) = (MARGIN_L, MARGIN_T, w - MARGIN_R, h - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black" stroke-width="1.00"/>"#,
        n(x0),
        n(y0),
        n(x1 - x0),
        n(y1 - y0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        n((x0 + x1) / 2.0),
        n(h - 8.0),
        esc(&style.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{1}</text>"#,
        n((y0 + y1) / 2.0),
        esc(&style.y_label)
    );
    let ticks = [
        (x0, y1 + 14.0, "start", format!("{:.0}", xr.0)),
        (x1, y1 + 14.0, "end", format!("{:.0}", xr.1)),
        (x0 - 4.0, y1, "end", format!("{:.3}", yr.0)),
        (x0 - 4.0, y0 + 10.0, "end", format!("{:.3}", yr.1)),
    ];
    for (x, y, anchor, label) in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
            n(x),
            n(y),
            esc(&label)
        );
    }
}

/// Grey-scale grid of `values`; the brightest cell is the largest value.
pub fn heatmap_svg(values: &[Vec<f64>], title: &str) -> String {
    let rows = values.len();
    let cols = values.iter().map(Vec::len).max().unwrap_or(0);
    let cell = 60.0;
    let (w, h) = (cols as f64 * cell + 20.0, rows as f64 * cell + 40.0);
    let max = values
        .iter()
        .flatten()
        .fold(0.0f64, |m, &v| if v.is_finite() { m.max(v) } else { m });
    let mut out = String::new();
    header(&mut out, w as u32, h as u32);
    let _ = writeln!(out, r#"<text x="10" y="20">{}</text>"#, esc(title));
    for (r, row) in values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let level = if max > 0.0 {
                (v / max).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let g = (level * 255.0).round() as u8;
            let (x, y) = (10.0 + c as f64 * cell, 30.0 + r as f64 * cell);
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="rgb({g},{g},{g})" stroke="black" stroke-width="0.50"/>"#,
                n(x),
                n(y),
                n(cell),
                n(cell)
            );
            let fg = if g > 127 { "black" } else { "white" };
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{fg}">{:.2e}</text>"#,
                n(x + cell / 2.0),
                n(y + cell / 2.0 + 4.0),
                v
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Confusion matrix with true classes as rows and predictions as columns.
pub fn confusion_svg(class_names: &[String], confusion: &[Vec<usize>]) -> String {
    let k = class_names.len();
    let cell = 28.0;
    let label_w = 8.0 * class_names.iter().map(String::len).max().unwrap_or(1) as f64 + 10.0;
    let (w, h) = (
        label_w + k as f64 * cell + 10.0,
        label_w + k as f64 * cell + 10.0,
    );
    let mut out = String::new();
    header(&mut out, w as u32, h as u32);
    for (i, name) in class_names.iter().enumerate() {
        let c = label_w + (i as f64 + 0.5) * cell;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            n(label_w - 4.0),
            n(c + 4.0),
            esc(name)
        );
        let _ = writeln!(
            out,
            r#"<text x="{0}" y="{1}" text-anchor="end" transform="rotate(-90 {0} {1})">{2}</text>"#,
            n(c + 4.0),
            n(label_w - 4.0),
            esc(name)
        );
    }
    for (r, row) in confusion.iter().enumerate() {
        let total = row.iter().sum::<usize>().max(1) as f64;
        for (c, &v) in row.iter().enumerate() {
            let g = 255 - ((v as f64 / total) * 255.0).round() as u8;
            let (x, y) = (label_w + c as f64 * cell, label_w + r as f64 * cell);
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="rgb({g},{g},255)" stroke="grey" stroke-width="0.50"/>"#,
                n(x),
                n(y),
                n(cell),
                n(cell)
            );
            if v > 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle">{v}</text>"#,
                    n(x + cell / 2.0),
                    n(y + cell / 2.0 + 4.0)
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_input_same_bytes() {
        let s: Vec<f32> = (0..50_000).map(|i| ((i as f32) * 0.01).sin()).collect();
        let style = PlotStyle {
            boundaries: vec![100, 2000],
            ..PlotStyle::default()
        };
        assert_eq!(trace_svg(&s, &style), trace_svg(&s, &style));
    }

    #[test]
    fn decimation_bounds_path_size() {
        let s: Vec<f32> = (0..1_000_000).map(|i| (i % 7) as f32).collect();
        let svg = trace_svg(&s, &PlotStyle::default());
        let points = svg.matches('L').count();
        assert!(points <= 2 * 960, "{points}");
    }

    #[test]
    fn boundaries_are_dashed_lines() {
        let style = PlotStyle {
            boundaries: vec![1, 2, 3],
            ..PlotStyle::default()
        };
        let svg = trace_svg(&[0.0, 1.0, 0.0, 1.0, 0.0], &style);
        assert_eq!(svg.matches("stroke-dasharray").count(), 3);
    }

    #[test]
    fn empty_and_constant_traces_render() {
        for s in [&[][..], &[2.0f32; 10][..]] {
            let svg = trace_svg(s, &PlotStyle::default());
            assert!(svg.ends_with("</svg>\n"));
            assert!(!svg.contains("NaN") && !svg.contains("inf"));
        }
    }

    #[test]
    fn labels_are_escaped() {
        let style = PlotStyle {
            x_label: "a<b & c".into(),
            ..PlotStyle::default()
        };
        assert!(trace_svg(&[0.0, 1.0], &style).contains("a&lt;b &amp; c"));
    }
}
