//! Output helpers: JSON with 17-significant-digit floats, CSV numbers, and
//! small SVG line plots.

use std::fmt::Write as _;
use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

/// Formats a float with 17 significant digits, which round-trips every f64.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

/// Pretty JSON formatter that writes every float via [`fmt_f64`].
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_f64(value).as_bytes())
    }
    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(
        &mut self,
        w: &mut W,
        first: bool,
    ) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with exact float output.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value
        .serialize(&mut ser)
        .expect("serializing plain data to memory cannot fail");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// One named polyline of an [`svg_line_plot`].
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
}

/// Linear map from data coordinates to SVG canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotFrame {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub width: f64,
    pub height: f64,
    pub margin: f64,
}

impl PlotFrame {
    fn fit(series: &[Series], width: f64, height: f64, equal_aspect: bool) -> Self {
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut x_min, mut x_max, mut y_min, mut y_max) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        if !x_min.is_finite() {
            (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
        }
        if x_max - x_min < 1e-12 {
            x_max = x_min + 1.0;
        }
        if y_max - y_min < 1e-12 {
            y_max = y_min + 1.0;
        }
        let margin = 50.0;
        let mut frame = Self {
            x_min,
            x_max,
            y_min,
            y_max,
            width,
            height,
            margin,
        };
        if equal_aspect {
            let sx = (width - 2.0 * margin) / (x_max - x_min);
            let sy = (height - 2.0 * margin) / (y_max - y_min);
            let s = sx.min(sy);
            let cx = 0.5 * (x_min + x_max);
            let cy = 0.5 * (y_min + y_max);
            let hw = 0.5 * (width - 2.0 * margin) / s;
            let hh = 0.5 * (height - 2.0 * margin) / s;
            frame.x_min = cx - hw;
            frame.x_max = cx + hw;
            frame.y_min = cy - hh;
            frame.y_max = cy + hh;
        }
        frame
    }

    pub fn to_canvas(&self, x: f64, y: f64) -> (f64, f64) {
        let w = self.width - 2.0 * self.margin;
        let h = self.height - 2.0 * self.margin;
        (
            self.margin + (x - self.x_min) / (self.x_max - self.x_min) * w,
            self.height - self.margin - (y - self.y_min) / (self.y_max - self.y_min) * h,
        )
    }

    pub fn to_data(&self, cx: f64, cy: f64) -> (f64, f64) {
        let w = self.width - 2.0 * self.margin;
        let h = self.height - 2.0 * self.margin;
        (
            self.x_min + (cx - self.margin) / w * (self.x_max - self.x_min),
            self.y_min + (self.height - self.margin - cy) / h * (self.y_max - self.y_min),
        )
    }
}

/// Renders polylines into a standalone SVG document. The data-to-canvas
/// transform is embedded as `data-*` attributes on the root element so the
/// plotted coordinates can be mapped back.
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    equal_aspect: bool,
) -> (String, PlotFrame) {
    let frame = PlotFrame::fit(series, 640.0, 480.0, equal_aspect);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" data-margin="{}">"#,
        fmt_f64(frame.x_min),
        fmt_f64(frame.x_max),
        fmt_f64(frame.y_min),
        fmt_f64(frame.y_max),
        frame.margin,
        w = frame.width,
        h = frame.height,
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0) = (frame.margin, frame.height - frame.margin);
    let (x1, y1) = (frame.width - frame.margin, frame.margin);
    let _ = writeln!(
        svg,
        r#"<polyline fill="none" stroke="black" points="{x0},{y1} {x0},{y0} {x1},{y0}"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="25" text-anchor="middle" font-size="16">{}</text>"#,
        frame.width / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        frame.width / 2.0,
        frame.height - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        frame.height / 2.0,
        frame.height / 2.0,
        escape(y_label)
    );
    for (tick, value) in [(x0, frame.x_min), (x1, frame.x_max)] {
        let _ = writeln!(
            svg,
            r#"<text x="{tick}" y="{}" text-anchor="middle" font-size="10">{value:.3}</text>"#,
            y0 + 14.0
        );
    }
    for (tick, value) in [(y0, frame.y_min), (y1, frame.y_max)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{tick}" text-anchor="end" font-size="10">{value:.3}</text>"#,
            x0 - 4.0
        );
    }
    for (k, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (cx, cy) = frame.to_canvas(x, y);
                format!("{},{}", fmt_f64(cx), fmt_f64(cy))
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline data-label="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(&s.label),
            escape(&s.color),
            pts.join(" ")
        );
        let ly = frame.margin + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{}">{}</text>"#,
            x1 - 120.0,
            escape(&s.color),
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    (svg, frame)
}

/// Reads back the polylines of an SVG produced by [`svg_line_plot`] in data
/// coordinates, keyed by label.
pub fn svg_series(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    let attr = |tag: &str, name: &str| -> Option<String> {
        let key = format!("{name}=\"");
        let start = tag.find(&key)? + key.len();
        let end = tag[start..].find('"')? + start;
        Some(tag[start..end].to_string())
    };
    let Some(root_end) = svg.find('>') else {
        return Vec::new();
    };
    let root = &svg[..root_end];
    let num = |name: &str| attr(root, name).and_then(|v| v.parse::<f64>().ok());
    let (
        Some(x_min),
        Some(x_max),
        Some(y_min),
        Some(y_max),
        Some(margin),
        Some(width),
        Some(height),
    ) = (
        num("data-x-min"),
        num("data-x-max"),
        num("data-y-min"),
        num("data-y-max"),
        num("data-margin"),
        num("width"),
        num("height"),
    )
    else {
        return Vec::new();
    };
    let frame = PlotFrame {
        x_min,
        x_max,
        y_min,
        y_max,
        width,
        height,
        margin,
    };
    svg.lines()
        .filter(|l| l.starts_with("<polyline data-label="))
        .filter_map(|l| {
            let label = attr(l, "data-label")?;
            let pts = attr(l, "points")?
                .split_whitespace()
                .filter_map(|p| {
                    let (a, b) = p.split_once(',')?;
                    Some(frame.to_data(a.parse().ok()?, b.parse().ok()?))
                })
                .collect();
            Some((label, pts))
        })
        .collect()
}

pub const ESTIMATE_LABEL: &str = "estimated";
pub const TRUTH_LABEL: &str = "truth";

/// Ground-plane (x, z) trajectory plot with equal axis scaling; `truth` is
/// drawn first when given.
pub fn trajectory_svg(estimated: &[(f64, f64)], truth: Option<&[(f64, f64)]>) -> String {
    let mut series = Vec::new();
    if let Some(t) = truth {
        series.push(Series {
            label: TRUTH_LABEL.into(),
            color: "black".into(),
            points: t.to_vec(),
        });
    }
    series.push(Series {
        label: ESTIMATE_LABEL.into(),
        color: "red".into(),
        points: estimated.to_vec(),
    });
    svg_line_plot("Follower trajectory", "x (m)", "z (m)", &series, true).0
}

/// Mean refinement loss per iteration.
pub fn loss_curve_svg(mean_loss: &[(f64, f64)]) -> String {
    let series = [Series {
        label: "mean loss".into(),
        color: "blue".into(),
        points: mean_loss.to_vec(),
    }];
    svg_line_plot("Refinement loss", "iteration", "1 - SSIM", &series, false).0
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
