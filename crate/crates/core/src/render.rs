//! Chart records and SVG 1.1 rendering for bar, line and pie charts.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::ChartType;
use crate::error::{Error, Result};
use crate::pipeline::ChartSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: u32,
    pub height: u32,
    pub margin: u32,
    pub palette: Vec<String>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 640,
            height: 400,
            margin: 48,
            palette: ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width <= 2 * self.margin || self.height <= 2 * self.margin {
            return Err(Error::Render("canvas must be larger than twice the margin".into()));
        }
        if self.palette.is_empty() {
            return Err(Error::Render("palette is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericSeries {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

impl NumericSeries {
    pub fn new(labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if labels.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Render(format!("value {i} is not finite")));
        }
        Ok(Self { labels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const CURRENCY: &[char] = &['$', '€', '£', '¥', '₹'];

/// Parse one y surface: optional leading currency symbol, optional trailing
/// `%`, `,` thousands separators.
pub fn parse_number(surface: &str) -> Option<f64> {
    let s = surface.trim();
    let s = s.strip_prefix(CURRENCY).unwrap_or(s).trim_start();
    let s = s.strip_suffix('%').unwrap_or(s).trim_end();
    let cleaned: String = s.chars().filter(|&c| c != ',').collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Coerce every y surface of `spec` to a number, failing on the first that
/// does not parse.
pub fn coerce_numeric(spec: &ChartSpec) -> Result<NumericSeries> {
    let values = spec
        .y_values
        .iter()
        .enumerate()
        .map(|(index, surface)| {
            parse_number(surface).ok_or_else(|| Error::Unparseable {
                index,
                surface: surface.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    NumericSeries::new(spec.x_labels.clone(), values)
}

/// Machine-readable chart: labels, numeric values and suitable chart types.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartRecord {
    pub x_labels: Vec<String>,
    pub y_values: Vec<f64>,
    pub chart_types: BTreeSet<ChartType>,
}

pub fn chart_record(spec: &ChartSpec) -> Result<ChartRecord> {
    let series = coerce_numeric(spec)?;
    Ok(ChartRecord {
        x_labels: series.labels,
        y_values: series.values,
        chart_types: spec.chart_types.clone(),
    })
}

/// Read a chart document whose `y_values` may be numbers or raw surfaces.
pub fn parse_chart_document(json: &str) -> Result<(NumericSeries, BTreeSet<ChartType>)> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Value {
        Number(f64),
        Surface(String),
    }
    #[derive(Deserialize)]
    struct Document {
        x_labels: Vec<String>,
        y_values: Vec<Value>,
        #[serde(default)]
        chart_types: BTreeSet<ChartType>,
    }
    let doc: Document = serde_json::from_str(json)?;
    let values = doc
        .y_values
        .into_iter()
        .enumerate()
        .map(|(index, v)| match v {
            Value::Number(n) => Ok(n),
            Value::Surface(s) => parse_number(&s).ok_or(Error::Unparseable { index, surface: s }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((NumericSeries::new(doc.x_labels, values)?, doc.chart_types))
}

/// Wedge angles in degrees, `360·vᵢ/Σv`.
pub fn pie_angles(values: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = values.iter().position(|&v| v < 0.0) {
        return Err(Error::Render(format!("pie value {i} is negative")));
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Render("pie values sum to zero".into()));
    }
    Ok(values.iter().map(|v| 360.0 * v / total).collect())
}

/// `(lo, hi)` of the value axis: from `min(0, min)` to `1.05·max`.
pub fn value_axis(values: &[f64]) -> (f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min.min(0.0);
    let hi = if max > 0.0 { 1.05 * max } else { 0.0 };
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            // Characters XML 1.0 cannot carry at all.
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => out.push('\u{fffd}'),
            '\u{fffe}' | '\u{ffff}' => out.push('\u{fffd}'),
            c => out.push(c),
        }
    }
    out
}

struct Frame {
    left: f64,
    right: f64,
    top: f64,
    bottom: f64,
}

impl Frame {
    fn of(config: &RenderConfig) -> Self {
        let m = config.margin as f64;
        Self {
            left: m,
            right: config.width as f64 - m,
            top: m,
            bottom: config.height as f64 - m,
        }
    }

    fn width(&self) -> f64 {
        self.right - self.left
    }

    fn height(&self) -> f64 {
        self.bottom - self.top
    }
}

fn axes(out: &mut String, f: &Frame) {
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="#333"/>"##,
        l = num(f.left),
        r = num(f.right),
        b = num(f.bottom)
    );
    let _ = writeln!(
        out,
        r##"<line class="axis" x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="#333"/>"##,
        l = num(f.left),
        t = num(f.top),
        b = num(f.bottom)
    );
}

fn label(out: &mut String, x: f64, y: f64, text: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
        num(x),
        num(y),
        escape(text)
    );
}

fn render_bar(out: &mut String, series: &NumericSeries, config: &RenderConfig) {
    let f = Frame::of(config);
    let (lo, hi) = value_axis(&series.values);
    let slot = f.width() / series.len() as f64;
    axes(out, &f);
    for (i, (text, &v)) in series.labels.iter().zip(&series.values).enumerate() {
        let height = (v - lo) / (hi - lo) * f.height();
        let x = f.left + i as f64 * slot;
        let _ = writeln!(
            out,
            r#"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            num(x + 0.15 * slot),
            num(f.bottom - height),
            num(0.7 * slot),
            num(height),
            escape(&config.palette[i % config.palette.len()])
        );
        label(out, x + slot / 2.0, f.bottom + 16.0, text);
    }
}

fn render_line(out: &mut String, series: &NumericSeries, config: &RenderConfig) {
    let f = Frame::of(config);
    let (lo, hi) = value_axis(&series.values);
    let slot = f.width() / series.len() as f64;
    let points: Vec<(f64, f64)> = series
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| (f.left + (i as f64 + 0.5) * slot, f.bottom - (v - lo) / (hi - lo) * f.height()))
        .collect();
    let color = escape(&config.palette[0]);
    axes(out, &f);
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{},{}", num(x), num(y))).collect();
    let _ = writeln!(
        out,
        r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        path.join(" ")
    );
    for (&(x, y), text) in points.iter().zip(&series.labels) {
        let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, num(x), num(y));
        label(out, x, f.bottom + 16.0, text);
    }
}

fn render_pie(out: &mut String, series: &NumericSeries, config: &RenderConfig) -> Result<()> {
    let angles = pie_angles(&series.values)?;
    let f = Frame::of(config);
    let (cx, cy) = (f.left + f.width() / 2.0, f.top + f.height() / 2.0);
    let r = f.width().min(f.height()) / 2.0;
    // Degrees clockwise from twelve o'clock.
    let at = |deg: f64, radius: f64| {
        let t = deg.to_radians();
        (cx + radius * t.sin(), cy - radius * t.cos())
    };
    let mut start = 0.0;
    for (i, (text, &angle)) in series.labels.iter().zip(&angles).enumerate() {
        let end = start + angle;
        let (sx, sy) = at(start, r);
        let d = if angle >= 360.0 - 1e-9 {
            // A full circle needs two half arcs.
            let (mx, my) = at(start + 180.0, r);
            format!(
                "M {} {} A {r} {r} 0 1 1 {} {} A {r} {r} 0 1 1 {} {} Z",
                num(sx),
                num(sy),
                num(mx),
                num(my),
                num(sx),
                num(sy),
                r = num(r)
            )
        } else {
            let (ex, ey) = at(end, r);
            format!(
                "M {} {} L {} {} A {r} {r} 0 {} 1 {} {} Z",
                num(cx),
                num(cy),
                num(sx),
                num(sy),
                u8::from(angle > 180.0),
                num(ex),
                num(ey),
                r = num(r)
            )
        };
        let _ = writeln!(
            out,
            r##"<path class="wedge" data-angle="{angle:.10}" d="{d}" fill="{}" stroke="#fff"/>"##,
            escape(&config.palette[i % config.palette.len()])
        );
        let (lx, ly) = at(start + angle / 2.0, 0.7 * r);
        label(out, lx, ly, text);
        start = end;
    }
    Ok(())
}

/// Render `series` as an SVG 1.1 document. Output bytes depend only on the
/// inputs.
pub fn render_svg(series: &NumericSeries, chart_type: ChartType, config: &RenderConfig) -> Result<Vec<u8>> {
    config.validate()?;
    if series.is_empty() {
        return Err(Error::Render("nothing to plot".into()));
    }
    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = config.width,
        h = config.height
    );
    match chart_type {
        ChartType::Bar => render_bar(&mut out, series, config),
        ChartType::Line => render_line(&mut out, series, config),
        ChartType::Pie => render_pie(&mut out, series, config)?,
    }
    out.push_str("</svg>\n");
    Ok(out.into_bytes())
}
