//! Writers for CSV, JSON, JSON lines, and SVG outputs.
//!
//! Every file starts with the generator name and seed: a `#` comment line for
//! CSV, `rng`/`seed` keys for JSON objects, a leading header object for JSON
//! lines, and an XML comment for SVG.

use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::billiard::TraceRow;
use crate::error::Result;
use crate::geodesic::{TrajectorySample, ZonePassage};
use crate::rng::RNG_NAME;

pub fn header_line(seed: u64) -> String {
    format!("rng={RNG_NAME} seed={seed}")
}

/// Serialises `rows` as CSV after a `# rng=… seed=…` line.
pub fn write_csv<W: Write, T: Serialize>(mut w: W, seed: u64, rows: &[T]) -> Result<()> {
    writeln!(w, "# {}", header_line(seed))?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::error::Error {
    std::io::Error::other(e).into()
}

#[derive(Serialize)]
struct GeodesicRow {
    t: f64,
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "Y")]
    y: f64,
    #[serde(rename = "Z")]
    z: f64,
    px: f64,
    py: f64,
    pz: f64,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "K")]
    k: f64,
    in_z_delta: u8,
    in_v_nu: u8,
}

/// Columns `t, X, Y, Z, px, py, pz, H, K, in_z_delta, in_v_nu`.
pub fn write_geodesic_csv<W: Write>(w: W, seed: u64, samples: &[TrajectorySample]) -> Result<()> {
    let rows: Vec<GeodesicRow> = samples
        .iter()
        .map(|s| GeodesicRow {
            t: s.t,
            x: s.q[0],
            y: s.q[1],
            z: s.q[2],
            px: s.p[0],
            py: s.p[1],
            pz: s.p[2],
            h: s.h,
            k: s.k,
            in_z_delta: s.in_z_delta.into(),
            in_v_nu: s.in_v_nu.into(),
        })
        .collect();
    write_csv(w, seed, &rows)
}

/// Columns `t, theta, phi, px, py, event`.
pub fn write_billiard_csv<W: Write>(w: W, seed: u64, rows: &[TraceRow]) -> Result<()> {
    write_csv(w, seed, rows)
}

/// `value` as pretty JSON; objects gain `rng` and `seed` keys.
pub fn to_json<T: Serialize>(value: &T, seed: u64) -> Result<String> {
    let v = with_header(serde_json::to_value(value)?, seed);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

pub fn write_json<W: Write, T: Serialize>(mut w: W, seed: u64, value: &T) -> Result<()> {
    w.write_all(to_json(value, seed)?.as_bytes())?;
    Ok(())
}

fn with_header(v: Value, seed: u64) -> Value {
    match v {
        Value::Object(m) => {
            let mut out = Map::new();
            out.insert("rng".into(), RNG_NAME.into());
            out.insert("seed".into(), seed.into());
            out.extend(m);
            Value::Object(out)
        }
        other => {
            let mut out = Map::new();
            out.insert("rng".into(), RNG_NAME.into());
            out.insert("seed".into(), seed.into());
            out.insert("data".into(), other);
            Value::Object(out)
        }
    }
}

/// One JSON object per line, after a header line `{"rng": …, "seed": …}`.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, seed: u64, records: &[T]) -> Result<()> {
    writeln!(w, "{}", serde_json::json!({ "rng": RNG_NAME, "seed": seed }))?;
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn write_passages_jsonl<W: Write>(w: W, seed: u64, passages: &[ZonePassage]) -> Result<()> {
    write_jsonl(w, seed, passages)
}

/// Minimal SVG canvas with a linear map from data coordinates.
#[derive(Debug, Clone)]
pub struct Svg {
    width: f64,
    height: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    margin: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64, lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self { width, height, lo, hi, margin: 40.0, body: String::new() }
    }

    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let sx = self.margin + (x - self.lo[0]) / (self.hi[0] - self.lo[0]) * (self.width - 2.0 * self.margin);
        let sy = self.height - self.margin - (y - self.lo[1]) / (self.hi[1] - self.lo[1]) * (self.height - 2.0 * self.margin);
        (sx, sy)
    }

    fn points(&self, pts: &[[f64; 2]]) -> String {
        let mut s = String::new();
        for p in pts {
            let (x, y) = self.map(p[0], p[1]);
            let _ = write!(s, "{x:.2},{y:.2} ");
        }
        s.trim_end().to_string()
    }

    pub fn polyline(&mut self, pts: &[[f64; 2]], stroke: &str, width: f64) {
        if pts.len() < 2 {
            return;
        }
        let p = self.points(pts);
        let _ = writeln!(self.body, r#"<polyline points="{p}" fill="none" stroke="{stroke}" stroke-width="{width}"/>"#);
    }

    pub fn polygon(&mut self, pts: &[[f64; 2]], fill: &str) {
        let p = self.points(pts);
        let _ = writeln!(self.body, r#"<polygon points="{p}" fill="{fill}" stroke="none"/>"#);
    }

    pub fn rect(&mut self, lo: [f64; 2], hi: [f64; 2], fill: &str) {
        let (x0, y1) = self.map(lo[0], lo[1]);
        let (x1, y0) = self.map(hi[0], hi[1]);
        let _ = writeln!(self.body, r#"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#, x1 - x0, y1 - y0);
    }

    pub fn circle(&mut self, c: [f64; 2], radius: f64, fill: &str) {
        let (x, y) = self.map(c[0], c[1]);
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius}" fill="{fill}"/>"#);
    }

    pub fn text(&mut self, at: [f64; 2], label: &str) {
        let (x, y) = self.map(at[0], at[1]);
        let label = label.replace('&', "&amp;").replace('<', "&lt;");
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{y:.2}" font-size="12" font-family="sans-serif">{label}</text>"#);
    }

    /// Frame with tick labels at the corners of the data box.
    pub fn axes(&mut self, x_label: &str, y_label: &str) {
        let (lo, hi) = (self.lo, self.hi);
        self.polyline(&[[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]], [lo[0], lo[1]]], "black", 1.0);
        let (x, y) = self.map(lo[0], lo[1]);
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{:.2}" font-size="10">{:.3}</text>"#, y + 14.0, lo[0]);
        let _ = writeln!(self.body, r#"<text x="{:.2}" y="{y:.2}" font-size="10" text-anchor="end">{:.3}</text>"#, x - 4.0, lo[1]);
        let (x, y) = self.map(hi[0], hi[1]);
        let _ = writeln!(self.body, r#"<text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="end">{:.3}</text>"#, self.height - self.margin + 14.0, hi[0]);
        let _ = writeln!(self.body, r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{:.3}</text>"#, self.margin - 4.0, y + 4.0, hi[1]);
        let _ = writeln!(self.body, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{x_label}</text>"#, self.width / 2.0, self.height - 8.0);
        let _ = writeln!(self.body, r#"<text x="12" y="{:.2}" font-size="12" transform="rotate(-90 12 {:.2})" text-anchor="middle">{y_label}</text>"#, self.height / 2.0, self.height / 2.0);
    }

    pub fn finish(&self, seed: u64) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- {} -->\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            header_line(seed),
            self.width,
            self.height,
            self.width,
            self.height,
            self.body
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::billiard::TraceEvent;

    #[test]
    fn csv_has_header_and_columns() {
        let rows = [TraceRow { t: 0.0, theta: 1.0, phi: 2.0, px: 1.0, py: 0.0, event: TraceEvent::Bounce }];
        let mut buf = Vec::new();
        write_billiard_csv(&mut buf, 3, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# rng=ChaCha8 seed=3"));
        assert_eq!(lines.next(), Some("t,theta,phi,px,py,event"));
        assert_eq!(lines.next(), Some("0.0,1.0,2.0,1.0,0.0,bounce"));
    }

    #[test]
    fn json_gains_header_keys() {
        #[derive(Serialize)]
        struct R {
            pass: bool,
        }
        let s = to_json(&R { pass: true }, 9).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["rng"], "ChaCha8");
        assert_eq!(v["seed"], 9);
        assert_eq!(v["pass"], true);
        let s = to_json(&vec![1, 2], 9).unwrap();
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["data"][1], 2);
    }

    #[test]
    fn svg_maps_corners() {
        let s = Svg::new(200.0, 100.0, [0.0, 0.0], [1.0, 1.0]);
        assert_eq!(s.map(0.0, 0.0), (40.0, 60.0));
        assert_eq!(s.map(1.0, 1.0), (160.0, 40.0));
        assert!(s.finish(1).contains("<!-- rng=ChaCha8 seed=1 -->"));
    }
}
