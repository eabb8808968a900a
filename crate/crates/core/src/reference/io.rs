//! Plain-text recording and reference files.
//!
//! ```text
//! rspread-recording 1            (or rspread-reference 1)
//! dt 0.001
//! t0 0
//! arms 2
//! dof 7
//! samples 6000
//! t_r 2.345                      (reference files only)
//! delta_t_r 0.1                  (reference files only)
//! columns k arm t px py pz qw qx qy qz vx vy vz wx wy wz xi dxi fx fy fz mx my mz beta q.. dq.. fex fey fez
//! data
//! <one row per sample and arm>
//! ```
//!
//! Numbers use the shortest round-trip decimal form, so a write/read cycle
//! is bit-exact.

use std::fmt::Write as _;

use nalgebra::DVector;

use super::{extend, ArmSample, ExtendedReference, Recording, ReferenceError};
use crate::liegroup::{Twist6, Vec3, Wrench6};

pub const SCHEMA_VERSION: u32 = 1;
const RECORDING_MAGIC: &str = "rspread-recording";
const REFERENCE_MAGIC: &str = "rspread-reference";

fn columns(dof: usize) -> String {
    let mut c = String::from("k arm t px py pz qw qx qy qz vx vy vz wx wy wz xi dxi fx fy fz mx my mz beta");
    for i in 0..dof {
        let _ = write!(c, " q{i}");
    }
    for i in 0..dof {
        let _ = write!(c, " dq{i}");
    }
    c.push_str(" fex fey fez");
    c
}

fn write_body(out: &mut String, rec: &Recording) {
    let _ = writeln!(out, "columns {}", columns(rec.dof));
    out.push_str("data\n");
    for k in 0..rec.len() {
        for (a, series) in rec.arms.iter().enumerate() {
            let s = &series[k];
            let _ = write!(out, "{k} {a} {}", rec.time(k));
            let values =
                s.p.iter()
                    .chain(s.quat.iter())
                    .chain(s.twist.iter())
                    .chain(std::iter::once(&s.xi))
                    .chain(std::iter::once(&s.dxi))
                    .chain(s.f_ff.iter())
                    .chain(std::iter::once(&s.beta))
                    .chain(s.q.iter())
                    .chain(s.dq.iter())
                    .chain(s.f_est.iter());
            for v in values {
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
    }
}

fn write_header(out: &mut String, magic: &str, rec: &Recording) {
    let _ = writeln!(out, "{magic} {SCHEMA_VERSION}");
    let _ = writeln!(out, "dt {:?}", rec.dt);
    let _ = writeln!(out, "t0 {:?}", rec.t0);
    let _ = writeln!(out, "arms {}", rec.arms.len());
    let _ = writeln!(out, "dof {}", rec.dof);
    let _ = writeln!(out, "samples {}", rec.len());
}

pub fn serialize_recording(rec: &Recording) -> String {
    let mut out = String::new();
    write_header(&mut out, RECORDING_MAGIC, rec);
    write_body(&mut out, rec);
    out
}

pub fn serialize_reference(ext: &ExtendedReference) -> String {
    let rec = ext.recording();
    let mut out = String::new();
    write_header(&mut out, REFERENCE_MAGIC, rec);
    let _ = writeln!(out, "t_r {:?}", ext.t_r);
    let _ = writeln!(out, "delta_t_r {:?}", ext.delta_t_r);
    write_body(&mut out, rec);
    out
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

fn corrupt(msg: impl Into<String>) -> ReferenceError {
    ReferenceError::CorruptFile(msg.into())
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines().enumerate() }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str), ReferenceError> {
        self.lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| corrupt("unexpected end of file"))
    }

    fn field(&mut self, key: &str) -> Result<&'a str, ReferenceError> {
        let (no, line) = self.next_line()?;
        let mut parts = line.splitn(2, ' ');
        match (parts.next(), parts.next()) {
            (Some(k), Some(v)) if k == key => Ok(v.trim()),
            _ => Err(corrupt(format!("line {no}: expected `{key}`"))),
        }
    }

    fn number<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ReferenceError> {
        let v = self.field(key)?;
        v.parse().map_err(|_| corrupt(format!("invalid value for `{key}`: {v}")))
    }
}

fn parse_recording(p: &mut Parser<'_>, magic: &str, extra: &[&str]) -> Result<(Recording, Vec<f64>), ReferenceError> {
    let (_, first) = p.next_line()?;
    let mut head = first.split_whitespace();
    if head.next() != Some(magic) {
        return Err(corrupt(format!("missing `{magic}` header")));
    }
    let version = head.next().unwrap_or("");
    if version != SCHEMA_VERSION.to_string() {
        return Err(ReferenceError::SchemaVersionMismatch { expected: SCHEMA_VERSION, found: version.to_string() });
    }
    let dt: f64 = p.number("dt")?;
    let t0: f64 = p.number("t0")?;
    let arms: usize = p.number("arms")?;
    let dof: usize = p.number("dof")?;
    let samples: usize = p.number("samples")?;
    let mut extras = Vec::new();
    for key in extra {
        extras.push(p.number::<f64>(key)?);
    }
    if p.field("columns")? != columns(dof) {
        return Err(corrupt("column layout does not match"));
    }
    let (no, data) = p.next_line()?;
    if data != "data" {
        return Err(corrupt(format!("line {no}: expected `data`")));
    }
    if arms == 0 || arms > 16 || dof > 64 {
        return Err(corrupt("implausible dimensions"));
    }
    let width = 3 + 3 + 4 + 6 + 2 + 6 + 1 + 2 * dof + 3;
    let mut series: Vec<Vec<ArmSample>> = vec![Vec::with_capacity(samples); arms];
    for k in 0..samples {
        for (a, arm_series) in series.iter_mut().enumerate() {
            let (no, line) = p.next_line()?;
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != width {
                return Err(corrupt(format!("line {no}: expected {width} fields, found {}", fields.len())));
            }
            if fields[0] != k.to_string() || fields[1] != a.to_string() {
                return Err(corrupt(format!("line {no}: sample/arm index out of order")));
            }
            let v: Vec<f64> =
                fields[3..].iter().map(|f| f.parse::<f64>().map_err(|_| corrupt(format!("line {no}: invalid number `{f}`")))).collect::<Result<_, _>>()?;
            let quat = [v[3], v[4], v[5], v[6]];
            let qn = quat.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (qn - 1.0).abs() > 1e-9 {
                return Err(corrupt(format!("line {no}: quaternion not unit ({qn})")));
            }
            let o = 24;
            arm_series.push(ArmSample {
                p: Vec3::new(v[0], v[1], v[2]),
                quat,
                twist: Twist6::from_column_slice(&v[7..13]),
                xi: v[13],
                dxi: v[14],
                f_ff: Wrench6::from_column_slice(&v[15..21]),
                beta: v[21],
                q: DVector::from_column_slice(&v[22..22 + dof]),
                dq: DVector::from_column_slice(&v[22 + dof..22 + 2 * dof]),
                f_est: Vec3::new(v[o - 2 + 2 * dof], v[o - 1 + 2 * dof], v[o + 2 * dof]),
            });
        }
    }
    if let Ok((no, extra_line)) = p.next_line() {
        if !extra_line.trim().is_empty() {
            return Err(corrupt(format!("line {no}: trailing data")));
        }
    }
    Ok((Recording { dt, t0, dof, arms: series }, extras))
}

pub fn deserialize_recording(text: &str) -> Result<Recording, ReferenceError> {
    let mut p = Parser::new(text);
    let (rec, _) = parse_recording(&mut p, RECORDING_MAGIC, &[])?;
    rec.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(rec)
}

pub fn deserialize_reference(text: &str) -> Result<ExtendedReference, ReferenceError> {
    let mut p = Parser::new(text);
    let (rec, extras) = parse_recording(&mut p, REFERENCE_MAGIC, &["t_r", "delta_t_r"])?;
    extend(&rec, extras[0], extras[1])
}

#[cfg(test)]
mod tests {
    use super::super::test_support::synthetic;
    use super::*;

    fn sample_recording() -> Recording {
        synthetic(
            10_001,
            1e-3,
            |t| (Vec3::new(0.3 * (1.7 * t).sin(), 0.1 * t, 1.0 / 3.0), Vec3::new(0.51 * (1.7 * t).cos(), 0.1, 0.0)),
            |t| Vec3::new(0.1, 0.2 * t.cos(), -0.3),
        )
    }

    #[test]
    fn recording_round_trip_is_bit_exact() {
        let rec = sample_recording();
        let text = serialize_recording(&rec);
        let back = deserialize_recording(&text).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn reference_round_trip() {
        let rec = sample_recording();
        let ext = extend(&rec, 5.0, 0.1).unwrap();
        let back = deserialize_reference(&serialize_reference(&ext)).unwrap();
        assert_eq!(back, ext);
        assert_eq!(back.ante(1, 7.3), ext.ante(1, 7.3));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let text = serialize_recording(&synthetic(300, 1e-3, |_| (Vec3::zeros(), Vec3::zeros()), |_| Vec3::zeros()));
        let bumped = text.replacen("rspread-recording 1", "rspread-recording 2", 1);
        assert!(matches!(deserialize_recording(&bumped), Err(ReferenceError::SchemaVersionMismatch { .. })));
    }

    #[test]
    fn corruption_is_detected() {
        let text = serialize_recording(&synthetic(50, 1e-3, |_| (Vec3::zeros(), Vec3::zeros()), |_| Vec3::zeros()));
        let truncated: String = text.lines().take(40).map(|l| format!("{l}\n")).collect();
        assert!(matches!(deserialize_recording(&truncated), Err(ReferenceError::CorruptFile(_))));
        let garbled = text.replacen(" 0.0 ", " zero ", 1);
        assert!(matches!(deserialize_recording(&garbled), Err(ReferenceError::CorruptFile(_))));
        assert!(matches!(deserialize_recording("hello"), Err(ReferenceError::CorruptFile(_))));
        assert!(matches!(deserialize_reference(&text), Err(ReferenceError::CorruptFile(_))));
    }
}
