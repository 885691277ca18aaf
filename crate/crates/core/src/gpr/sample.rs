//! Feature rows and the shared corpus CSV format.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEATURE_DIM: usize = 6;
pub const FEATURE_NAMES: [&str; FEATURE_DIM] =
    ["motor_current", "motor_pos", "motor_vel", "joint_pos", "joint_vel", "temperature"];
pub const CORPUS_HEADER: &str = "motor_current,motor_pos,motor_vel,joint_pos,joint_vel,temperature,torque";

/// Sanity band for the temperature feature (deg C).
pub const TEMPERATURE_BAND: (f64, f64) = (-20.0, 120.0);

/// Proprioceptive inputs of the torque estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub motor_current: f64,
    pub motor_pos: f64,
    pub motor_vel: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub temperature: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [self.motor_current, self.motor_pos, self.motor_vel, self.joint_pos, self.joint_vel, self.temperature]
    }

    pub fn from_array(a: [f64; FEATURE_DIM]) -> Self {
        Self {
            motor_current: a[0],
            motor_pos: a[1],
            motor_vel: a[2],
            joint_pos: a[3],
            joint_vel: a[4],
            temperature: a[5],
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in FEATURE_NAMES.iter().zip(self.to_array()) {
            if !v.is_finite() {
                return Err(format!("{name} is not finite ({v})"));
            }
        }
        let (lo, hi) = TEMPERATURE_BAND;
        if !(lo..=hi).contains(&self.temperature) {
            return Err(format!("temperature {} outside [{lo}, {hi}]", self.temperature));
        }
        Ok(())
    }
}

/// One calibration row: features plus ground-truth joint torque (Nm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub features: FeatureVector,
    pub torque: f64,
}

impl SampleRecord {
    pub fn validate(&self) -> Result<(), String> {
        self.features.validate()?;
        if !self.torque.is_finite() {
            return Err(format!("torque is not finite ({})", self.torque));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unexpected corpus header {found:?}, expected {CORPUS_HEADER:?}")]
    Header { found: String },
    #[error("line {line}: {reason}")]
    Row { line: u64, reason: String },
}

/// Writes the header and one LF-terminated line per record. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_corpus<W: Write>(mut w: W, records: &[SampleRecord]) -> std::io::Result<()> {
    let mut line = String::with_capacity(160);
    writeln!(w, "{CORPUS_HEADER}")?;
    for r in records {
        line.clear();
        for v in r.features.to_array() {
            line.push_str(&format!("{v:?},"));
        }
        line.push_str(&format!("{:?}\n", r.torque));
        w.write_all(line.as_bytes())?;
    }
    w.flush()
}

pub fn read_corpus<R: Read>(r: R) -> Result<Vec<SampleRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(r);
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.iter().collect::<Vec<_>>().join(",");
    if header != CORPUS_HEADER {
        return Err(CorpusError::Header { found: header });
    }
    let mut out = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line_hint = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e, line_hint)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(line_hint);
        if record.len() != FEATURE_DIM + 1 {
            return Err(CorpusError::Row {
                line,
                reason: format!("expected {} fields, found {}", FEATURE_DIM + 1, record.len()),
            });
        }
        let mut values = [0.0; FEATURE_DIM + 1];
        for (i, (field, slot)) in record.iter().zip(values.iter_mut()).enumerate() {
            *slot = field.trim().parse::<f64>().map_err(|_| CorpusError::Row {
                line,
                reason: format!("column {} ({}) is not a number: {field:?}", i + 1, column_name(i)),
            })?;
        }
        let mut features = [0.0; FEATURE_DIM];
        features.copy_from_slice(&values[..FEATURE_DIM]);
        let rec = SampleRecord { features: FeatureVector::from_array(features), torque: values[FEATURE_DIM] };
        rec.validate().map_err(|reason| CorpusError::Row { line, reason })?;
        out.push(rec);
    }
    Ok(out)
}

fn column_name(i: usize) -> &'static str {
    FEATURE_NAMES.get(i).copied().unwrap_or("torque")
}

fn csv_error(e: csv::Error, line: u64) -> CorpusError {
    let line = e.position().map(|p| p.line()).unwrap_or(line);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CorpusError::Io(io),
        other => CorpusError::Row { line, reason: format!("{other:?}") },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64) -> SampleRecord {
        SampleRecord {
            features: FeatureVector::from_array([x, 2.0 * x, 0.1, -0.3, 1e-7, 25.0]),
            torque: 0.1 + x,
        }
    }

    #[test]
    fn header_is_exact() {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &[rec(1.0)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&format!("{CORPUS_HEADER}\n")));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn reads_back_exactly() {
        let records: Vec<_> = (0..20).map(|i| rec(i as f64 * 0.37 - 2.1)).collect();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &records).unwrap();
        assert_eq!(read_corpus(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn corrupt_row_names_line() {
        let text = format!("{CORPUS_HEADER}\n1,2,3,4,5,25,0.1\n1,2,x,4,5,25,0.1\n");
        match read_corpus(text.as_bytes()) {
            Err(CorpusError::Row { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("motor_vel"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let short = format!("{CORPUS_HEADER}\n1,2,3\n");
        assert!(matches!(read_corpus(short.as_bytes()), Err(CorpusError::Row { line: 2, .. })));
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(read_corpus("a,b\n1,2\n".as_bytes()), Err(CorpusError::Header { .. })));
    }

    #[test]
    fn temperature_band_enforced() {
        let mut r = rec(0.0);
        r.features.temperature = 150.0;
        assert!(r.validate().is_err());
        r.features.temperature = 20.0;
        r.features.motor_pos = f64::INFINITY;
        assert!(r.validate().is_err());
    }
}
