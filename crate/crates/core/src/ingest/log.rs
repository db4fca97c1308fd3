use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::IngestError;

pub const LOG_CSV_HEADER: [&str; 3] = ["t", "lead_speed", "gap"];

/// Allowed deviation of any time step from the first one (s).
pub const DT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSample {
    pub t: f64,
    pub lead_speed: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub log_id: String,
    /// Generator seed or file path.
    pub source: String,
}

/// A uniformly sampled recording of the vehicle ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveLog {
    dt: f64,
    samples: Vec<LogSample>,
    pub meta: LogMeta,
}

impl DriveLog {
    pub fn new(samples: Vec<LogSample>, meta: LogMeta) -> Result<Self, IngestError> {
        let bad = |m: String| Err(IngestError::InvalidLog(format!("{}: {m}", meta.log_id)));
        if samples.len() < 2 {
            return bad(format!("need at least 2 samples, got {}", samples.len()));
        }
        let dt = samples[1].t - samples[0].t;
        if !(dt > 0.0) {
            return bad("time must be strictly increasing".into());
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.lead_speed.is_finite() && s.gap.is_finite()) {
                return bad(format!("sample {i} is not finite"));
            }
            if s.lead_speed < 0.0 {
                return bad(format!("negative lead speed at t = {}", s.t));
            }
            if !(s.gap > 0.0) {
                return bad(format!("gap must be > 0, got {} at t = {}", s.gap, s.t));
            }
            if i > 0 {
                let step = s.t - samples[i - 1].t;
                if !(step > 0.0) {
                    return bad(format!("time not strictly increasing at t = {}", s.t));
                }
                if (step - dt).abs() > DT_TOLERANCE {
                    return bad(format!("non-uniform step {step} at t = {} (dt {dt})", s.t));
                }
            }
        }
        Ok(Self { dt, samples, meta })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[LogSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_range(&self) -> (f64, f64) {
        (self.samples[0].t, self.samples[self.samples.len() - 1].t)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * 32);
        s.push_str(&LOG_CSV_HEADER.join(","));
        s.push('\n');
        for x in &self.samples {
            let _ = writeln!(s, "{},{},{}", x.t, x.lead_speed, x.gap);
        }
        s
    }

    /// Parses `t,lead_speed,gap` CSV; `name` labels errors and becomes the log id.
    pub fn from_csv_str(text: &str, name: &str) -> Result<Self, IngestError> {
        let parse_err = |line: usize, msg: String| IngestError::Parse { path: name.to_string(), line, msg };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != LOG_CSV_HEADER {
            return Err(parse_err(1, format!("expected header `{}`, got `{}`", LOG_CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| -> Result<f64, IngestError> {
                let raw = rec.get(i).unwrap_or("");
                raw.parse::<f64>().map_err(|_| parse_err(line, format!("column `{}`: cannot parse `{raw}`", LOG_CSV_HEADER[i])))
            };
            samples.push(LogSample { t: field(0)?, lead_speed: field(1)?, gap: field(2)? });
        }
        let stem = Path::new(name).file_stem().map_or(name.to_string(), |s| s.to_string_lossy().into_owned());
        Self::new(samples, LogMeta { log_id: stem, source: name.to_string() })
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
        Self::from_csv_str(&text, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> LogMeta {
        LogMeta { log_id: "x".into(), source: "test".into() }
    }

    #[test]
    fn csv_round_trip() {
        let samples = (0..5).map(|i| LogSample { t: i as f64 * 0.1, lead_speed: 20.0 + 0.1 * i as f64, gap: 30.0 }).collect();
        let log = DriveLog::new(samples, meta()).unwrap();
        let back = DriveLog::from_csv_str(&log.to_csv_string(), "x.csv").unwrap();
        assert_eq!(back.samples(), log.samples());
        assert_eq!(back.meta.log_id, "x");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "t,lead_speed,gap\n0,20,30\n0.1,abc,30\n";
        match DriveLog::from_csv_str(text, "bad.csv") {
            Err(IngestError::Parse { line, path, .. }) => assert_eq!((line, path.as_str()), (3, "bad.csv")),
            other => panic!("{other:?}"),
        }
        let short = "t,lead_speed,gap\n0,20,30\n0.1,20\n";
        assert!(matches!(DriveLog::from_csv_str(short, "s.csv"), Err(IngestError::Parse { line: 3, .. })));
        assert!(matches!(DriveLog::from_csv_str("a,b,c\n", "h.csv"), Err(IngestError::Parse { line: 1, .. })));
    }

    #[test]
    fn rejects_invalid_logs() {
        let mk = |rows: &[(f64, f64, f64)]| {
            DriveLog::new(rows.iter().map(|&(t, lead_speed, gap)| LogSample { t, lead_speed, gap }).collect(), meta())
        };
        assert!(mk(&[(0.0, 1.0, 1.0), (0.1, 1.0, 1.0), (0.3, 1.0, 1.0)]).is_err());
        assert!(mk(&[(0.0, 1.0, 1.0), (0.1, -1.0, 1.0)]).is_err());
        assert!(mk(&[(0.0, 1.0, 1.0), (0.1, 1.0, 0.0)]).is_err());
        assert!(mk(&[(0.1, 1.0, 1.0), (0.0, 1.0, 1.0)]).is_err());
        assert!(mk(&[(0.0, 1.0, 1.0)]).is_err());
        assert!(mk(&[(0.0, 1.0, 1.0), (0.1, 1.0, 1.0), (0.2 + 5e-10, 1.0, 1.0)]).is_ok());
    }
}
