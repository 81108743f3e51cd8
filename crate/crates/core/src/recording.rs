//! Timestamped transform measurements, as produced by an optical tracker or
//! by reading robot kinematics, plus their JSON Lines file format.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FrameId, GeometryError, RigidTransform};

#[derive(Debug, Error)]
pub enum RecordingError {
    #[error("recording has no valid measurements")]
    NoValidEntries,
    #[error("timestamps decrease at entry {index}")]
    NonMonotonicTime { index: usize },
    #[error("entry {index} maps {from}->{to}, expected {expected_from}->{expected_to}")]
    MixedFrames {
        index: usize,
        from: FrameId,
        to: FrameId,
        expected_from: FrameId,
        expected_to: FrameId,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    BadTransform {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub timestamp: f64,
    pub transform: RigidTransform,
    pub valid: bool,
}

/// Ordered measurements of a single transform `T^{ab}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    entries: Vec<Measurement>,
}

/// One line of a recording file.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LineRecord {
    t: f64,
    from: FrameId,
    to: FrameId,
    q: [f64; 4],
    tr: [f64; 3],
    #[serde(default = "default_valid")]
    valid: bool,
}

fn default_valid() -> bool {
    true
}

impl Recording {
    pub fn new(entries: Vec<Measurement>) -> Result<Self, RecordingError> {
        let first = entries.first().ok_or(RecordingError::NoValidEntries)?;
        let (from, to) = (
            first.transform.from_frame().clone(),
            first.transform.to_frame().clone(),
        );
        for (i, m) in entries.iter().enumerate() {
            if m.transform.from_frame() != &from || m.transform.to_frame() != &to {
                return Err(RecordingError::MixedFrames {
                    index: i,
                    from: m.transform.from_frame().clone(),
                    to: m.transform.to_frame().clone(),
                    expected_from: from,
                    expected_to: to,
                });
            }
            if i > 0 && m.timestamp < entries[i - 1].timestamp {
                return Err(RecordingError::NonMonotonicTime { index: i });
            }
        }
        if !entries.iter().any(|m| m.valid) {
            return Err(RecordingError::NoValidEntries);
        }
        Ok(Recording { entries })
    }

    /// Builds a recording of valid measurements at a fixed rate.
    pub fn from_transforms(
        transforms: impl IntoIterator<Item = RigidTransform>,
        rate_hz: f64,
    ) -> Result<Self, RecordingError> {
        let entries = transforms
            .into_iter()
            .enumerate()
            .map(|(i, transform)| Measurement {
                timestamp: i as f64 / rate_hz,
                transform,
                valid: true,
            })
            .collect();
        Recording::new(entries)
    }

    pub fn entries(&self) -> &[Measurement] {
        &self.entries
    }

    pub fn valid(&self) -> impl Iterator<Item = &RigidTransform> + '_ {
        self.entries.iter().filter(|m| m.valid).map(|m| &m.transform)
    }

    pub fn n_valid(&self) -> usize {
        self.entries.iter().filter(|m| m.valid).count()
    }

    pub fn n_invalid(&self) -> usize {
        self.entries.len() - self.n_valid()
    }

    /// `(from, to)` frames shared by every entry.
    pub fn frames(&self) -> (&FrameId, &FrameId) {
        let t = &self.entries[0].transform;
        (t.from_frame(), t.to_frame())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, RecordingError> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LineRecord = serde_json::from_str(&line)
                .map_err(|source| RecordingError::Parse { line: i + 1, source })?;
            let transform =
                RigidTransform::from_quaternion(rec.q, Vector3::from(rec.tr), rec.from, rec.to)
                    .map_err(|source| RecordingError::BadTransform { line: i + 1, source })?;
            entries.push(Measurement {
                timestamp: rec.t,
                transform,
                valid: rec.valid,
            });
        }
        Recording::new(entries)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), RecordingError> {
        for m in &self.entries {
            let t = m.transform.translation();
            let rec = LineRecord {
                t: m.timestamp,
                from: m.transform.from_frame().clone(),
                to: m.transform.to_frame().clone(),
                q: m.transform.quaternion(),
                tr: [t.x, t.y, t.z],
                valid: m.valid,
            };
            serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(x: f64) -> RigidTransform {
        RigidTransform::translation_only(Vector3::new(x, 0.0, 0.0), "d".into(), "v".into())
    }

    #[test]
    fn rejects_mixed_frames_and_time_reversal() {
        let other = RigidTransform::identity("p".into(), "v".into());
        let mixed = vec![
            Measurement { timestamp: 0.0, transform: t(0.0), valid: true },
            Measurement { timestamp: 0.1, transform: other, valid: true },
        ];
        assert!(matches!(Recording::new(mixed), Err(RecordingError::MixedFrames { index: 1, .. })));

        let reversed = vec![
            Measurement { timestamp: 0.2, transform: t(0.0), valid: true },
            Measurement { timestamp: 0.1, transform: t(1.0), valid: true },
        ];
        assert!(matches!(
            Recording::new(reversed),
            Err(RecordingError::NonMonotonicTime { index: 1 })
        ));
    }

    #[test]
    fn requires_a_valid_entry() {
        let all_bad = vec![Measurement { timestamp: 0.0, transform: t(0.0), valid: false }];
        assert!(matches!(Recording::new(all_bad), Err(RecordingError::NoValidEntries)));
        assert!(matches!(Recording::new(vec![]), Err(RecordingError::NoValidEntries)));
    }

    #[test]
    fn jsonl_round_trip_keeps_validity() {
        let rec = Recording::new(vec![
            Measurement { timestamp: 0.0, transform: t(0.1), valid: true },
            Measurement { timestamp: 0.05, transform: t(0.2), valid: false },
        ])
        .unwrap();
        let mut buf = Vec::new();
        rec.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().next().unwrap().contains("\"tr\":[0.1,0.0,0.0]"));
        let back = Recording::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back.n_valid(), 1);
        assert_eq!(back.n_invalid(), 1);
        assert_eq!(back.entries()[1].transform.translation().x, 0.2);
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "{\"t\":0,\"from\":\"d\",\"to\":\"v\",\"q\":[1,0,0,0],\"tr\":[0,0,0]}\nnot json\n";
        match Recording::read_jsonl(text.as_bytes()) {
            Err(RecordingError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
