//! JSON Lines corpora and JSON template files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::GlyphTemplate;
use super::{Trajectory, TrajectoryError, TrajectoryPoint};

/// One corpus line: `{"label": "...", "points": [[p, q, s], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSample {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub points: Vec<(f64, f64, u32)>,
}

impl From<&Trajectory> for CorpusSample {
    fn from(t: &Trajectory) -> Self {
        Self {
            label: t.label.clone(),
            points: t.points.iter().map(|p| (p.p, p.q, p.s)).collect(),
        }
    }
}

impl CorpusSample {
    pub fn into_trajectory(self) -> Result<Trajectory, TrajectoryError> {
        let t = Trajectory {
            points: self
                .points
                .into_iter()
                .map(|(p, q, s)| TrajectoryPoint::new(p, q, s))
                .collect(),
            label: self.label,
        };
        t.validate()?;
        Ok(t)
    }
}

/// Parses one corpus line; `line` is 1-based and only used in errors.
pub fn parse_corpus_line(
    text: &str,
    line: usize,
    require_label: bool,
) -> Result<Trajectory, TrajectoryError> {
    let malformed = |reason: String| TrajectoryError::Malformed { line, reason };
    let sample: CorpusSample = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    if require_label && sample.label.is_none() {
        return Err(malformed("missing field `label`".into()));
    }
    if sample.points.is_empty() {
        return Err(malformed("no points".into()));
    }
    sample
        .into_trajectory()
        .map_err(|e| malformed(e.to_string()))
}

/// Reads a labeled corpus. Blank lines are skipped; the first bad line aborts
/// with its line number.
pub fn read_corpus(path: &Path) -> Result<Vec<Trajectory>, TrajectoryError> {
    let file = fs::File::open(path)
        .map_err(|e| TrajectoryError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TrajectoryError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_corpus_line(&line, i + 1, true)?);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, samples: &[Trajectory]) -> Result<(), TrajectoryError> {
    let io_err = |e: std::io::Error| TrajectoryError::Io(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for s in samples {
        let line = serde_json::to_string(&CorpusSample::from(s)).expect("corpus sample serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Template file entry: `{"class": "...", "strokes": [[[x, y], ...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateRecord {
    pub class: String,
    pub strokes: Vec<Vec<[f64; 2]>>,
}

pub(crate) fn parse_templates(text: &str) -> Result<Vec<GlyphTemplate>, TrajectoryError> {
    let records: Vec<TemplateRecord> =
        serde_json::from_str(text).map_err(|e| TrajectoryError::Malformed {
            line: e.line(),
            reason: e.to_string(),
        })?;
    records
        .into_iter()
        .enumerate()
        .map(|(class_id, r)| {
            let t = GlyphTemplate {
                class_id,
                label: r.class,
                strokes: r.strokes,
            };
            t.validate()?;
            Ok(t)
        })
        .collect()
}

pub fn read_templates(path: &Path) -> Result<Vec<GlyphTemplate>, TrajectoryError> {
    let text = fs::read_to_string(path)
        .map_err(|e| TrajectoryError::Io(format!("{}: {e}", path.display())))?;
    parse_templates(&text)
}
