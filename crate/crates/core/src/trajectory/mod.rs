//! Fingertip trajectories: data model, preprocessing, derivative features,
//! the corpus/template file formats and a synthetic glyph generator.

mod features;
mod io;
mod preprocess;
mod synth;

pub use features::{extract_features, FeatureSequence, FeatureVector, FEATURE_DIM};
pub use io::{
    parse_corpus_line, read_corpus, read_templates, write_corpus, CorpusSample, TemplateRecord,
};
pub use preprocess::{normalize, preprocess, resample, DEFAULT_SPACING};
pub use synth::{builtin_templates, synth_generate, GlyphTemplate, SynthConfig};

/// Raw trajectory to model input: validate, normalize, resample, extract.
pub fn featurize(traj: &Trajectory, spacing: f64) -> Result<FeatureSequence, TrajectoryError> {
    traj.validate()?;
    if traj.len() < 3 {
        return Err(TrajectoryError::TooShort(traj.len()));
    }
    extract_features(&preprocess(traj, spacing)?)
}

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("empty trajectory")]
    Empty,
    #[error("trajectory has {0} points; at least 3 are needed")]
    TooShort(usize),
    #[error(
        "stroke ids must start at 1 and increase by at most 1 (point {index}: {prev} -> {next})"
    )]
    NonMonotoneStrokes { index: usize, prev: u32, next: u32 },
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid template `{class}`: {reason}")]
    InvalidTemplate { class: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

/// One fingertip sample: position and stroke identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub p: f64,
    pub q: f64,
    pub s: u32,
}

impl TrajectoryPoint {
    pub fn new(p: f64, q: f64, s: u32) -> Self {
        Self { p, q, s }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub label: Option<String>,
}

impl Trajectory {
    pub fn new(points: Vec<TrajectoryPoint>) -> Self {
        Self {
            points,
            label: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Builds a trajectory from `[p, q, s]` triples.
    pub fn from_triples(triples: &[[f64; 3]]) -> Self {
        Self::new(
            triples
                .iter()
                .map(|&[p, q, s]| TrajectoryPoint::new(p, q, s as u32))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_strokes(&self) -> usize {
        self.points.last().map_or(0, |p| p.s as usize)
    }

    /// Checks finite coordinates and stroke ids `1, …` with steps of 0 or 1.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let mut prev = 1;
        for (i, pt) in self.points.iter().enumerate() {
            if !pt.p.is_finite() || !pt.q.is_finite() {
                return Err(TrajectoryError::NonFinite(i));
            }
            let ok = if i == 0 {
                pt.s == 1
            } else {
                pt.s == prev || pt.s == prev + 1
            };
            if !ok {
                return Err(TrajectoryError::NonMonotoneStrokes {
                    index: i,
                    prev: if i == 0 { 0 } else { prev },
                    next: pt.s,
                });
            }
            prev = pt.s;
        }
        Ok(())
    }

    /// Contiguous runs of points sharing a stroke id.
    pub fn strokes(&self) -> Vec<&[TrajectoryPoint]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.points.len() {
            if i == self.points.len() || self.points[i].s != self.points[start].s {
                out.push(&self.points[start..i]);
                start = i;
            }
        }
        out
    }

    /// Rigid transform helper used by tests and the generator.
    pub fn map_points(&self, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|pt| {
                    let (p, q) = f(pt.p, pt.q);
                    TrajectoryPoint::new(p, q, pt.s)
                })
                .collect(),
            label: self.label.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_stroke_ids() {
        let ok = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 1.], [1., 1., 2.]]);
        assert!(ok.validate().is_ok());
        let bad_start = Trajectory::from_triples(&[[0., 0., 2.], [1., 0., 2.]]);
        assert!(matches!(
            bad_start.validate(),
            Err(TrajectoryError::NonMonotoneStrokes { index: 0, .. })
        ));
        let back = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 2.], [1., 1., 1.]]);
        assert!(matches!(
            back.validate(),
            Err(TrajectoryError::NonMonotoneStrokes { index: 2, .. })
        ));
        let skip = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 3.]]);
        assert!(skip.validate().is_err());
        let nan = Trajectory::from_triples(&[[f64::NAN, 0., 1.]]);
        assert_eq!(nan.validate(), Err(TrajectoryError::NonFinite(0)));
    }

    #[test]
    fn strokes_split_on_id_change() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 1.], [1., 1., 2.], [2., 1., 3.]]);
        let lens: Vec<usize> = t.strokes().iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![2, 1, 1]);
        assert_eq!(t.num_strokes(), 3);
    }
}
