use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::io::parse_templates;
use super::preprocess::{normalize, resample, DEFAULT_SPACING};
use super::{Trajectory, TrajectoryError, TrajectoryPoint};

const BUILTIN_GLYPHS: &str = include_str!("../../assets/glyphs20.json");

/// A class prototype: polylines of control points in the unit square
/// (y grows downward).
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphTemplate {
    pub class_id: usize,
    pub label: String,
    pub strokes: Vec<Vec<[f64; 2]>>,
}

impl GlyphTemplate {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let invalid = |reason: &str| TrajectoryError::InvalidTemplate {
            class: self.label.clone(),
            reason: reason.to_string(),
        };
        if self.strokes.is_empty() {
            return Err(invalid("no strokes"));
        }
        if self.strokes.iter().any(|s| s.len() < 2) {
            return Err(invalid("every stroke needs at least 2 control points"));
        }
        if self
            .strokes
            .iter()
            .flatten()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(invalid("non-finite control point"));
        }
        Ok(())
    }

    /// The template as a raw trajectory (stroke ids from 1).
    pub fn to_trajectory(&self) -> Trajectory {
        let points = self
            .strokes
            .iter()
            .enumerate()
            .flat_map(|(i, stroke)| {
                stroke
                    .iter()
                    .map(move |&[x, y]| TrajectoryPoint::new(x, y, i as u32 + 1))
            })
            .collect();
        Trajectory::new(points).with_label(self.label.clone())
    }
}

/// The shipped 20-glyph set (digits and ten capital letters).
pub fn builtin_templates() -> Vec<GlyphTemplate> {
    parse_templates(BUILTIN_GLYPHS).expect("bundled glyph set is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub per_class: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian jitter on every control point.
    pub noise: f64,
    /// Rotation drawn uniformly from ±this many degrees.
    pub max_rotation_deg: f64,
    /// Per-axis scale drawn uniformly from 1 ± this.
    pub scale_jitter: f64,
    pub spacing: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            per_class: 100,
            seed: 7,
            noise: 0.02,
            max_rotation_deg: 10.0,
            scale_jitter: 0.1,
            spacing: DEFAULT_SPACING,
        }
    }
}

/// Draws `per_class` distorted, resampled and normalized samples of every
/// template, class by class. Output is a pure function of the config.
pub fn synth_generate(
    templates: &[GlyphTemplate],
    cfg: &SynthConfig,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jitter =
        Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| TrajectoryError::InvalidTemplate {
            class: String::new(),
            reason: format!("noise: {e}"),
        })?;
    let mut out = Vec::with_capacity(templates.len() * cfg.per_class);
    for template in templates {
        template.validate()?;
        for _ in 0..cfg.per_class {
            let theta = (rng.random::<f64>() * 2.0 - 1.0) * cfg.max_rotation_deg.to_radians();
            let sx = 1.0 + (rng.random::<f64>() * 2.0 - 1.0) * cfg.scale_jitter;
            let sy = 1.0 + (rng.random::<f64>() * 2.0 - 1.0) * cfg.scale_jitter;
            let (sin, cos) = theta.sin_cos();
            let mut points = Vec::new();
            for (i, stroke) in template.strokes.iter().enumerate() {
                for &[x, y] in stroke {
                    let (jx, jy) = (x + jitter.sample(&mut rng), y + jitter.sample(&mut rng));
                    let (dx, dy) = ((jx - 0.5) * sx, (jy - 0.5) * sy);
                    let p = 0.5 + cos * dx - sin * dy;
                    let q = 0.5 + sin * dx + cos * dy;
                    points.push(TrajectoryPoint::new(p, q, i as u32 + 1));
                }
            }
            let raw = Trajectory::new(points).with_label(template.label.clone());
            out.push(normalize(&resample(&normalize(&raw)?, cfg.spacing))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::preprocess;

    #[test]
    fn builtin_set_has_twenty_valid_glyphs() {
        let t = builtin_templates();
        assert_eq!(t.len(), 20);
        assert!(t.iter().all(|g| g.validate().is_ok()));
        let ids: Vec<usize> = t.iter().map(|g| g.class_id).collect();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn zero_distortion_reproduces_template() {
        let templates = builtin_templates();
        let cfg = SynthConfig {
            per_class: 1,
            seed: 1,
            noise: 0.0,
            max_rotation_deg: 0.0,
            scale_jitter: 0.0,
            ..SynthConfig::default()
        };
        let samples = synth_generate(&templates, &cfg).unwrap();
        for (s, t) in samples.iter().zip(&templates) {
            let want = normalize(&preprocess(&t.to_trajectory(), cfg.spacing).unwrap()).unwrap();
            assert_eq!(s.len(), want.len());
            assert_eq!(s.label, want.label);
            for (a, b) in s.points.iter().zip(&want.points) {
                assert_eq!(a.s, b.s);
                assert!((a.p - b.p).abs() < 1e-9 && (a.q - b.q).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_and_balanced() {
        let templates = builtin_templates();
        let cfg = SynthConfig {
            per_class: 5,
            ..SynthConfig::default()
        };
        let a = synth_generate(&templates, &cfg).unwrap();
        let b = synth_generate(&templates, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        for t in &templates {
            let n = a
                .iter()
                .filter(|s| s.label.as_deref() == Some(&t.label))
                .count();
            assert_eq!(n, 5);
        }
        let other = synth_generate(&templates, &SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn invalid_template_rejected() {
        let bad = GlyphTemplate {
            class_id: 0,
            label: "x".into(),
            strokes: vec![vec![[0.0, 0.0]]],
        };
        assert!(synth_generate(&[bad], &SynthConfig::default()).is_err());
    }
}
