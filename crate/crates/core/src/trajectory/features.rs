use super::{Trajectory, TrajectoryError};
use crate::tensor::Tensor;

pub const FEATURE_DIM: usize = 8;

/// Per-point derivative features: offsets, writing direction, curvature and
/// the stroke-continuation indicator pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub dp: f64,
    pub dq: f64,
    pub sin_a: f64,
    pub cos_a: f64,
    pub sin_b: f64,
    pub cos_b: f64,
    pub same_stroke: f64,
    pub new_stroke: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.dp,
            self.dq,
            self.sin_a,
            self.cos_a,
            self.sin_b,
            self.cos_b,
            self.same_stroke,
            self.new_stroke,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub rows: Vec<FeatureVector>,
}

impl FeatureSequence {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[T × 8]` tensor of the rows.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.rows.iter().flat_map(|r| r.to_array()).collect();
        Tensor::new(&[self.rows.len(), FEATURE_DIM], data).expect("feature rows are 8 wide")
    }
}

/// Unit direction of `(x, y)`, or `(sin, cos) = (0, 1)` for a zero vector.
fn direction(x: f64, y: f64) -> (f64, f64) {
    let n = x.hypot(y);
    if n == 0.0 {
        (0.0, 1.0)
    } else {
        (y / n, x / n)
    }
}

/// One row per interior point: row `t` uses the movement `v_t = P_{t+1} − P_t`
/// for offsets and direction, and the turn from `v_t` to `v_{t+1}` for
/// curvature. A `T`-point trajectory yields `T − 2` rows.
pub fn extract_features(traj: &Trajectory) -> Result<FeatureSequence, TrajectoryError> {
    let pts = &traj.points;
    if pts.len() < 3 {
        return Err(TrajectoryError::TooShort(pts.len()));
    }
    let rows = pts
        .windows(3)
        .map(|w| {
            let (vx, vy) = (w[1].p - w[0].p, w[1].q - w[0].q);
            let (ux, uy) = (w[2].p - w[1].p, w[2].q - w[1].q);
            let (sin_a, cos_a) = direction(vx, vy);
            // Curvature from the angle between successive movement vectors,
            // computed on the unit directions so the pair stays on the circle.
            let (sin_b, cos_b) = if vx.hypot(vy) == 0.0 || ux.hypot(uy) == 0.0 {
                (0.0, 1.0)
            } else {
                let (su, cu) = direction(ux, uy);
                let cross = cos_a * su - sin_a * cu;
                let dot = cos_a * cu + sin_a * su;
                direction(dot, cross)
            };
            let same = w[0].s == w[1].s;
            FeatureVector {
                dp: vx,
                dq: vy,
                sin_a,
                cos_a,
                sin_b,
                cos_b,
                same_stroke: if same { 1.0 } else { 0.0 },
                new_stroke: if same { 0.0 } else { 1.0 },
            }
        })
        .collect();
    Ok(FeatureSequence { rows })
}
