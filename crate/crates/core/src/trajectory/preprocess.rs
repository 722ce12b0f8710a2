use super::{Trajectory, TrajectoryError, TrajectoryPoint};

/// Default resampling distance in normalized units (about 50 points per unit
/// of path, close to 30 FPS capture density).
pub const DEFAULT_SPACING: f64 = 0.02;

/// Roots this close past a segment end count as landing on the vertex.
const SEGMENT_END_TOL: f64 = 1e-9;

/// Maps the trajectory into the unit square, centered, preserving aspect
/// ratio. A degenerate bounding box maps every point to (0.5, 0.5).
pub fn normalize(traj: &Trajectory) -> Result<Trajectory, TrajectoryError> {
    let first = traj.points.first().ok_or(TrajectoryError::Empty)?;
    let (mut min_p, mut max_p, mut min_q, mut max_q) = (first.p, first.p, first.q, first.q);
    for pt in &traj.points {
        min_p = min_p.min(pt.p);
        max_p = max_p.max(pt.p);
        min_q = min_q.min(pt.q);
        max_q = max_q.max(pt.q);
    }
    let extent = (max_p - min_p).max(max_q - min_q);
    let (cp, cq) = ((min_p + max_p) / 2.0, (min_q + max_q) / 2.0);
    if extent <= 0.0 {
        return Ok(traj.map_points(|_, _| (0.5, 0.5)));
    }
    Ok(traj.map_points(|p, q| ((p - cp) / extent + 0.5, (q - cq) / extent + 0.5)))
}

/// Resamples every stroke independently so consecutive points are exactly
/// `spacing` apart (Euclidean), walking along the original polyline. Stroke
/// endpoints are kept; on straight runs this is plain arc-length subdivision.
pub fn resample(traj: &Trajectory, spacing: f64) -> Trajectory {
    assert!(spacing > 0.0, "resample spacing must be positive");
    let mut points = Vec::with_capacity(traj.len());
    for stroke in traj.strokes() {
        resample_stroke(stroke, spacing, &mut points);
    }
    Trajectory {
        points,
        label: traj.label.clone(),
    }
}

fn resample_stroke(stroke: &[TrajectoryPoint], spacing: f64, out: &mut Vec<TrajectoryPoint>) {
    let s = stroke[0].s;
    let first = stroke[0];
    let last = stroke[stroke.len() - 1];
    let start_len = out.len();
    out.push(first);
    let mut cur = (first.p, first.q);
    let mut seg = 0;
    let mut u0 = 0.0;
    while seg + 1 < stroke.len() {
        let a = (stroke[seg].p, stroke[seg].q);
        let b = (stroke[seg + 1].p, stroke[seg + 1].q);
        let d = (b.0 - a.0, b.1 - a.1);
        let w = (a.0 - cur.0, a.1 - cur.1);
        // |w + u·d|² = spacing², largest root (the walk starts inside the circle)
        let qa = d.0 * d.0 + d.1 * d.1;
        if qa == 0.0 {
            seg += 1;
            u0 = 0.0;
            continue;
        }
        let qb = w.0 * d.0 + w.1 * d.1;
        let qc = w.0 * w.0 + w.1 * w.1 - spacing * spacing;
        let disc = qb * qb - qa * qc;
        let u = if disc >= 0.0 {
            (-qb + disc.sqrt()) / qa
        } else {
            f64::INFINITY
        };
        if u >= u0 && u <= 1.0 + SEGMENT_END_TOL {
            cur = if u >= 1.0 {
                b
            } else {
                (a.0 + u * d.0, a.1 + u * d.1)
            };
            let u = u.min(1.0);
            out.push(TrajectoryPoint::new(cur.0, cur.1, s));
            u0 = u;
        } else {
            seg += 1;
            u0 = 0.0;
        }
    }
    if stroke.len() == 1 {
        return;
    }
    // Snap a final sample that landed on the endpoint instead of duplicating it.
    let tail = out.len() - 1;
    let near_end = (out[tail].p - last.p).hypot(out[tail].q - last.q) <= spacing * 1e-6;
    if tail > start_len && near_end {
        out[tail] = last;
    } else {
        out.push(last);
    }
}

/// The inference-time preparation chain: normalize, then resample.
pub fn preprocess(traj: &Trajectory, spacing: f64) -> Result<Trajectory, TrajectoryError> {
    Ok(resample(&normalize(traj)?, spacing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn normalize_preserves_aspect() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [100., 50., 1.], [50., 25., 1.]]);
        let n = normalize(&t).unwrap();
        let ps: Vec<(f64, f64)> = n.points.iter().map(|p| (p.p, p.q)).collect();
        assert_eq!(ps, vec![(0.0, 0.25), (1.0, 0.75), (0.5, 0.5)]);
    }

    #[test]
    fn normalize_unit_square_and_degenerate() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [1., 1., 1.], [0.5, 0.2, 1.]]);
        assert_eq!(normalize(&t).unwrap(), t);
        let same = Trajectory::from_triples(&[[3., 4., 1.], [3., 4., 1.]]);
        assert!(normalize(&same)
            .unwrap()
            .points
            .iter()
            .all(|p| p.p == 0.5 && p.q == 0.5));
        assert_eq!(
            normalize(&Trajectory::default()),
            Err(TrajectoryError::Empty)
        );
    }

    #[test]
    fn resample_straight_segment() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 1.]]);
        let r = resample(&t, 0.25);
        let xs: Vec<f64> = r.points.iter().map(|p| p.p).collect();
        assert_eq!(xs.len(), 5);
        for (x, want) in xs.iter().zip([0.0, 0.25, 0.5, 0.75, 1.0]) {
            assert!(close(*x, want, 1e-12));
        }
        assert!(r.points.iter().all(|p| p.q == 0.0 && p.s == 1));
    }

    #[test]
    fn resample_short_stroke_keeps_endpoints() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [0.05, 0., 1.], [0.1, 0., 1.]]);
        let r = resample(&t, 0.25);
        assert_eq!(r.points, vec![t.points[0], t.points[2]]);
    }

    #[test]
    fn resample_l_shape_keeps_corner() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 1.], [1., 1., 1.]]);
        let r = resample(&t, 0.5);
        assert_eq!(r.len(), 5);
        let corner_dist = r
            .points
            .iter()
            .map(|p| (p.p - 1.0).hypot(p.q))
            .fold(f64::INFINITY, f64::min);
        assert!(corner_dist <= 0.25);
    }

    #[test]
    fn resample_keeps_strokes_separate() {
        let t = Trajectory::from_triples(&[[0., 0., 1.], [1., 0., 1.], [0., 1., 2.], [1., 1., 2.]]);
        let r = resample(&t, 0.5);
        let ids: Vec<u32> = r.points.iter().map(|p| p.s).collect();
        assert_eq!(ids, vec![1, 1, 1, 2, 2, 2]);
        assert_eq!(r.points[3].p, 0.0);
        assert_eq!(r.points[3].q, 1.0);
    }
}
