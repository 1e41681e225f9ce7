//! Sagittal-view squat geometry: the four per-frame features (body–thigh
//! angle, dorsiflexion, knee–hip ratio, bar shift) plus the torso angle that
//! the knee–hip ratio is built from.
//!
//! Coordinates are image pixels: x grows to the right, y grows downward.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Torso deviations smaller than this (degrees) are treated as zero when
/// forming the knee–hip ratio.
pub const KHR_EPSILON: f64 = 1e-6;

/// Segments shorter than this (pixels) count as coincident points.
const COINCIDENT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("degenerate geometry{}: {first} and {second} coincide", frame.map(|i| format!(" at frame {i}")).unwrap_or_default())]
    DegenerateGeometry {
        frame: Option<usize>,
        first: &'static str,
        second: &'static str,
    },
}

impl KinematicsError {
    fn degenerate(first: &'static str, second: &'static str) -> Self {
        Self::DegenerateGeometry {
            frame: None,
            first,
            second,
        }
    }

    fn at_frame(self, index: usize) -> Self {
        match self {
            Self::DegenerateGeometry { first, second, .. } => Self::DegenerateGeometry {
                frame: Some(index),
                first,
                second,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn translate(self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// One timestamped skeleton sample from the side camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFrame {
    pub timestamp_ms: i64,
    pub pelvis: Point2,
    pub spine_navel: Point2,
    pub knee: Point2,
    pub ankle: Point2,
    pub forefoot: Point2,
    pub bar: Point2,
}

impl JointFrame {
    pub fn points(&self) -> [Point2; 6] {
        [
            self.pelvis,
            self.spine_navel,
            self.knee,
            self.ankle,
            self.forefoot,
            self.bar,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.points().iter().all(Point2::is_finite)
    }

    /// Rigidly shifts every point of the frame.
    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            timestamp_ms: self.timestamp_ms,
            pelvis: self.pelvis.translate(dx, dy),
            spine_navel: self.spine_navel.translate(dx, dy),
            knee: self.knee.translate(dx, dy),
            ankle: self.ankle.translate(dx, dy),
            forefoot: self.forefoot.translate(dx, dy),
            bar: self.bar.translate(dx, dy),
        }
    }
}

/// Per-frame feature values. Angles in degrees, bar shift in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub timestamp_ms: i64,
    pub bt: f64,
    pub df: f64,
    pub torso: f64,
    pub khr: f64,
    pub bs: f64,
}

fn segment(from: Point2, to: Point2, names: (&'static str, &'static str)) -> Result<(f64, f64), KinematicsError> {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    if dx.hypot(dy) <= COINCIDENT_EPSILON {
        return Err(KinematicsError::degenerate(names.0, names.1));
    }
    Ok((dx, dy))
}

/// Angle between a line and the image vertical, folded into [0, 90].
fn line_vs_vertical(dx: f64, dy: f64) -> f64 {
    dx.abs().atan2(dy.abs()).to_degrees()
}

/// Interior angle at the pelvis between the torso (towards the spine navel)
/// and the thigh (towards the knee), in [0, 180].
pub fn body_thigh_angle(pelvis: Point2, spine_navel: Point2, knee: Point2) -> Result<f64, KinematicsError> {
    let (ax, ay) = segment(pelvis, spine_navel, ("pelvis", "spine_navel"))?;
    let (bx, by) = segment(pelvis, knee, ("pelvis", "knee"))?;
    let cross = ax * by - ay * bx;
    let dot = ax * bx + ay * by;
    Ok(cross.abs().atan2(dot).to_degrees())
}

/// x of the vertical line through the middle of the foot.
pub fn centerline_x(ankle: Point2, forefoot: Point2) -> f64 {
    (ankle.x + forefoot.x) / 2.0
}

/// Angle between the tibia and the vertical centerline, in [0, 90].
pub fn dorsiflexion(knee: Point2, ankle: Point2) -> Result<f64, KinematicsError> {
    let (dx, dy) = segment(ankle, knee, ("ankle", "knee"))?;
    Ok(line_vs_vertical(dx, dy))
}

/// Angle between the pelvis→spine-navel line and the vertical, in [0, 90].
pub fn torso_angle(pelvis: Point2, spine_navel: Point2) -> Result<f64, KinematicsError> {
    let (dx, dy) = segment(pelvis, spine_navel, ("pelvis", "spine_navel"))?;
    Ok(line_vs_vertical(dx, dy))
}

/// Frame-to-frame dorsiflexion change over torso-angle change.
///
/// Returns `None` when the torso change is below [`KHR_EPSILON`]; callers
/// carry the previous ratio forward in that case (see [`KhrTracker`]).
pub fn knee_hip_ratio(df_curr: f64, df_prev: f64, torso_curr: f64, torso_prev: f64) -> Option<f64> {
    let torso_delta = torso_curr - torso_prev;
    if torso_delta.abs() < KHR_EPSILON {
        None
    } else {
        Some((df_curr - df_prev) / torso_delta)
    }
}

/// Horizontal distance of the bar marker from the foot centerline.
pub fn bar_shift(bar: Point2, centerline_x: f64) -> f64 {
    (bar.x - centerline_x).abs()
}

/// Running knee–hip ratio with the carry-forward guard. The first frame's
/// ratio is 0.
#[derive(Debug, Clone, Default)]
pub struct KhrTracker {
    prev: Option<(f64, f64)>,
    last: f64,
}

impl KhrTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, df: f64, torso: f64) -> f64 {
        if let Some((df_prev, torso_prev)) = self.prev {
            if let Some(ratio) = knee_hip_ratio(df, df_prev, torso, torso_prev) {
                self.last = ratio;
            }
        }
        self.prev = Some((df, torso));
        self.last
    }
}

/// Geometric features of a single frame, without the knee–hip ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameAngles {
    pub bt: f64,
    pub df: f64,
    pub torso: f64,
    pub bs: f64,
}

pub fn frame_angles(frame: &JointFrame) -> Result<FrameAngles, KinematicsError> {
    Ok(FrameAngles {
        bt: body_thigh_angle(frame.pelvis, frame.spine_navel, frame.knee)?,
        df: dorsiflexion(frame.knee, frame.ankle)?,
        torso: torso_angle(frame.pelvis, frame.spine_navel)?,
        bs: bar_shift(frame.bar, centerline_x(frame.ankle, frame.forefoot)),
    })
}

/// Incremental extractor for live streams; keeps only the knee–hip memory.
#[derive(Debug, Clone, Default)]
pub struct FeatureExtractor {
    khr: KhrTracker,
    index: usize,
}

impl FeatureExtractor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: &JointFrame) -> Result<FeatureFrame, KinematicsError> {
        let index = self.index;
        let angles = frame_angles(frame).map_err(|e| e.at_frame(index))?;
        self.index += 1;
        Ok(FeatureFrame {
            timestamp_ms: frame.timestamp_ms,
            bt: angles.bt,
            df: angles.df,
            torso: angles.torso,
            khr: self.khr.push(angles.df, angles.torso),
            bs: angles.bs,
        })
    }
}

/// Features for a whole ordered stream, one output frame per input frame.
pub fn extract_features(frames: &[JointFrame]) -> Result<Vec<FeatureFrame>, KinematicsError> {
    let mut extractor = FeatureExtractor::new();
    frames.iter().map(|f| extractor.push(f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn p(x: f64, y: f64) -> Point2 {
        Point2::new(x, y)
    }

    fn upright(t: i64) -> JointFrame {
        JointFrame {
            timestamp_ms: t,
            pelvis: p(100.0, 100.0),
            spine_navel: p(100.0, 40.0),
            knee: p(100.0, 160.0),
            ankle: p(100.0, 220.0),
            forefoot: p(100.0, 220.0),
            bar: p(100.0, 20.0),
        }
    }

    #[test]
    fn body_thigh_examples() {
        let bt = |k| body_thigh_angle(p(100.0, 100.0), p(100.0, 40.0), k).unwrap();
        assert_abs_diff_eq!(bt(p(100.0, 160.0)), 180.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bt(p(160.0, 100.0)), 90.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bt(p(160.0, 160.0)), 135.0, epsilon = 1e-12);
    }

    #[test]
    fn coincident_points_name_the_joints() {
        let err = body_thigh_angle(p(1.0, 1.0), p(1.0, 1.0), p(3.0, 3.0)).unwrap_err();
        assert_eq!(err, KinematicsError::degenerate("pelvis", "spine_navel"));
        assert!(dorsiflexion(p(5.0, 5.0), p(5.0, 5.0)).is_err());
        assert!(torso_angle(p(5.0, 5.0), p(5.0, 5.0)).is_err());
    }

    #[test]
    fn centerline_examples() {
        assert_eq!(centerline_x(p(100.0, 200.0), p(140.0, 200.0)), 120.0);
        assert_eq!(centerline_x(p(0.0, 0.0), p(0.0, 0.0)), 0.0);
        assert_eq!(centerline_x(p(97.0, 210.0), p(151.0, 214.0)), 124.0);
    }

    #[test]
    fn line_angle_examples() {
        assert_abs_diff_eq!(dorsiflexion(p(100.0, 140.0), p(100.0, 200.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(dorsiflexion(p(160.0, 140.0), p(100.0, 200.0)).unwrap(), 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dorsiflexion(p(100.0, 260.0), p(100.0, 200.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(torso_angle(p(100.0, 100.0), p(100.0, 40.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(torso_angle(p(100.0, 100.0), p(160.0, 40.0)).unwrap(), 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(torso_angle(p(100.0, 100.0), p(160.0, 100.0)).unwrap(), 90.0, epsilon = 1e-12);
    }

    #[test]
    fn khr_examples() {
        assert_eq!(knee_hip_ratio(34.0, 32.0, 11.0, 10.0), Some(2.0));
        assert_eq!(knee_hip_ratio(32.0, 32.0, 12.0, 10.0), Some(0.0));
        assert_eq!(knee_hip_ratio(33.0, 30.0, 10.0, 10.0), None);

        let mut tracker = KhrTracker::new();
        assert_eq!(tracker.push(30.0, 10.0), 0.0);
        assert_eq!(tracker.push(33.0, 10.0), 0.0);
        assert_eq!(tracker.push(35.0, 11.0), 2.0);
        assert_eq!(tracker.push(36.0, 11.0), 2.0);
    }

    #[test]
    fn bar_shift_examples() {
        assert_eq!(bar_shift(p(120.0, 80.0), 120.0), 0.0);
        assert_eq!(bar_shift(p(135.0, 80.0), 120.0), 15.0);
        assert_eq!(bar_shift(p(105.0, 80.0), 120.0), 15.0);
    }

    #[test]
    fn upright_frame_features() {
        let out = extract_features(&[upright(0)]).unwrap();
        let f = out[0];
        assert_abs_diff_eq!(f.bt, 180.0, epsilon = 1e-12);
        assert_eq!((f.df, f.torso, f.khr, f.bs), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn second_frame_khr() {
        // df 0 -> 2 degrees, torso 0 -> 1 degree.
        let mut second = upright(33);
        let df = 2f64.to_radians();
        second.knee = p(100.0 + 60.0 * df.sin(), 220.0 - 60.0 * df.cos());
        let torso = 1f64.to_radians();
        second.spine_navel = p(100.0 + 60.0 * torso.sin(), 100.0 - 60.0 * torso.cos());
        let out = extract_features(&[upright(0), second]).unwrap();
        assert_eq!(out[0].khr, 0.0);
        assert_abs_diff_eq!(out[1].khr, 2.0, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_frame_reports_index() {
        let mut bad = upright(66);
        bad.knee = bad.ankle;
        let err = extract_features(&[upright(0), upright(33), bad]).unwrap_err();
        assert!(matches!(err, KinematicsError::DegenerateGeometry { frame: Some(2), .. }));
    }

    fn arb_point() -> impl Strategy<Value = Point2> {
        (-500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y)| p(x, y))
    }

    fn arb_frame() -> impl Strategy<Value = JointFrame> {
        (arb_point(), arb_point(), arb_point(), arb_point(), arb_point(), arb_point()).prop_map(
            |(pelvis, spine_navel, knee, ankle, forefoot, bar)| JointFrame {
                timestamp_ms: 0,
                pelvis,
                spine_navel,
                knee,
                ankle,
                forefoot,
                bar,
            },
        )
    }

    proptest! {
        #[test]
        fn ranges_hold(frame in arb_frame()) {
            if let Ok(a) = frame_angles(&frame) {
                prop_assert!((0.0..=180.0).contains(&a.bt));
                prop_assert!((0.0..=90.0).contains(&a.df));
                prop_assert!((0.0..=90.0).contains(&a.torso));
                prop_assert!(a.bs >= 0.0);
            }
        }

        #[test]
        fn rigid_translation_changes_nothing(frame in arb_frame(), dx in -100i32..100, dy in -100i32..100) {
            // Integer offsets keep the pixel arithmetic exact.
            let frame = JointFrame {
                pelvis: p(frame.pelvis.x.round(), frame.pelvis.y.round()),
                spine_navel: p(frame.spine_navel.x.round(), frame.spine_navel.y.round()),
                knee: p(frame.knee.x.round(), frame.knee.y.round()),
                ankle: p(frame.ankle.x.round(), frame.ankle.y.round()),
                forefoot: p(frame.forefoot.x.round(), frame.forefoot.y.round()),
                bar: p(frame.bar.x.round(), frame.bar.y.round()),
                ..frame
            };
            let moved = frame.translate(dx as f64, dy as f64);
            prop_assert_eq!(frame_angles(&frame).ok(), frame_angles(&moved).ok());
        }

        #[test]
        fn mirror_about_centerline(frame in arb_frame()) {
            let c = centerline_x(frame.ankle, frame.forefoot);
            let m = |q: Point2| p(2.0 * c - q.x, q.y);
            let mirrored = JointFrame {
                pelvis: m(frame.pelvis),
                spine_navel: m(frame.spine_navel),
                knee: m(frame.knee),
                ankle: m(frame.ankle),
                forefoot: m(frame.forefoot),
                bar: m(frame.bar),
                ..frame
            };
            if let (Ok(a), Ok(b)) = (frame_angles(&frame), frame_angles(&mirrored)) {
                prop_assert!((a.bt - b.bt).abs() < 1e-9);
                prop_assert!((a.df - b.df).abs() < 1e-9);
                prop_assert!((a.torso - b.torso).abs() < 1e-9);
                prop_assert!((a.bs - b.bs).abs() < 1e-9);
            }
        }

        #[test]
        fn extraction_preserves_length(frames in proptest::collection::vec(arb_frame(), 1..20)) {
            if let Ok(out) = extract_features(&frames) {
                prop_assert_eq!(out.len(), frames.len());
                prop_assert_eq!(out[0].khr, 0.0);
                prop_assert_eq!(extract_features(&frames).unwrap(), out);
            }
        }
    }
}
