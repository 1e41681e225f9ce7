use serde::{Deserialize, Serialize};

use super::profiles::{STANDING_BS, STANDING_BT, STANDING_DF, STANDING_TORSO};
use super::SynthError;
use crate::kinematics::{FeatureFrame, JointFrame, Point2};

/// Planar five-joint linkage with fixed segment lengths, in image pixels
/// (y grows downward, the lifter faces +x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linkage {
    pub ankle: Point2,
    pub foot: f64,
    pub tibia: f64,
    pub thigh: f64,
    pub torso: f64,
    /// Height of the bar above the spine_navel joint.
    pub bar_height: f64,
}

impl Default for Linkage {
    fn default() -> Self {
        Self {
            ankle: Point2::new(300.0, 420.0),
            foot: 40.0,
            tibia: 60.0,
            thigh: 60.0,
            torso: 60.0,
            bar_height: 50.0,
        }
    }
}

fn check(frame: usize, ok: bool, reason: impl FnOnce() -> String) -> Result<(), SynthError> {
    if ok {
        Ok(())
    } else {
        Err(SynthError::InfeasiblePose {
            frame,
            reason: reason(),
        })
    }
}

/// Places the joints realizing one feature frame. The knee–hip ratio is not
/// an input: it follows from consecutive dorsiflexion and torso angles.
pub fn joint_frame(f: &FeatureFrame, linkage: &Linkage, frame: usize) -> Result<JointFrame, SynthError> {
    let (bt, df, torso, bs) = (f.bt, f.df, f.torso, f.bs);
    check(frame, (0.0..=90.0).contains(&df), || format!("dorsiflexion {df} outside [0, 90]"))?;
    check(frame, (0.0..=90.0).contains(&torso), || format!("torso angle {torso} outside [0, 90]"))?;
    check(frame, (0.0..=180.0).contains(&bt), || format!("body-thigh angle {bt} outside [0, 180]"))?;
    check(frame, bt + torso <= 180.0, || format!("body-thigh {bt} plus torso {torso} exceeds 180"))?;
    check(frame, bs >= 0.0 && bs.is_finite(), || format!("bar shift {bs} is not a distance"))?;

    let ankle = linkage.ankle;
    let forefoot = ankle.translate(linkage.foot, 0.0);
    let (d, t, th) = (df.to_radians(), torso.to_radians(), (180.0 - bt - torso).to_radians());
    let knee = ankle.translate(linkage.tibia * d.sin(), -linkage.tibia * d.cos());
    let pelvis = knee.translate(-linkage.thigh * th.sin(), -linkage.thigh * th.cos());
    let spine_navel = pelvis.translate(linkage.torso * t.sin(), -linkage.torso * t.cos());
    let center = (ankle.x + forefoot.x) / 2.0;
    let bar = Point2::new(center + bs, spine_navel.y - linkage.bar_height);
    Ok(JointFrame {
        timestamp_ms: f.timestamp_ms,
        pelvis,
        spine_navel,
        knee,
        ankle,
        forefoot,
        bar,
    })
}

pub fn joint_synthesis(curves: &[FeatureFrame]) -> Result<Vec<JointFrame>, SynthError> {
    let linkage = Linkage::default();
    curves
        .iter()
        .enumerate()
        .map(|(i, f)| joint_frame(f, &linkage, i))
        .collect()
}

/// Layout of a whole set: bar in the rack, walk-out, reps, walk back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamOptions {
    pub frame_rate: f64,
    pub rack_frames: usize,
    pub walk_frames: usize,
    /// Horizontal distance walked back from the rack, in pixels.
    pub walk_distance: f64,
    pub settle_frames: usize,
    pub between_reps: usize,
    pub linkage: Linkage,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            frame_rate: 30.0,
            rack_frames: 15,
            walk_frames: 15,
            walk_distance: 60.0,
            settle_frames: 10,
            between_reps: 5,
            linkage: Linkage::default(),
        }
    }
}

fn standing() -> FeatureFrame {
    FeatureFrame {
        timestamp_ms: 0,
        bt: STANDING_BT,
        df: STANDING_DF,
        torso: STANDING_TORSO,
        khr: 0.0,
        bs: STANDING_BS,
    }
}

/// A joint stream for one set: the bar starts racked `walk_distance` pixels
/// ahead of the lifting spot, the lifter walks out, performs `reps` (whole
/// reps, e.g. [`super::SyntheticClip::rep`]) and walks back. Timestamps are
/// reassigned at the frame rate.
pub fn session_stream(reps: &[&[FeatureFrame]], options: &StreamOptions) -> Result<Vec<JointFrame>, SynthError> {
    let mut poses: Vec<(FeatureFrame, f64)> = Vec::new();
    let rest = standing();
    let walk = options.walk_distance;
    let steps = options.walk_frames.max(1) as f64;
    poses.extend(std::iter::repeat_n((rest, walk), options.rack_frames));
    for j in 1..=options.walk_frames {
        poses.push((rest, walk * (1.0 - j as f64 / steps)));
    }
    poses.extend(std::iter::repeat_n((rest, 0.0), options.settle_frames));
    for (k, rep) in reps.iter().enumerate() {
        if k > 0 {
            poses.extend(std::iter::repeat_n((rest, 0.0), options.between_reps));
        }
        poses.extend(rep.iter().map(|f| (*f, 0.0)));
    }
    poses.extend(std::iter::repeat_n((rest, 0.0), options.settle_frames));
    for j in 1..=options.walk_frames {
        poses.push((rest, walk * j as f64 / steps));
    }
    poses.extend(std::iter::repeat_n((rest, walk), options.settle_frames));

    let frame_ms = 1000.0 / options.frame_rate;
    poses
        .iter()
        .enumerate()
        .map(|(i, (f, dx))| {
            let mut frame = joint_frame(f, &options.linkage, i)?.translate(*dx, 0.0);
            frame.timestamp_ms = (i as f64 * frame_ms).round() as i64;
            Ok(frame)
        })
        .collect()
}
