//! Per-label template curves. All absolute anchor values live here.
//!
//! A template describes the recorded part of one rep (body–thigh angle under
//! 140°) over normalized time `u ∈ [0, 1]`. Curves are piecewise half-cosine
//! segments between `(u, value)` anchors. The torso angle is not given
//! directly: it is a monotone function of dorsiflexion, one for the descent
//! and one for the ascent, which keeps the knee–hip ratio smooth and bounded.

use std::f64::consts::PI;

use crate::label::SquatLabel;

/// Body–thigh angle at the first and last recorded frame.
pub const BT_EDGE: f64 = 136.0;
/// Body–thigh angle at the end of the lead-in and the start of the lead-out.
pub const BT_LEAD_EDGE: f64 = 144.0;
/// Standing pose between reps.
pub const STANDING_BT: f64 = 175.0;
pub const STANDING_DF: f64 = 5.0;
pub const STANDING_TORSO: f64 = 5.0;
pub const STANDING_BS: f64 = 4.0;
/// Frames spent moving between standing and the recording threshold.
pub const LEAD_FRAMES: usize = 8;
/// Upper bound on the max−min spread of a good squat's bar-shift template.
pub const GOOD_BS_FLATNESS: f64 = 6.0;

pub type Anchors = &'static [(f64, f64)];

#[derive(Debug, Clone, Copy)]
pub struct LabelTemplate {
    pub bt: Anchors,
    pub df: Anchors,
    pub bs: Anchors,
    pub torso_start: f64,
    pub torso_peak: f64,
    pub torso_end: f64,
    /// Quadratic weight of the descent torso map, in (−1, 1).
    pub descent_curvature: f64,
    /// Quadratic weight of the ascent torso map, in (−1, 1).
    pub ascent_curvature: f64,
}

const GOOD: LabelTemplate = LabelTemplate {
    bt: &[(0.0, BT_EDGE), (0.45, 70.0), (0.55, 70.0), (1.0, BT_EDGE)],
    df: &[(0.0, 14.0), (0.45, 40.0), (0.55, 40.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.5, 7.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 38.0,
    torso_end: 12.0,
    descent_curvature: 0.3,
    ascent_curvature: 0.3,
};

const TOO_SHALLOW: LabelTemplate = LabelTemplate {
    bt: &[(0.0, BT_EDGE), (0.45, 100.0), (0.55, 100.0), (1.0, BT_EDGE)],
    df: &[(0.0, 14.0), (0.45, 28.0), (0.55, 28.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.5, 7.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 32.0,
    torso_end: 16.0,
    descent_curvature: 0.3,
    ascent_curvature: 0.3,
};

const POSTERIOR_TILT: LabelTemplate = LabelTemplate {
    bt: GOOD.bt,
    df: &[(0.0, 14.0), (0.45, 32.0), (0.55, 32.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.5, 9.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 46.0,
    torso_end: 12.0,
    descent_curvature: -0.2,
    ascent_curvature: 0.3,
};

const ANTERIOR_TILT: LabelTemplate = LabelTemplate {
    bt: GOOD.bt,
    df: &[(0.0, 14.0), (0.45, 48.0), (0.55, 48.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.5, 6.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 34.0,
    torso_end: 12.0,
    descent_curvature: 0.3,
    ascent_curvature: 0.0,
};

const HIP_RISING: LabelTemplate = LabelTemplate {
    bt: &[(0.0, BT_EDGE), (0.45, 70.0), (0.70, 72.0), (1.0, BT_EDGE)],
    df: &[(0.0, 14.0), (0.45, 40.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.5, 7.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 38.0,
    torso_end: 12.0,
    descent_curvature: 0.3,
    ascent_curvature: 0.75,
};

const HIP_DOMINANT: LabelTemplate = LabelTemplate {
    bt: &[(0.0, BT_EDGE), (0.30, 68.0), (0.55, 76.0), (1.0, BT_EDGE)],
    df: &[(0.0, 14.0), (0.30, 20.0), (0.62, 40.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.25, 26.0), (0.5, 8.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 44.0,
    torso_end: 12.0,
    descent_curvature: 0.3,
    ascent_curvature: 0.3,
};

const KNEE_DOMINANT: LabelTemplate = LabelTemplate {
    bt: &[(0.0, BT_EDGE), (0.45, 60.0), (0.55, 60.0), (1.0, BT_EDGE)],
    df: &[(0.0, 14.0), (0.2, 36.0), (0.45, 44.0), (0.55, 44.0), (1.0, 14.0)],
    bs: &[(0.0, 4.0), (0.3, 4.0), (0.6, 30.0), (0.8, 8.0), (1.0, 4.0)],
    torso_start: 25.0,
    torso_peak: 36.0,
    torso_end: 12.0,
    descent_curvature: 0.7,
    ascent_curvature: 0.3,
};

pub fn template(label: SquatLabel) -> &'static LabelTemplate {
    match label {
        SquatLabel::Good => &GOOD,
        SquatLabel::TooShallow => &TOO_SHALLOW,
        SquatLabel::PosteriorPelvicTilt => &POSTERIOR_TILT,
        SquatLabel::AnteriorPelvicTilt => &ANTERIOR_TILT,
        SquatLabel::HipRisingTooFast => &HIP_RISING,
        SquatLabel::ExcessiveHipDominant => &HIP_DOMINANT,
        SquatLabel::ExcessiveKneeDominant => &KNEE_DOMINANT,
    }
}

/// Half-cosine interpolation through the anchors; clamps outside [0, 1].
pub fn half_cosine(anchors: &[(f64, f64)], u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    for w in anchors.windows(2) {
        let ((u0, v0), (u1, v1)) = (w[0], w[1]);
        if u <= u1 {
            if u1 <= u0 {
                return v1;
            }
            let s = (u - u0) / (u1 - u0);
            return v0 + (v1 - v0) * (1.0 - (PI * s).cos()) / 2.0;
        }
    }
    anchors.last().map_or(0.0, |a| a.1)
}
