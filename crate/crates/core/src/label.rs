//! The seven squat labels: one good squat and six technique issues.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum SquatLabel {
    Good = 1,
    TooShallow = 2,
    PosteriorPelvicTilt = 3,
    AnteriorPelvicTilt = 4,
    HipRisingTooFast = 5,
    ExcessiveHipDominant = 6,
    ExcessiveKneeDominant = 7,
}

impl SquatLabel {
    pub const ALL: [SquatLabel; 7] = [
        SquatLabel::Good,
        SquatLabel::TooShallow,
        SquatLabel::PosteriorPelvicTilt,
        SquatLabel::AnteriorPelvicTilt,
        SquatLabel::HipRisingTooFast,
        SquatLabel::ExcessiveHipDominant,
        SquatLabel::ExcessiveKneeDominant,
    ];

    /// Labels 2–7.
    pub const ISSUES: [SquatLabel; 6] = [
        SquatLabel::TooShallow,
        SquatLabel::PosteriorPelvicTilt,
        SquatLabel::AnteriorPelvicTilt,
        SquatLabel::HipRisingTooFast,
        SquatLabel::ExcessiveHipDominant,
        SquatLabel::ExcessiveKneeDominant,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    /// Stable snake_case key, used for advice lookups and reports.
    pub fn key(self) -> &'static str {
        match self {
            SquatLabel::Good => "good_squat",
            SquatLabel::TooShallow => "too_shallow",
            SquatLabel::PosteriorPelvicTilt => "posterior_pelvic_tilt",
            SquatLabel::AnteriorPelvicTilt => "anterior_pelvic_tilt",
            SquatLabel::HipRisingTooFast => "hip_rising_too_fast",
            SquatLabel::ExcessiveHipDominant => "excessive_hip_dominant",
            SquatLabel::ExcessiveKneeDominant => "excessive_knee_dominant",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SquatLabel::Good => "good squat",
            SquatLabel::TooShallow => "too shallow",
            SquatLabel::PosteriorPelvicTilt => "posterior pelvic tilt",
            SquatLabel::AnteriorPelvicTilt => "anterior pelvic tilt",
            SquatLabel::HipRisingTooFast => "hip rising too fast",
            SquatLabel::ExcessiveHipDominant => "excessive hip dominant",
            SquatLabel::ExcessiveKneeDominant => "excessive knee dominant",
        }
    }
}

impl TryFrom<u8> for SquatLabel {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Self::from_number(n).ok_or_else(|| format!("squat label must be 1..=7, got {n}"))
    }
}

impl From<SquatLabel> for u8 {
    fn from(label: SquatLabel) -> u8 {
        label.number()
    }
}

impl fmt::Display for SquatLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Label {} ({})", self.number(), self.description())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for label in SquatLabel::ALL {
            assert_eq!(SquatLabel::from_number(label.number()), Some(label));
        }
        assert_eq!(SquatLabel::from_number(0), None);
        assert_eq!(SquatLabel::from_number(8), None);
        assert_eq!(serde_json::to_string(&SquatLabel::HipRisingTooFast).unwrap(), "5");
        assert!(serde_json::from_str::<SquatLabel>("9").is_err());
    }
}
