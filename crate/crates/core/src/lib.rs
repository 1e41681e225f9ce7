//! Barbell-squat diagnosis: per-frame kinematics, clip preprocessing, the four
//! issue classifiers, Shapley attribution for channel selection, grading, and
//! the live rep-segmentation state machine.

pub mod kinematics;
pub mod label;
pub mod preprocess;
pub mod models;
pub mod synthgen;
pub mod attribution;
pub mod diagnosis;
pub mod session;
pub mod pipeline;
pub mod container;
