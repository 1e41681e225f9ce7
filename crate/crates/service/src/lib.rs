//! Storage formats, live session service and replay API for squat diagnosis.

pub mod api;
pub mod archive;
pub mod cli;
pub mod corpus;
pub mod formats;
pub mod hub;
pub mod joints;
pub mod live;
pub mod record;
pub mod server;
pub mod source;
pub mod store;
