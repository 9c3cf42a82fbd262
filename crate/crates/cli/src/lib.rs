//! Command-line front end for `focal-calib`: prediction-file ingestion,
//! plotting, and the property suite behind `focal-calib verify`.

pub mod commands;
pub mod io;
pub mod svg;
pub mod verify;
