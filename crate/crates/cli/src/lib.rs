//! File formats and figures used by the `ecg-auth` command-line tool.

pub mod files;
pub mod plot;
