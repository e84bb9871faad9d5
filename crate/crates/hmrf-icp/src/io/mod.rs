//! File formats: ASCII PLY clouds, 16-bit depth PNGs, pose matrices,
//! results CSV and field visualizations. All writers are deterministic
//! byte-for-byte given identical inputs.

mod depth;
mod field;
mod ply;
mod pose;
mod results;

pub use depth::{read_depth_png16, write_depth_png16, DEFAULT_DEPTH_SCALE};
pub use field::{write_field_images, write_field_png, write_mask_png};
pub use ply::{read_ply, write_ply};
pub use pose::{read_pose, write_pose};
pub use results::{read_results_csv, write_results_csv, write_summary_csv, CANONICAL_LABELS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IoError {
    fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    fn format(path: &std::path::Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.display().to_string(),
            message: message.into(),
        }
    }
}
