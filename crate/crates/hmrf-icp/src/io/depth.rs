//! 16-bit single-channel depth PNGs in the common SLAM-benchmark
//! convention: depth in meters = tick / scale, tick 0 = no measurement.

use super::IoError;
use crate::geometry::DepthMap;
use image::{ImageBuffer, Luma};
use std::path::Path;

/// Ticks per meter used by the public RGB-D benchmark depth images.
pub const DEFAULT_DEPTH_SCALE: f64 = 5000.0;

pub fn read_depth_png16(path: &Path, scale_ticks_per_meter: f64) -> Result<DepthMap, IoError> {
    let dynamic = image::open(path)
        .map_err(|e| IoError::format(path, format!("cannot decode image: {e}")))?;
    let img = match dynamic {
        image::DynamicImage::ImageLuma16(img) => img,
        other => {
            return Err(IoError::format(
                path,
                format!(
                    "expected 16-bit single-channel depth, got {:?}",
                    other.color()
                ),
            ))
        }
    };
    let (width, height) = img.dimensions();
    let depths = img
        .pixels()
        .map(|Luma([tick])| *tick as f64 / scale_ticks_per_meter)
        .collect();
    Ok(DepthMap::from_depths(width as usize, height as usize, depths))
}

/// Writes a depth map as 16-bit PNG; invalid pixels become tick 0 and
/// depths beyond the tick range saturate.
pub fn write_depth_png16(
    path: &Path,
    map: &DepthMap,
    scale_ticks_per_meter: f64,
) -> Result<(), IoError> {
    let img = ImageBuffer::<Luma<u16>, Vec<u16>>::from_fn(
        map.width as u32,
        map.height as u32,
        |u, v| {
            let i = v as usize * map.width + u as usize;
            if map.valid[i] {
                let tick = (map.depth[i] * scale_ticks_per_meter).round();
                Luma([tick.clamp(1.0, u16::MAX as f64) as u16])
            } else {
                Luma([0])
            }
        },
    );
    img.save(path)
        .map_err(|e| IoError::format(path, format!("cannot encode image: {e}")))
}
