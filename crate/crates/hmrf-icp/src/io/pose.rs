//! Transform files: a 4x4 row-major matrix as whitespace-separated text.

use super::IoError;
use crate::geometry::RigidTransform;
use std::path::Path;

pub fn write_pose(path: &Path, t: &RigidTransform) -> Result<(), IoError> {
    let m = t.to_matrix4();
    let rows: Vec<String> = m
        .iter()
        .map(|row| {
            row.iter()
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    std::fs::write(path, rows.join("\n") + "\n")?;
    Ok(())
}

pub fn read_pose(path: &Path) -> Result<RigidTransform, IoError> {
    let text = std::fs::read_to_string(path)?;
    let values: Vec<f64> = text
        .split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| IoError::parse(path, 0, format!("bad number '{tok}'")))
        })
        .collect::<Result<_, _>>()?;
    if values.len() != 16 {
        return Err(IoError::parse(
            path,
            0,
            format!("expected 16 numbers, got {}", values.len()),
        ));
    }
    let mut m = [[0.0; 4]; 4];
    for (i, v) in values.into_iter().enumerate() {
        m[i / 4][i % 4] = v;
    }
    RigidTransform::from_matrix4(&m)
        .map_err(|e| IoError::parse(path, 0, format!("not a rigid transform: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn pose_roundtrip() {
        let axis = Vector3::new(0.4, -0.3, 0.85).normalize();
        let t = RigidTransform::from_translation(Vector3::new(0.1, 0.2, -0.3))
            .compose(&RigidTransform::from_axis_angle(&axis, 0.7).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pose.txt");
        write_pose(&path, &t).unwrap();
        let back = read_pose(&path).unwrap();
        assert!((back.rotation() - t.rotation()).norm() < 1e-15);
        assert!((back.translation() - t.translation()).norm() < 1e-15);
    }

    #[test]
    fn junk_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.txt");
        std::fs::write(&path, "1 2 3").unwrap();
        assert!(read_pose(&path).is_err());
        std::fs::write(&path, "1 ".repeat(16).as_str()).unwrap();
        // All-ones matrix is not a rotation.
        assert!(read_pose(&path).is_err());
    }
}
