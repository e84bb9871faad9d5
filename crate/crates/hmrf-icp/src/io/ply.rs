//! ASCII PLY point-cloud reader and writer. The reader accepts any vertex
//! element with float x/y/z properties and ignores everything else; the
//! writer optionally colors vertices by the sign of a mean field so inliers
//! and outliers are distinguishable in a viewer.

use super::IoError;
use crate::geometry::{FixedCloud, Point3};
use crate::hmrf::MeanField;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const INLIER_RGB: [u8; 3] = [20, 40, 160];
const OUTLIER_RGB: [u8; 3] = [150, 200, 255];

pub fn read_ply(path: &Path) -> Result<FixedCloud, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let mut next_line = || -> Result<(usize, String), IoError> {
        match lines.next() {
            Some((i, line)) => Ok((i + 1, line?)),
            None => Err(IoError::parse(path, 0, "unexpected end of file")),
        }
    };

    let (n, magic) = next_line()?;
    if magic.trim() != "ply" {
        return Err(IoError::parse(path, n, "not a PLY file (missing 'ply' magic)"));
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex_element = false;
    // Property column indices of x, y, z within the vertex element.
    let mut xyz: [Option<usize>; 3] = [None; 3];
    let mut property_count = 0usize;

    loop {
        let (n, line) = next_line()?;
        let line = line.trim().to_string();
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.first().copied() {
            Some("format") => {
                if fields.get(1) != Some(&"ascii") {
                    return Err(IoError::parse(
                        path,
                        n,
                        format!(
                            "unsupported format '{}': only ascii 1.0 is supported",
                            fields.get(1).unwrap_or(&"?")
                        ),
                    ));
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                in_vertex_element = fields.get(1) == Some(&"vertex");
                if in_vertex_element {
                    let count = fields
                        .get(2)
                        .and_then(|c| c.parse::<usize>().ok())
                        .ok_or_else(|| IoError::parse(path, n, "bad vertex count"))?;
                    vertex_count = Some(count);
                    property_count = 0;
                }
            }
            Some("property") => {
                if in_vertex_element {
                    if fields.len() >= 3 && fields[1] != "list" {
                        match fields[2] {
                            "x" => xyz[0] = Some(property_count),
                            "y" => xyz[1] = Some(property_count),
                            "z" => xyz[2] = Some(property_count),
                            _ => {}
                        }
                    }
                    property_count += 1;
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(IoError::parse(path, n, format!("unknown header keyword '{other}'")))
            }
            None => {}
        }
    }

    let count =
        vertex_count.ok_or_else(|| IoError::parse(path, 0, "header has no vertex element"))?;
    let (ix, iy, iz) = match (xyz[0], xyz[1], xyz[2]) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(IoError::parse(path, 0, "vertex element lacks x/y/z properties")),
    };

    let mut points = Vec::with_capacity(count);
    while points.len() < count {
        let (n, line) = next_line()?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let coord = |idx: usize| -> Result<f64, IoError> {
            fields
                .get(idx)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| IoError::parse(path, n, format!("bad vertex line '{line}'")))
        };
        points.push(Point3::new(coord(ix)?, coord(iy)?, coord(iz)?));
    }
    Ok(FixedCloud { points })
}

/// Writes an ASCII PLY. When `labels` is given (aligned with the cloud's
/// points), vertices get red/green/blue columns tinted by label sign.
pub fn write_ply(path: &Path, cloud: &FixedCloud, labels: Option<&MeanField>) -> Result<(), IoError> {
    if let Some(field) = labels {
        if field.len() != cloud.len() {
            return Err(IoError::format(
                path,
                format!("{} labels for {} points", field.len(), cloud.len()),
            ));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if labels.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        match labels {
            Some(field) => {
                let rgb = if field.value(i) > 0.0 {
                    INLIER_RGB
                } else {
                    OUTLIER_RGB
                };
                writeln!(w, "{} {} {} {} {} {}", p.x, p.y, p.z, rgb[0], rgb[1], rgb[2])?;
            }
            None => writeln!(w, "{} {} {}", p.x, p.y, p.z)?,
        }
    }
    w.flush()?;
    Ok(())
}
