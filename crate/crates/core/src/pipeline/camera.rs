//! Plain-text camera records.
//!
//! ```text
//! fx: 525
//! fy: 525
//! cx: 319.5
//! cy: 239.5
//! width: 640
//! height: 480
//! rotation: 1 0 0 0 1 0 0 0 1
//! translation: 0 0 0
//! ```
//!
//! Blank lines and lines starting with `#` are ignored. The pose is
//! camera-to-world with a row-major rotation. Numbers are written in their
//! shortest round-trip form, so a record reads back bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};

use super::write_atomic;

const KEYS: [&str; 8] = [
    "fx",
    "fy",
    "cx",
    "cy",
    "width",
    "height",
    "rotation",
    "translation",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRecord {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

impl CameraRecord {
    pub fn to_text(&self) -> String {
        let k = &self.intrinsics;
        let r = self.pose.rotation();
        let t = self.pose.translation();
        let rot = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| r[(i, j)]);
        format!(
            "fx: {}\nfy: {}\ncx: {}\ncy: {}\nwidth: {}\nheight: {}\nrotation: {}\ntranslation: {}\n",
            k.fx,
            k.fy,
            k.cx,
            k.cy,
            k.width,
            k.height,
            join(rot),
            join(t.iter().copied())
        )
    }

    /// Parses a record; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<CameraRecord> {
        let mut fields = BTreeMap::new();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::format(path, format!("expected `key: value`, got `{line}`"))
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::format(path, format!("unknown camera key `{key}`")));
            }
            if fields.insert(key, value.trim()).is_some() {
                return Err(Error::format(path, format!("duplicate camera key `{key}`")));
            }
        }
        let floats = |key: &str, n: usize| -> Result<Vec<f64>> {
            let raw = fields
                .get(key)
                .ok_or_else(|| Error::format(path, format!("missing camera key `{key}`")))?;
            let vals = raw
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("`{key}`: {e}")))?;
            if vals.len() != n {
                return Err(Error::format(
                    path,
                    format!("`{key}` needs {n} numbers, got {}", vals.len()),
                ));
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    path: path.to_path_buf(),
                });
            }
            Ok(vals)
        };
        let size = |key: &str| -> Result<usize> {
            let raw = fields
                .get(key)
                .ok_or_else(|| Error::format(path, format!("missing camera key `{key}`")))?;
            raw.parse()
                .map_err(|e| Error::format(path, format!("`{key}`: {e}")))
        };
        let intrinsics = CameraIntrinsics::new(
            floats("fx", 1)?[0],
            floats("fy", 1)?[0],
            floats("cx", 1)?[0],
            floats("cy", 1)?[0],
            size("width")?,
            size("height")?,
        )?;
        let r = floats("rotation", 9)?;
        let t = floats("translation", 3)?;
        let pose = Pose::new(Matrix3::from_row_slice(&r), Vector3::new(t[0], t[1], t[2]))?;
        Ok(CameraRecord { intrinsics, pose })
    }
}

pub fn read_camera(path: &Path) -> Result<CameraRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CameraRecord::parse(&text, path)
}

pub fn write_camera(path: &Path, record: &CameraRecord) -> Result<()> {
    write_atomic(path, record.to_text().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let rec = CameraRecord {
            intrinsics: CameraIntrinsics::new(525.123456789, 524.5, 319.5, 0.1 + 0.2, 640, 480)
                .unwrap(),
            pose: Pose::from_yaw_pitch(0.3, -0.1, Vector3::new(1.0 / 3.0, -2.5, 1e-17)),
        };
        let back = CameraRecord::parse(&rec.to_text(), Path::new("c.txt")).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn malformed_records() {
        let p = Path::new("c.txt");
        let good = CameraRecord {
            intrinsics: CameraIntrinsics::new(1.0, 1.0, 0.5, 0.5, 2, 2).unwrap(),
            pose: Pose::identity(),
        }
        .to_text();
        assert!(CameraRecord::parse(&good.replace("fx: 1\n", ""), p).is_err());
        assert!(CameraRecord::parse(&format!("{good}zoom: 2\n"), p).is_err());
        assert!(
            CameraRecord::parse(&good.replace("translation: 0 0 0", "translation: 0 0"), p)
                .is_err()
        );
        assert!(matches!(
            CameraRecord::parse(&good.replace("cx: 0.5", "cx: NaN"), p),
            Err(Error::NonFinite { .. })
        ));
        assert!(
            CameraRecord::parse(&good.replace("rotation: 1 0 0", "rotation: 2 0 0"), p).is_err()
        );
    }
}
