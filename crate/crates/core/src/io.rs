//! File formats.
//!
//! `cloud.bin` is a headerless little-endian stream of `f32` quadruples
//! `(x, y, z, intensity)`, the velodyne-style layout. Provenance, which the
//! binary layout cannot carry, lives in an optional sidecar holding one byte
//! per point (`0` real, `1` virtual). Everything else is JSON.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::geom::{Point, PointCloud, Provenance};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot parse {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: length {len} is not a multiple of 16 bytes")]
    TruncatedCloud { path: PathBuf, len: usize },
    #[error("{path}: sidecar holds {got} entries for {expected} points")]
    SidecarMismatch {
        path: PathBuf,
        expected: usize,
        got: usize,
    },
    #[error("{path}: invalid provenance byte {byte}")]
    BadProvenance { path: PathBuf, byte: u8 },
}

const POINT_BYTES: usize = 16;

/// Encodes a cloud in the `cloud.bin` layout. Coordinates are narrowed to f32.
pub fn encode_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.intensity] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

/// Decodes `cloud.bin` bytes. All points come back as real.
pub fn decode_cloud(bytes: &[u8]) -> Option<PointCloud> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return None;
    }
    let points = bytes
        .chunks_exact(POINT_BYTES)
        .map(|chunk| {
            let f =
                |i: usize| f32::from_le_bytes(chunk[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
            Point::new(f(0), f(1), f(2)).with_intensity(f(3))
        })
        .collect();
    Some(PointCloud { points })
}

pub fn encode_provenance(cloud: &PointCloud) -> Vec<u8> {
    cloud
        .iter()
        .map(|p| match p.provenance {
            Provenance::Real => 0,
            Provenance::Virtual => 1,
        })
        .collect()
}

/// Rounds every coordinate to what `cloud.bin` can hold, so in-memory and
/// file-based pipelines see identical values.
pub fn quantize_cloud(cloud: &mut PointCloud) {
    for p in &mut cloud.points {
        p.x = p.x as f32 as f64;
        p.y = p.y as f32 as f64;
        p.z = p.z as f32 as f64;
        p.intensity = p.intensity as f32 as f64;
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_cloud(&bytes).ok_or(IoError::TruncatedCloud {
        path: path.to_path_buf(),
        len: bytes.len(),
    })
}

/// Reads a cloud and applies the provenance sidecar when one is given.
pub fn read_cloud_with_provenance(
    path: &Path,
    sidecar: Option<&Path>,
) -> Result<PointCloud, IoError> {
    let mut cloud = read_cloud(path)?;
    if let Some(side) = sidecar {
        let flags = fs::read(side).map_err(io_err(side))?;
        if flags.len() != cloud.len() {
            return Err(IoError::SidecarMismatch {
                path: side.to_path_buf(),
                expected: cloud.len(),
                got: flags.len(),
            });
        }
        for (p, &b) in cloud.points.iter_mut().zip(&flags) {
            p.provenance = match b {
                0 => Provenance::Real,
                1 => Provenance::Virtual,
                byte => {
                    return Err(IoError::BadProvenance {
                        path: side.to_path_buf(),
                        byte,
                    })
                }
            };
        }
    }
    Ok(cloud)
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_atomic(path, &encode_cloud(cloud))
}

pub fn write_provenance(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    write_atomic(path, &encode_provenance(cloud))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline. serde_json prints floats in
/// shortest round-trip form, so values survive a write/read cycle exactly.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn velodyne_layout() {
        let cloud = PointCloud::new(vec![Point::new(1.0, -2.0, 0.5).with_intensity(0.25)]);
        let bytes = encode_cloud(&cloud);
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[0..4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[4..8], &(-2.0f32).to_le_bytes());
        assert_eq!(&bytes[12..16], &0.25f32.to_le_bytes());
        assert_eq!(decode_cloud(&bytes).unwrap(), cloud);
        assert!(decode_cloud(&bytes[..15]).is_none());
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(vec![
            Point::new(1.0, 0.0, 0.0),
            Point::new(2.0, 0.0, 0.0).with_provenance(Provenance::Virtual),
        ]);
        let bin = dir.path().join("cloud.bin");
        let side = dir.path().join("cloud.provenance");
        write_cloud(&bin, &cloud).unwrap();
        write_provenance(&side, &cloud).unwrap();
        let back = read_cloud_with_provenance(&bin, Some(&side)).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(read_cloud(&bin).unwrap().provenance_counts(), (2, 0));

        fs::write(&side, [0u8]).unwrap();
        assert!(matches!(
            read_cloud_with_provenance(&bin, Some(&side)),
            Err(IoError::SidecarMismatch { .. })
        ));
    }

    #[test]
    fn json_floats_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let values = vec![0.1f64, 1.0 / 3.0, 123456.789_012_345, -2.5e-300];
        write_json(&path, &values).unwrap();
        let back: Vec<f64> = read_json(&path).unwrap();
        assert_eq!(back, values);
    }
}
