//! `.vvol` files: one line of JSON header, a NUL byte, then the raw
//! little-endian payload in x-fastest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Field, Grid, Mask, Volume, Voxel};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    dtype: String,
    order: String,
    byteorder: String,
}

const ORDER: &str = "x-fastest";
const BYTEORDER: &str = "little";

fn encode<T: Voxel>(field: &Field<T>) -> Vec<u8> {
    let header = Header {
        dims: field.grid.dims,
        spacing: field.grid.spacing,
        dtype: T::DTYPE.to_string(),
        order: ORDER.to_string(),
        byteorder: BYTEORDER.to_string(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = Vec::with_capacity(json.len() + 2 + field.len() * T::WIDTH);
    out.extend_from_slice(json.as_bytes());
    out.push(b'\n');
    out.push(0);
    for &v in field.data() {
        v.write_le(&mut out);
    }
    out
}

fn decode<T: Voxel>(bytes: &[u8], path: &Path) -> Result<Field<T>> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing header terminator"))?;
    if bytes.get(newline + 1) != Some(&0) {
        return Err(Error::format(path, "header newline not followed by NUL"));
    }
    let header: Header =
        serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(Error::format(
            path,
            format!("dtype {:?}, expected {:?}", header.dtype, T::DTYPE),
        ));
    }
    if header.order != ORDER || header.byteorder != BYTEORDER {
        return Err(Error::format(
            path,
            format!("unsupported layout {}/{}", header.order, header.byteorder),
        ));
    }
    let grid = Grid::new(header.dims, header.spacing).map_err(|e| Error::format(path, e.to_string()))?;
    let payload = &bytes[newline + 2..];
    let expected = grid.len() * T::WIDTH;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload is {} bytes, dims {:?} need {expected}",
                payload.len(),
                grid.dims
            ),
        ));
    }
    let data: Vec<T> = payload.chunks_exact(T::WIDTH).map(T::read_le).collect();
    if let Some(i) = data.iter().position(|v| !v.is_valid()) {
        return Err(Error::format(
            path,
            format!("invalid {} value {:?} at voxel {i}", T::DTYPE, data[i]),
        ));
    }
    Ok(Field::from_raw(grid, data))
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    encode(v)
}

pub fn encode_mask(m: &Mask) -> Vec<u8> {
    encode(m)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    decode(bytes, Path::new("<memory>"))
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    decode(bytes, Path::new("<memory>"))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(v)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn small_volume_roundtrip() {
        let dir = tmp();
        let p = dir.path().join("a.vvol");
        let g = Grid::isotropic([2, 2, 2], 1.0).unwrap();
        let v = Volume::from_vec(g, (0..8).map(|i| i as f32).collect()).unwrap();
        write_volume(&v, &p).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back, v);
        let bytes = fs::read(&p).unwrap();
        write_volume(&back, dir.path().join("b.vvol")).unwrap();
        assert_eq!(bytes, fs::read(dir.path().join("b.vvol")).unwrap());
    }

    #[test]
    fn header_layout() {
        let g = Grid::isotropic([4, 4, 4], 1.0).unwrap();
        let bytes = encode_volume(&Volume::zeros(g));
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"dims":[4,4,4],"spacing":[1.0,1.0,1.0],"dtype":"f32","order":"x-fastest","byteorder":"little"}"#
        );
        assert_eq!(bytes[nl + 1], 0);
        let payload = &bytes[nl + 2..];
        assert_eq!(payload.len(), 64 * 4);
        assert!(payload.iter().all(|&b| b == 0));
    }

    #[test]
    fn payload_size_mismatch_rejected() {
        let g = Grid::isotropic([2, 2, 2], 1.0).unwrap();
        let mut bytes = encode_volume(&Volume::zeros(g));
        bytes.truncate(bytes.len() - 4);
        let err = decode_volume(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload"), "{err}");
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(decode_volume(b"{\"dims\":[1,1,1]}").is_err());
        assert!(decode_volume(b"not json\n\0").is_err());
        let g = Grid::isotropic([1, 1, 1], 1.0).unwrap();
        let mut bytes = encode_volume(&Volume::zeros(g));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(decode_volume(&bytes).is_err());
        // dtype confusion
        assert!(decode_mask(&encode_volume(&Volume::zeros(g))).is_err());
        let mut m = encode_mask(&Mask::zeros(g));
        let n = m.len();
        m[n - 1] = 7;
        assert!(decode_mask(&m).is_err());
    }

    #[test]
    fn seeded_random_volume_roundtrip() {
        let g = Grid::new([8, 8, 8], [0.85, 0.9, 1.7]).unwrap();
        let mut r = rng::seeded(11);
        let v = Volume::from_fn(g, |_| (rng::standard_normal(&mut r) * 300.0) as f32).unwrap();
        let dir = tmp();
        let p = dir.path().join("r.vvol");
        write_volume(&v, &p).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back.grid(), v.grid());
        for (a, b) in back.data().iter().zip(v.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn mask_roundtrip() {
        let g = Grid::isotropic([3, 2, 1], 0.5).unwrap();
        let m = Mask::from_vec(g, vec![0, 1, 1, 0, 1, 0]).unwrap();
        assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
    }
}
