//! NPY v1.0 container restricted to little-endian f32, C order, 3-D shape.
//!
//! Anything else is rejected rather than converted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{LatentTensor, Shape};
use crate::error::{LfaError, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

pub fn load_latent(path: &Path, expected_shape: Option<Shape>) -> Result<LatentTensor> {
    let file = File::open(path).map_err(|e| LfaError::io_at(path, e))?;
    read_latent(&mut BufReader::new(file), expected_shape).map_err(|e| match e {
        LfaError::Format(msg) => LfaError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_latent(t: &LatentTensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| LfaError::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    write_latent(t, &mut w).map_err(|e| LfaError::io_at(path, e))?;
    w.flush().map_err(|e| LfaError::io_at(path, e))
}

pub fn write_latent<W: Write>(t: &LatentTensor, w: &mut W) -> std::io::Result<()> {
    let s = t.shape();
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        s.channels, s.height, s.width
    );
    // pad with spaces so the data starts on an aligned offset; header ends in '\n'
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    w.write_all(MAGIC)?;
    w.write_all(&[1, 0])?;
    w.write_all(&(header.len() as u16).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(t.data().len() * 4);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_latent<R: Read>(r: &mut R, expected_shape: Option<Shape>) -> Result<LatentTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| LfaError::io("reading latent", e))?;

    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(LfaError::Format("missing NPY magic".into()));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(LfaError::Format(format!(
            "unsupported NPY version {}.{} (only 1.0)",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(LfaError::Format("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| LfaError::Format("header is not ASCII".into()))?;
    let shape = parse_header(header)?;

    if let Some(expected) = expected_shape {
        if expected != shape {
            return Err(LfaError::ShapeMismatch {
                expected,
                found: shape,
            });
        }
    }

    let payload = &bytes[data_start..];
    if payload.len() != shape.len() * 4 {
        return Err(LfaError::Format(format!(
            "payload is {} bytes, shape {shape} needs {}",
            payload.len(),
            shape.len() * 4
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(LfaError::Format(format!(
            "non-finite value {} at element {idx}",
            data[idx]
        )));
    }
    Ok(LatentTensor::from_parts(shape, data))
}

/// Parses the python-literal header dict. Exactly the keys `descr`,
/// `fortran_order` and `shape` must be present.
fn parse_header(header: &str) -> Result<Shape> {
    let body = header
        .trim_end_matches(['\n', ' '])
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| LfaError::Format("header is not a dict literal".into()))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value) in split_entries(body)? {
        match key {
            "descr" => descr = Some(value),
            "fortran_order" => fortran = Some(value),
            "shape" => shape = Some(value),
            other => {
                return Err(LfaError::Format(format!("unexpected header key '{other}'")));
            }
        }
    }

    let descr = descr.ok_or_else(|| LfaError::Format("header lacks 'descr'".into()))?;
    if descr != "'<f4'" {
        return Err(LfaError::Format(format!(
            "element type {descr} is not little-endian float32 ('<f4')"
        )));
    }
    match fortran {
        Some("False") => {}
        Some(v) => {
            return Err(LfaError::Format(format!(
                "fortran_order={v} is not supported"
            )));
        }
        None => return Err(LfaError::Format("header lacks 'fortran_order'".into())),
    }
    let shape = shape.ok_or_else(|| LfaError::Format("header lacks 'shape'".into()))?;
    let dims = parse_tuple(shape)?;
    if dims.len() != 3 {
        return Err(LfaError::Format(format!(
            "expected a 3-D (C, H, W) array, got {} dimensions",
            dims.len()
        )));
    }
    Shape::new(dims[0], dims[1], dims[2]).map_err(|e| LfaError::Format(e.to_string()))
}

fn split_entries(body: &str) -> Result<Vec<(&str, &str)>> {
    let mut entries = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let mut pieces = Vec::new();
    for (i, ch) in body.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                pieces.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    pieces.push(&body[start..]);

    for piece in pieces.into_iter().map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = piece
            .split_once(':')
            .ok_or_else(|| LfaError::Format(format!("bad header entry '{piece}'")))?;
        let key = k
            .trim()
            .strip_prefix('\'')
            .and_then(|s| s.strip_suffix('\''))
            .ok_or_else(|| LfaError::Format(format!("bad header key '{k}'")))?;
        entries.push((key, v.trim()));
    }
    Ok(entries)
}

fn parse_tuple(s: &str) -> Result<Vec<usize>> {
    let inner = s
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| LfaError::Format(format!("shape '{s}' is not a tuple")))?;
    inner
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| LfaError::Format(format!("bad shape entry '{p}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn npy_bytes(header: &str, payload: &[u8]) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn header_is_aligned_and_parseable_by_numpy_convention() {
        let t = LatentTensor::zeros(Shape::new(32, 64, 64).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_latent(&t, &mut buf).unwrap();
        let header_len = u16::from_le_bytes([buf[8], buf[9]]) as usize;
        assert_eq!((PREAMBLE_LEN + header_len) % ALIGN, 0);
        assert_eq!(buf[PREAMBLE_LEN + header_len - 1], b'\n');
        assert_eq!(buf.len(), PREAMBLE_LEN + header_len + 32 * 64 * 64 * 4);
        let back = read_latent(&mut buf.as_slice(), None).unwrap();
        assert!(back.bitwise_eq(&t));
    }

    #[test]
    fn accepts_reordered_keys_and_spacing() {
        let header = "{'shape':(1,1,2),'fortran_order':False,'descr':'<f4'}\n";
        let mut payload = 1.5f32.to_le_bytes().to_vec();
        payload.extend_from_slice(&(-2.0f32).to_le_bytes());
        let bytes = npy_bytes(header, &payload);
        let t = read_latent(&mut bytes.as_slice(), None).unwrap();
        assert_eq!(t.data(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_other_dtypes_orders_and_ranks() {
        let cases = [
            "{'descr': '<f8', 'fortran_order': False, 'shape': (1, 1, 1), }\n",
            "{'descr': '>f4', 'fortran_order': False, 'shape': (1, 1, 1), }\n",
            "{'descr': '<i4', 'fortran_order': False, 'shape': (1, 1, 1), }\n",
            "{'descr': '<f4', 'fortran_order': True, 'shape': (1, 1, 1), }\n",
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1), }\n",
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1, 1), }\n",
            "{'descr': '<f4', 'fortran_order': False, 'shape': (0, 1, 1), }\n",
            "{'descr': '<f4', 'shape': (1, 1, 1), }\n",
            "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1), 'x': 1}\n",
        ];
        for header in cases {
            let bytes = npy_bytes(header, &[0u8; 4]);
            let err = read_latent(&mut bytes.as_slice(), None).unwrap_err();
            assert!(matches!(err, LfaError::Format(_)), "{header}: {err}");
        }
    }

    #[test]
    fn rejects_bad_magic_version_and_payload_size() {
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 2), }\n";
        let good = npy_bytes(header, &[0u8; 8]);
        assert!(read_latent(&mut good.as_slice(), None).is_ok());

        let mut bad_magic = good.clone();
        bad_magic[1] = b'X';
        assert!(read_latent(&mut bad_magic.as_slice(), None).is_err());

        let mut v2 = good.clone();
        v2[6] = 2;
        assert!(read_latent(&mut v2.as_slice(), None).is_err());

        let short = npy_bytes(header, &[0u8; 4]);
        assert!(read_latent(&mut short.as_slice(), None).is_err());
        let long = npy_bytes(header, &[0u8; 12]);
        assert!(read_latent(&mut long.as_slice(), None).is_err());
    }

    #[test]
    fn rejects_non_finite_payload() {
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1), }\n";
        let bytes = npy_bytes(header, &f32::NAN.to_le_bytes());
        assert!(matches!(
            read_latent(&mut bytes.as_slice(), None),
            Err(LfaError::Format(_))
        ));
    }

    #[test]
    fn expected_shape_mismatch_is_error_not_reshape() {
        let t = LatentTensor::zeros(Shape::new(32, 64, 64).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_latent(&t, &mut buf).unwrap();
        let err = read_latent(&mut buf.as_slice(), Some(Shape::new(16, 64, 64).unwrap()))
            .unwrap_err();
        assert!(matches!(err, LfaError::ShapeMismatch { .. }));
    }
}
