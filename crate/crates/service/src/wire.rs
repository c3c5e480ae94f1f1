//! Point clouds on the wire: base64 of consecutive little-endian `f32`
//! triplets `x0 y0 z0 x1 y1 z1 ...`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use partforge::geometry::Point3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad base64: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error("payload of {0} bytes is not a whole number of f32 triplets")]
    Length(usize),
}

pub fn encode_points(points: &[Point3]) -> String {
    let mut bytes = Vec::with_capacity(points.len() * 12);
    for p in points {
        for v in p {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    STANDARD.encode(bytes)
}

pub fn decode_points(s: &str) -> Result<Vec<[f32; 3]>, WireError> {
    let bytes = STANDARD.decode(s)?;
    if bytes.len() % 12 != 0 {
        return Err(WireError::Length(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
            [f(0), f(1), f(2)]
        })
        .collect())
}
