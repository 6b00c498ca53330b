//! `HMP1` heatmap exchange files: `"HMP1" | u16 K | u16 H | u16 W` followed
//! by `K·H·W` little-endian `f32` values, channel-major then row-major.

use std::io::Write;
use std::path::Path;

use super::{DetectError, Heatmap};

pub const HEATMAP_MAGIC: &[u8; 4] = b"HMP1";
const HEADER_LEN: usize = 10;

pub fn encode_heatmap(hm: &Heatmap) -> Result<Vec<u8>, DetectError> {
    let (k, h, w) = hm.shape();
    let dim = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| DetectError::ShapeMismatch(format!("{what} = {v} exceeds u16")))
    };
    let (k16, h16, w16) = (dim(k, "K")?, dim(h, "H")?, dim(w, "W")?);
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * hm.as_slice().len());
    out.extend_from_slice(HEATMAP_MAGIC);
    out.extend_from_slice(&k16.to_le_bytes());
    out.extend_from_slice(&h16.to_le_bytes());
    out.extend_from_slice(&w16.to_le_bytes());
    for &v in hm.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_heatmap(bytes: &[u8]) -> Result<Heatmap, DetectError> {
    if bytes.len() < HEADER_LEN {
        return Err(DetectError::Malformed {
            offset: bytes.len() as u64,
            msg: "truncated header".into(),
        });
    }
    if &bytes[0..4] != HEATMAP_MAGIC {
        return Err(DetectError::Malformed {
            offset: 0,
            msg: "bad magic, expected HMP1".into(),
        });
    }
    let k = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let w = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * k * h * w {
        return Err(DetectError::Malformed {
            offset: (HEADER_LEN + body.len().min(4 * k * h * w)) as u64,
            msg: format!("expected {} value bytes, found {}", 4 * k * h * w, body.len()),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Heatmap::new(k, w, h, data)
}

pub fn write_heatmap(path: &Path, hm: &Heatmap) -> Result<(), DetectError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_heatmap(hm)?)?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<Heatmap, DetectError> {
    decode_heatmap(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_and_round_trip() {
        let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 / 32.0).collect();
        let hm = Heatmap::new(2, 4, 3, data).unwrap();
        let bytes = encode_heatmap(&hm).unwrap();
        assert_eq!(&bytes[0..4], b"HMP1");
        assert_eq!(&bytes[4..10], &[2, 0, 3, 0, 4, 0]);
        assert_eq!(bytes.len(), 10 + 4 * 24);
        assert_eq!(decode_heatmap(&bytes).unwrap(), hm);
    }

    #[test]
    fn rejects_truncated_body() {
        let bytes = encode_heatmap(&Heatmap::zeros(1, 2, 2)).unwrap();
        assert!(decode_heatmap(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_heatmap(b"HMP").is_err());
    }
}
