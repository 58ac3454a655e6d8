//! Image files: binary PPM (P6) and a raw float format.
//!
//! Raw layout: four little-endian `u32` extents `N, C, H, W`, then the
//! NCHW payload as little-endian `f64`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn bad(msg: impl Into<String>) -> Error {
    Error::Image(msg.into())
}

/// Parses a P6 PPM into a `[1, 3, H, W]` tensor scaled to `[0, 1]`.
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| bad(format!("bad PPM {what} `{t}`")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 255 {
        return Err(bad(format!("unsupported PPM geometry {w}×{h}, maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    let start = pos + 1;
    let need = 3 * w * h;
    let pixels = bytes
        .get(start..start + need)
        .ok_or_else(|| bad(format!("PPM payload holds {} of {need} bytes", bytes.len().saturating_sub(start))))?;
    let mut data = vec![0.0; need];
    let plane = w * h;
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / maxval as f64;
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Writes the first image of an `[N, 3, H, W]` tensor as P6, clamping to
/// `[0, 1]`.
pub fn write_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(bad(format!("PPM needs [N, 3, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = image.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn read_raw(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 16 {
        return Err(bad("raw image shorter than its header"));
    }
    let dims: Vec<usize> = bytes[..16]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let numel: usize = dims.iter().product();
    if bytes.len() != 16 + 8 * numel {
        return Err(bad(format!("raw image {dims:?} needs {} payload bytes, found {}", 8 * numel, bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(dims, data)
}

pub fn write_raw(image: &Tensor) -> Result<Vec<u8>> {
    if image.rank() != 4 {
        return Err(bad(format!("raw images are NCHW, got rank {}", image.rank())));
    }
    let mut out = Vec::with_capacity(16 + 8 * image.numel());
    for &d in image.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Reads either format, sniffing the PPM magic.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        read_ppm(&bytes)
    } else {
        read_raw(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let t = Tensor::from_fn([1, 3, 2, 3], |i| (i * 13 % 256) as f64 / 255.0);
        let back = read_ppm(&write_ppm(&t).unwrap()).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-12);
    }

    #[test]
    fn ppm_comments_and_truncation() {
        let mut b = b"P6\n# hi\n1 1\n255\n".to_vec();
        assert!(read_ppm(&b).is_err());
        b.extend_from_slice(&[255, 0, 51]);
        assert_eq!(read_ppm(&b).unwrap().data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn raw_round_trip() {
        let t = Tensor::from_fn([1, 3, 4, 4], |i| i as f64 * 0.1 - 1.0);
        assert!(read_raw(&write_raw(&t).unwrap()).unwrap().bit_eq(&t));
        assert!(read_raw(&[0; 10]).is_err());
    }
}
