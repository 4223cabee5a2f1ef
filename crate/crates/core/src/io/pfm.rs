//! PFM (portable float map) reader/writer for disparity maps.
//!
//! Grayscale `Pf` variant, scale line `-1.0` (little-endian payload),
//! scanlines stored bottom-to-top as the format prescribes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Dim(format!(
            "pfm: {width}x{height} needs {} values, got {}",
            width * height,
            values.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "Pf\n{width} {height}\n-1.0\n")?;
    for y in (0..height).rev() {
        for x in 0..width {
            w.write_all(&(values[y * width + x] as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    // three whitespace-terminated tokens after the type line
    let mut tokens = Vec::new();
    let mut cur = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        r.read_exact(&mut byte)
            .map_err(|_| Error::Format("pfm truncated header".into()))?;
        header.push(byte[0]);
        if byte[0].is_ascii_whitespace() {
            if !cur.is_empty() {
                tokens.push(String::from_utf8_lossy(&cur).to_string());
                cur.clear();
            }
        } else {
            cur.push(byte[0]);
        }
    }
    if tokens[0] != "Pf" {
        return Err(Error::Format(format!(
            "pfm: expected grayscale 'Pf' header, got {:?}",
            tokens[0]
        )));
    }
    let width: usize = tokens[1]
        .parse()
        .map_err(|_| Error::Format("pfm: bad width".into()))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| Error::Format("pfm: bad height".into()))?;
    let scale: f64 = tokens[3]
        .parse()
        .map_err(|_| Error::Format("pfm: bad scale".into()))?;
    let little_endian = scale < 0.0;
    let mut values = vec![0.0f64; width * height];
    let mut buf = [0u8; 4];
    for y in (0..height).rev() {
        for x in 0..width {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Format("pfm truncated payload".into()))?;
            let v = if little_endian {
                f32::from_le_bytes(buf)
            } else {
                f32::from_be_bytes(buf)
            };
            values[y * width + x] = v as f64;
        }
    }
    Ok((width, height, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        write_pfm(&path, 4, 3, &values).unwrap();
        let (w, h, back) = read_pfm(&path).unwrap();
        assert_eq!((w, h), (4, 3));
        assert_eq!(back, values);
    }

    #[test]
    fn header_is_pf_with_negative_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        write_pfm(&path, 2, 2, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n2 2\n-1.0\n"));
    }
}
