//! PNG helpers: 8-bit RGB images, 16-bit depth/disparity maps, and
//! 8-bit binary masks.
//!
//! Depth and disparity PNGs store `value = quantity * 256` in 16 bits,
//! with 0 meaning invalid. Images map `[0,1]` to `0..=255`.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// Load an 8-bit RGB image as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_rgb8(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = px.0[c] as f64 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Save a `[3, H, W]` tensor in `[0, 1]` as 8-bit RGB.
pub fn save_rgb8(path: &Path, t: &Tensor) -> Result<()> {
    let &[c, h, w] = t.shape() else {
        return Err(Error::Dim(format!("save_rgb8 expects [3,H,W], got {:?}", t.shape())));
    };
    if c != 3 {
        return Err(Error::Dim(format!("save_rgb8 expects 3 channels, got {c}")));
    }
    let mut img = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|ch| {
                (t.data()[(ch * h + y) * w + x].clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img.save(path)?;
    Ok(())
}

/// Save a quantity map as 16-bit grayscale PNG with `value = q * 256`.
/// Non-positive entries (invalid) are stored as 0.
pub fn save_q16(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Dim(format!(
            "save_q16: {width}x{height} needs {} values",
            width * height
        )));
    }
    let mut img = ImageBuffer::<Luma<u16>, Vec<u16>>::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let v = values[y * width + x];
            let q = if v > 0.0 {
                (v * 256.0).round().clamp(0.0, u16::MAX as f64) as u16
            } else {
                0
            };
            img.put_pixel(x as u32, y as u32, Luma([q]));
        }
    }
    DynamicImage::ImageLuma16(img).save(path)?;
    Ok(())
}

/// Load a 16-bit grayscale PNG into `(width, height, q)` with
/// `q = value / 256`; zeros stay zero (invalid).
pub fn load_q16(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)?;
    let img = match img {
        DynamicImage::ImageLuma16(b) => b,
        other => other.to_luma16(),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut values = vec![0.0; w * h];
    for (x, y, px) in img.enumerate_pixels() {
        values[y as usize * w + x as usize] = px.0[0] as f64 / 256.0;
    }
    Ok((w, h, values))
}

/// Save a `{0, 1}` map as an 8-bit PNG with values `{0, 255}`.
pub fn save_mask8(path: &Path, width: usize, height: usize, mask: &[f64]) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::Dim(format!(
            "save_mask8: {width}x{height} needs {} values",
            width * height
        )));
    }
    let mut img = ImageBuffer::<Luma<u8>, Vec<u8>>::new(width as u32, height as u32);
    for y in 0..height {
        for x in 0..width {
            let on = mask[y * width + x] > 0.5;
            img.put_pixel(x as u32, y as u32, Luma([if on { 255 } else { 0 }]));
        }
    }
    img.save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_roundtrip_is_exact_on_grid_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let t = Tensor::from_fn(&[3, 4, 5], |i| ((i * 7) % 256) as f64 / 255.0);
        save_rgb8(&path, &t).unwrap();
        let back = load_rgb8(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn q16_roundtrip_quantizes_to_1_256() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let vals = vec![0.0, 3.25, 10.0, 255.99609375];
        save_q16(&path, 2, 2, &vals).unwrap();
        let (w, h, back) = load_q16(&path).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(back[0], 0.0);
        assert_eq!(back[1], 3.25);
        assert_eq!(back[2], 10.0);
        assert_eq!(back[3], 255.99609375);
    }

    #[test]
    fn mask_is_binary_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        save_mask8(&path, 2, 1, &[1.0, 0.0]).unwrap();
        let img = image::open(&path).unwrap().to_luma8();
        assert_eq!(img.get_pixel(0, 0).0[0], 255);
        assert_eq!(img.get_pixel(1, 0).0[0], 0);
    }
}
