//! Image decode/encode and the `[-1, 1]` normalization.

use std::path::Path;

use image::ImageReader;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Maps an 8-bit value to the normalized range: `(x/255 - 0.5) / 0.5`.
pub fn normalize_u8(v: u8) -> f32 {
    (v as f32 / 255.0 - 0.5) / 0.5
}

/// Inverse of [`normalize_u8`]; recovers all 256 levels exactly.
pub fn denormalize_u8(v: f32) -> u8 {
    ((v * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Decodes a PPM (P6) or PNG image into a normalized `(1, 3, h, w)` tensor.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?
        .with_guessed_format()
        .map_err(|e| Error::Image {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
    let img = reader.decode().map_err(|e| Error::Image {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[c * h * w + y * w + x] = normalize_u8(px.0[c]);
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Writes a normalized `(1, 3, h, w)` tensor as an 8-bit RGB image; the
/// format follows the file extension (`.ppm` → binary P6, `.png` → PNG).
pub fn save_image(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::InvalidArgument(format!(
            "save_image: expected a (1, 3, h, w) tensor, got {s}"
        )));
    }
    let (h, w) = (s.h, s.w);
    let mut buf = vec![0u8; 3 * h * w];
    let data = t.data();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf[(y * w + x) * 3 + c] = denormalize_u8(data[c * h * w + y * w + x]);
            }
        }
    }
    image::save_buffer(
        path,
        &buf,
        w as u32,
        h as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Image {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Bilinear resize with half-pixel centers, per channel and batch row.
/// Returns the input unchanged when the size already matches.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = t.shape();
    if (s.h, s.w) == (out_h, out_w) {
        return t.clone();
    }
    let sy = s.h as f32 / out_h as f32;
    let sx = s.w as f32 / out_w as f32;
    let mut out = vec![0.0f32; s.n * s.c * out_h * out_w];
    let src = t.data();
    for nc in 0..s.n * s.c {
        let plane = &src[nc * s.h * s.w..(nc + 1) * s.h * s.w];
        let dst = &mut out[nc * out_h * out_w..(nc + 1) * out_h * out_w];
        for oy in 0..out_h {
            let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (s.h - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(s.h - 1);
            let wy = fy - y0 as f32;
            for ox in 0..out_w {
                let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (s.w - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(s.w - 1);
                let wx = fx - x0 as f32;
                let top = plane[y0 * s.w + x0] * (1.0 - wx) + plane[y0 * s.w + x1] * wx;
                let bot = plane[y1 * s.w + x0] * (1.0 - wx) + plane[y1 * s.w + x1] * wx;
                dst[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, out_h, out_w), out).expect("length matches")
}
