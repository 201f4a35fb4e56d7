//! PNG/PPM reading and writing for `(1, 3, H, W)` tensors in `[0, 1]`.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Float, Shape, Tensor};

/// Decodes any PNG/PPM (format inferred from content) to RGB in `[0, 1]`.
pub fn read_image<T: Float>(path: &Path) -> Result<Tensor<T>> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8<T: Float>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = img.dimensions();
    Tensor::from_fn(Shape::new(1, 3, h as usize, w as usize), |_, c, y, x| {
        T::c(img.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
    })
}

/// Quantizes sample `n` of `t` to 8 bits (clamped, rounded to nearest).
pub fn to_rgb8<T: Float>(t: &Tensor<T>, n: usize) -> Result<RgbImage> {
    let s = t.shape();
    if s.c != 3 || n >= s.n {
        return Err(Error::shape(format!("cannot export sample {n} of {s} as RGB")));
    }
    Ok(ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| quantize(t.at(n, c, y as usize, x as usize).as_f64());
        Rgb([px(0), px(1), px(2)])
    }))
}

pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes sample 0; the format follows the extension (`.png`, `.ppm`).
pub fn write_image<T: Float>(t: &Tensor<T>, path: &Path) -> Result<()> {
    save_rgb8(&to_rgb8(t, 0)?, path)
}

pub fn save_rgb8(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Horizontal concatenation of equally tall images.
pub fn side_by_side<T: Float>(images: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::shape("no images to concatenate"))?
        .shape();
    let mut offsets = Vec::with_capacity(images.len());
    let mut total = 0;
    for img in images {
        let s = img.shape();
        if (s.n, s.c, s.h) != (first.n, first.c, first.h) {
            return Err(Error::shape(format!("cannot place {s} next to {first}")));
        }
        offsets.push(total);
        total += s.w;
    }
    Ok(Tensor::from_fn(Shape::new(first.n, first.c, first.h, total), |n, c, y, x| {
        let i = offsets.partition_point(|&o| o <= x) - 1;
        images[i].at(n, c, y, x - offsets[i])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_for_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::<f64>::from_fn(Shape::new(1, 3, 5, 7), |_, c, y, x| {
            ((c * 35 + y * 7 + x) * 2) as f64 / 255.0
        });
        for ext in ["png", "ppm"] {
            let p = dir.path().join(format!("img.{ext}"));
            write_image(&t, &p).unwrap();
            let back: Tensor<f64> = read_image(&p).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn quantize_clamps() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn concatenation_offsets() {
        let a = Tensor::<f64>::full(Shape::new(1, 3, 2, 2), 0.0);
        let b = Tensor::<f64>::full(Shape::new(1, 3, 2, 3), 1.0);
        let s = side_by_side(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), Shape::new(1, 3, 2, 5));
        assert_eq!(s.at(0, 1, 1, 1), 0.0);
        assert_eq!(s.at(0, 1, 1, 2), 1.0);
    }
}
