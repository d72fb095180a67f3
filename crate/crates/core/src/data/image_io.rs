//! PNG and binary PPM/PGM reading and writing.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// 8-bit RGB image, interleaved row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    /// `(1, 3, h, w)` tensor with values `v / 255`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let w = self.width;
        Tensor::from_fn(Shape::new(1, 3, self.height, w), |_, c, y, x| {
            T::of(self.data[(y * w + x) * 3 + c] as f64 / 255.0)
        })
    }

    /// Inverse of [`Rgb8::to_tensor`] with round-half-up and clamping.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let s = t.shape();
        if s.n != 1 || s.c != 3 {
            return crate::error::shape_err("Rgb8::from_tensor", format!("expected (1,3,h,w), got {s}"));
        }
        let mut data = vec![0u8; s.h * s.w * 3];
        for c in 0..3 {
            for (i, &v) in t.plane(0, c).iter().enumerate() {
                data[i * 3 + c] = to_u8(v.as_f64());
            }
        }
        Ok(Rgb8 { height: s.h, width: s.w, data })
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(h * w * 3);
        for y in y0..y0 + h {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + w * 3]);
        }
        Rgb8 { height: h, width: w, data }
    }
}

/// `round(clamp(v, 0, 1) * 255)` with halves rounded up.
pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Snaps every value to the nearest 8-bit level.
pub fn quantize_u8<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    t.map(|v| T::of(to_u8(v.as_f64()) as f64 / 255.0))
}

pub fn is_image_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn image_err(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Image { path: path.to_path_buf(), detail: detail.to_string() }
}

pub fn read_rgb8(path: impl AsRef<Path>) -> Result<Rgb8> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)
        .map_err(|e| image_err(path, e))?
        .with_guessed_format()
        .map_err(|e| image_err(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(Rgb8 { height: h as usize, width: w as usize, data: rgb.into_raw() })
}

pub fn write_rgb8(path: impl AsRef<Path>, img: &Rgb8) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => ImageFormat::Png,
        Some("ppm") | Some("pnm") => ImageFormat::Pnm,
        _ => return Err(image_err(path, "unsupported output extension (use .png or .ppm)")),
    };
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| image_err(path, "pixel buffer does not match dimensions"))?;
    buf.save_with_format(path, format).map_err(|e| image_err(path, e))
}

/// Saves 8-bit grayscale pixels (row-major) as PNG or binary PGM.
pub fn write_gray8(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => ImageFormat::Png,
        Some("pgm") | Some("pnm") => ImageFormat::Pnm,
        _ => return Err(image_err(path, "unsupported output extension (use .png or .pgm)")),
    };
    let buf = GrayImage::from_raw(width as u32, height as u32, pixels.to_vec())
        .ok_or_else(|| image_err(path, "pixel buffer does not match dimensions"))?;
    buf.save_with_format(path, format).map_err(|e| image_err(path, e))
}

/// Loads an image as a `(1, 3, h, w)` tensor in `[0,1]`. Grayscale inputs
/// are replicated across the three channels.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    Ok(read_rgb8(path)?.to_tensor())
}

/// Saves a `(1, 3, h, w)` tensor as PNG or binary PPM, chosen by extension.
pub fn save_image<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    write_rgb8(path, &Rgb8::from_tensor(t)?)
}
