//! 8-bit PNG reading and writing for `3 × H × W` images in `[0, 1]`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rounds to the nearest 8-bit level. Values outside `[0, 1]` are clamped.
pub fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Snaps every value to the 8-bit grid a PNG round trip would produce.
pub fn quantize<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    img.map(|v| T::from_f64(to_u8(v) as f64 / 255.0))
}

/// Reads a PNG as a planar RGB image. Gray inputs are replicated across
/// channels and alpha is dropped.
pub fn read_png<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(path, e.to_string()))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::format(path, "unexpanded palette image")),
    };
    let px = &buf[..info.buffer_size()];
    let plane = h * w;
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        let off = if stride >= 3 { c } else { 0 };
        T::from_f64(px[p * stride + off] as f64 / 255.0)
    }))
}

/// Writes a `3 × H × W` image as 8-bit RGB.
pub fn write_png<T: Scalar>(img: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("expected a 3×H×W image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut px = vec![0u8; 3 * plane];
    for (p, rgb) in px.chunks_exact_mut(3).enumerate() {
        for (c, v) in rgb.iter_mut().enumerate() {
            *v = to_u8(img.data()[c * plane + p]);
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(encode)?;
    writer.write_image_data(&px).map_err(encode)?;
    writer.finish().map_err(encode)
}
