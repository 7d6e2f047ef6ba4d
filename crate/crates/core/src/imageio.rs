//! 8-bit PNG/JPEG decoding to [`ImageBuffer`] and PNG encoding back.

use std::path::Path;

use crate::augment::ImageBuffer;
use crate::error::{Error, Result};

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| f32::from(v) / 255.0).collect();
    ImageBuffer::new(h as usize, w as usize, pixels)
}

pub fn save_png(img: &ImageBuffer, path: &Path) -> Result<()> {
    let raw: Vec<u8> = img.pixels().iter().map(|&p| (p * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, raw)
        .expect("buffer length matches dimensions");
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}
