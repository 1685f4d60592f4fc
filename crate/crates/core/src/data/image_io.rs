use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Decodes an 8-bit PNG to floats in `[0, 1]`; grayscale input is
/// replicated to three channels.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.to_path_buf(), msg: e.to_string() })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(h as usize, w as usize, 3, data)
}

/// Encodes a 1- or 3-channel image in `[0, 1]` as an 8-bit PNG.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let quantize = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let mut out = std::io::Cursor::new(Vec::new());
    let res = match img.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).map(|b| b.write_to(&mut out, image::ImageFormat::Png)),
        3 => ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).map(|b| b.write_to(&mut out, image::ImageFormat::Png)),
        c => return Err(Error::Data(format!("cannot encode a {c}-channel image"))),
    };
    match res {
        Some(Ok(())) => Ok(out.into_inner()),
        Some(Err(e)) => Err(Error::Data(format!("png encoding failed: {e}"))),
        None => Err(Error::Data("image buffer size mismatch".into())),
    }
}
