//! PNG helpers mapping between `(channels, height, width)` float arrays in
//! [0, 1] and 8-bit image files.

use std::path::Path;

use image::{ImageBuffer, Rgb};
use ndarray::Array3;

use crate::error::{Error, Result};

pub fn save_rgb_png(image: &Array3<f64>, path: &Path) -> Result<()> {
    let (channels, height, width) = image.dim();
    if channels != 3 {
        return Err(Error::ShapeMismatch {
            context: "save_rgb_png".into(),
            expected: "3 channels".into(),
            actual: format!("{channels}"),
        });
    }
    let buf = ImageBuffer::from_fn(width as u32, height as u32, |x, y| {
        let px = |c: usize| {
            (image[[c, y as usize, x as usize]].clamp(0.0, 1.0) * 255.0).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    });
    buf.save(path).map_err(|e| Error::Image(e.to_string()))
}

pub fn load_rgb_png(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgb8();
    let (width, height) = img.dimensions();
    let mut out = Array3::<f64>::zeros((3, height as usize, width as usize));
    for (x, y, pixel) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = pixel[c] as f64 / 255.0;
        }
    }
    Ok(out)
}
