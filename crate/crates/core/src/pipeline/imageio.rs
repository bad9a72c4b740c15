//! 8-bit grayscale image files (PGM, PNG). Color inputs are converted with
//! luma weights 0.299 R + 0.587 G + 0.114 B.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::optflow::GrayImage;

fn decode_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

pub fn luma(r: u8, g: u8, b: u8) -> f32 {
    ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0).clamp(0.0, 1.0) as f32
}

pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| decode_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => GrayImage::from_u8(w, h, g.as_raw()),
        other => {
            let rgb = other.to_rgb8();
            let data = rgb.pixels().map(|p| luma(p[0], p[1], p[2])).collect();
            GrayImage::new(w, h, data)
        }
    }
}

/// Writes an 8-bit grayscale file: binary PGM for a `.pgm` extension,
/// otherwise the format implied by the extension.
pub fn write_gray(path: &Path, img: &GrayImage) -> Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let enc = PnmEncoder::new(std::io::BufWriter::new(f))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
        return enc
            .write_image(&img.to_u8(), img.width() as u32, img.height() as u32, ExtendedColorType::L8)
            .map_err(|e| decode_error(path, e));
    }
    image::save_buffer(
        path,
        &img.to_u8(),
        img.width() as u32,
        img.height() as u32,
        ExtendedColorType::L8,
    )
    .map_err(|e| decode_error(path, e))
}
