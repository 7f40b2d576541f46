//! Binary portable pixmaps: P6 for RGB, P5 for grayscale, maxval 255.
//! Written headers are exactly `P6\n{width} {height} 255\n`.

use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::masking::Image;

fn codec(e: image::ImageError) -> Error {
    Error::Image(e.to_string())
}

/// Quantizes to 8 bits (round to nearest) and encodes.
pub fn encode_image(img: &Image) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let (subtype, color) = match img.channels() {
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        _ => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
    };
    let mut out = Vec::with_capacity(bytes.len() + 16);
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&bytes, img.width() as u32, img.height() as u32, color)
        .map_err(codec)?;
    Ok(out)
}

/// Decodes a P5 or P6 file with maxval 255 into values `byte / 255`.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(codec)?;
    let decoded = DynamicImage::from_decoder(decoder).map_err(codec)?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        other => {
            return Err(Error::Image(format!(
                "unsupported pixel format {:?}; expected 8-bit P5 or P6",
                other.color()
            )))
        }
    };
    Image::new(w, h, channels, raw.into_iter().map(|b| b as f64 / 255.0).collect())
}

pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_image(img)?)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<Image> {
    decode_image(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes_are_fixed() {
        let img = Image::new(2, 1, 3, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let bytes = encode_image(&img).unwrap();
        assert_eq!(&bytes[..bytes.len() - 6], b"P6\n2 1 255\n");
        assert_eq!(&bytes[bytes.len() - 6..], &[255, 0, 0, 0, 0, 255]);
        let gray = Image::new(1, 1, 1, vec![0.5]).unwrap();
        assert_eq!(encode_image(&gray).unwrap(), b"P5\n1 1 255\n\x80");
    }

    #[test]
    fn eight_bit_values_round_trip_exactly() {
        let data: Vec<f64> = (0..48).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = Image::new(4, 4, 3, data).unwrap();
        assert_eq!(decode_image(&encode_image(&img).unwrap()).unwrap(), img);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode_image(b"P6\n2 2\n255\n\x00").is_err());
        assert!(decode_image(b"hello").is_err());
    }
}
