//! Image ingestion (IDX files, image directories) and 8-bit PGM output.

use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::grid::ComplexGrid2D;

/// Real grayscale image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels do not form a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn to_object(&self) -> ComplexGrid2D {
        ComplexGrid2D::from_real(self.height, self.width, &self.pixels)
            .expect("image dims are valid")
    }
}

#[derive(Clone, Debug)]
pub struct ImageSet {
    pub images: Vec<Image>,
    pub source: String,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|im| (im.height, im.width))
    }
}

const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

/// Parses an IDX image file (big-endian header, unsigned byte pixels).
pub fn parse_idx(bytes: &[u8]) -> Result<Vec<Image>> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "IDX header needs 16 bytes, file has {}",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let magic = word(0);
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "IDX magic {magic:#010x} is not an unsigned-byte image file (0x00000803)"
        )));
    }
    let (count, rows, cols) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let pixels = rows
        .checked_mul(cols)
        .filter(|&p| p > 0)
        .ok_or_else(|| Error::Format(format!("invalid IDX image size {rows}x{cols}")))?;
    let total = count
        .checked_mul(pixels)
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    let payload = &bytes[16..];
    if payload.len() < total {
        return Err(Error::Format(format!(
            "IDX payload truncated: need {total} bytes, have {}",
            payload.len()
        )));
    }
    Ok(payload[..total]
        .chunks_exact(pixels)
        .map(|chunk| Image {
            height: rows,
            width: cols,
            pixels: chunk.iter().map(|&b| b as f64 / 255.0).collect(),
        })
        .collect())
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<ImageSet> {
    let path = path.as_ref();
    let images = parse_idx(&fs::read(path)?)?;
    Ok(ImageSet {
        images,
        source: path.display().to_string(),
    })
}

/// Serializes 8-bit images in IDX form. Pixels are rounded to the nearest
/// level after clamping to `[0, 1]`.
pub fn encode_idx(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images
        .first()
        .map(|im| (im.height, im.width))
        .unwrap_or((0, 0));
    let mut buf = Vec::with_capacity(16 + images.len() * rows * cols);
    buf.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    for v in [images.len(), rows, cols] {
        buf.extend_from_slice(&(v as u32).to_be_bytes());
    }
    for im in images {
        if (im.height, im.width) != (rows, cols) {
            return Err(Error::Shape("IDX images must share dims".into()));
        }
        buf.extend(im.pixels.iter().map(|&v| to_byte(v)));
    }
    Ok(buf)
}

/// Clamps to `[0, 1]` and scales to 8 bits, rounding half up.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Loads every PNG/PGM image in `dir` (sorted by name), converted to luma,
/// centre-cropped to a square and bilinearly resampled to `size x size`.
pub fn load_image_dir(dir: impl AsRef<Path>, size: usize) -> Result<ImageSet> {
    let dir = dir.as_ref();
    if size == 0 {
        return Err(Error::InvalidParameter(
            "target image size must be positive".into(),
        ));
    }
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        match load_image_file(&path, Some(size)) {
            Ok(img) => images.push(img),
            Err(e) => warn!("skipping unreadable image {}: {e}", path.display()),
        }
    }
    if images.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no readable images in {}",
            dir.display()
        )));
    }
    Ok(ImageSet {
        images,
        source: dir.display().to_string(),
    })
}

/// Reads one image as luma in `[0, 1]`. With `size`, the image is
/// centre-cropped to a square and resampled to `size x size`.
pub fn load_image_file(path: impl AsRef<Path>, size: Option<usize>) -> Result<Image> {
    let luma = image::open(path.as_ref())?.to_luma32f();
    let (w, h) = luma.dimensions();
    let pixels: Vec<f64> = luma
        .as_raw()
        .iter()
        .map(|&v| (v as f64).clamp(0.0, 1.0))
        .collect();
    let img = Image::new(h as usize, w as usize, pixels)?;
    Ok(match size {
        Some(size) => resize_bilinear(&center_crop(&img), size),
        None => img,
    })
}

/// Largest centred square window.
pub fn center_crop(img: &Image) -> Image {
    let side = img.height.min(img.width);
    let top = (img.height - side) / 2;
    let left = (img.width - side) / 2;
    let mut pixels = Vec::with_capacity(side * side);
    for r in top..top + side {
        pixels.extend_from_slice(&img.pixels[r * img.width + left..r * img.width + left + side]);
    }
    Image {
        height: side,
        width: side,
        pixels,
    }
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &Image, size: usize) -> Image {
    if img.height == size && img.width == size {
        return img.clone();
    }
    let axis = |dst: usize, src_len: usize| {
        let scale = src_len as f64 / size as f64;
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut pixels = Vec::with_capacity(size * size);
    for r in 0..size {
        let (r0, r1, fr) = axis(r, img.height);
        for c in 0..size {
            let (c0, c1, fc) = axis(c, img.width);
            let p = |rr: usize, cc: usize| img.pixels[rr * img.width + cc];
            let top = p(r0, c0) * (1.0 - fc) + p(r0, c1) * fc;
            let bottom = p(r1, c0) * (1.0 - fc) + p(r1, c1) * fc;
            pixels.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Image {
        height: size,
        width: size,
        pixels,
    }
}

/// Binary (P5) 8-bit PGM of `values`, clamped to `[0, 1]`.
pub fn encode_pgm(height: usize, width: usize, values: &[f64]) -> Vec<u8> {
    let mut buf = format!("P5\n{width} {height}\n255\n").into_bytes();
    buf.extend(values.iter().map(|&v| to_byte(v)));
    buf
}

pub fn write_pgm(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    values: &[f64],
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(height, width, values))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_files_are_rejected() {
        let mut bytes = vec![0, 0, 8, 1];
        bytes.extend_from_slice(&[0, 0, 0, 1]);
        bytes.extend_from_slice(&[0; 9]);
        assert!(matches!(parse_idx(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let img = Image::new(2, 2, vec![0.0, 0.5, 1.0, 0.25]).unwrap();
        let bytes = encode_idx(&[img.clone(), img]).unwrap();
        assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(parse_idx(&bytes).unwrap().len(), 2);
    }

    #[test]
    fn byte_rounding_is_half_up_and_clamped() {
        assert_eq!(to_byte(0.5), 128);
        assert_eq!(to_byte(-0.2), 0);
        assert_eq!(to_byte(1.7), 255);
        assert_eq!(to_byte(1.0), 255);
    }

    #[test]
    fn constant_image_resizes_to_constant() {
        let img = Image::new(30, 50, vec![0.3; 1500]).unwrap();
        let out = resize_bilinear(&center_crop(&img), 17);
        assert!(out.pixels.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        assert_eq!((out.height, out.width), (17, 17));
    }

    #[test]
    fn pgm_header() {
        let bytes = encode_pgm(1, 2, &[0.5, 2.0]);
        assert_eq!(&bytes[..11], b"P5\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[128, 255]);
    }
}
