//! PNG reading and writing for slides, masks, and indexed classmaps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};

use super::{ForegroundMask, RasterImage};

/// Writes an 8-bit RGB PNG.
pub fn save_rgb_png(image: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, image.width, image.height);
    encoder.set_color(ColorType::Rgb);
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&image.pixels)?;
    Ok(())
}

/// Reads a PNG into an RGB raster. Grayscale and alpha inputs are expanded
/// and flattened to RGB.
pub fn load_rgb_png(path: impl AsRef<Path>) -> Result<RasterImage> {
    let (info, data) = decode(path.as_ref(), Transformations::EXPAND | Transformations::STRIP_16)?;
    let (width, height) = (info.0, info.1);
    let pixels = match info.2 {
        ColorType::Rgb => data,
        ColorType::Rgba => data
            .chunks_exact(4)
            .flat_map(|px| [px[0], px[1], px[2]])
            .collect(),
        ColorType::Grayscale => data.iter().flat_map(|&v| [v, v, v]).collect(),
        ColorType::GrayscaleAlpha => data
            .chunks_exact(2)
            .flat_map(|px| [px[0], px[0], px[0]])
            .collect(),
        other => {
            return Err(Error::invalid_input(format!(
                "unsupported png color type {other:?}"
            )))
        }
    };
    RasterImage::new(width, height, pixels)
}

/// Writes a mask as 8-bit grayscale, 255 = foreground.
pub fn save_mask_png(mask: &ForegroundMask, path: impl AsRef<Path>) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, mask.width, mask.height);
    encoder.set_color(ColorType::Grayscale);
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    let data: Vec<u8> = mask.flags.iter().map(|&f| if f { 255 } else { 0 }).collect();
    writer.write_image_data(&data)?;
    Ok(())
}

/// Reads a grayscale (or RGB) PNG as a mask; any nonzero sample is
/// foreground.
pub fn load_mask_png(path: impl AsRef<Path>) -> Result<ForegroundMask> {
    let image = load_rgb_png(path)?;
    let flags = image
        .pixels
        .chunks_exact(3)
        .map(|px| px[0] > 0 || px[1] > 0 || px[2] > 0)
        .collect();
    ForegroundMask::new(image.width, image.height, flags)
}

/// Writes an 8-bit grayscale PNG from raw luminance bytes.
pub fn save_gray_png(width: u32, height: u32, data: &[u8], path: impl AsRef<Path>) -> Result<()> {
    if data.len() != width as usize * height as usize {
        return Err(Error::invalid_input("gray buffer does not match dimensions"));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width, height);
    encoder.set_color(ColorType::Grayscale);
    encoder.set_depth(BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(data)?;
    Ok(())
}

/// Writes an indexed PNG with the given RGB palette.
pub fn save_indexed_png(
    width: u32,
    height: u32,
    indices: &[u8],
    palette: &[[u8; 3]],
    path: impl AsRef<Path>,
) -> Result<()> {
    if indices.len() != width as usize * height as usize {
        return Err(Error::invalid_input("index buffer does not match dimensions"));
    }
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, width, height);
    encoder.set_color(ColorType::Indexed);
    encoder.set_depth(BitDepth::Eight);
    let flat: Vec<u8> = palette.iter().flatten().copied().collect();
    encoder.set_palette(flat);
    let mut writer = encoder.write_header()?;
    writer.write_image_data(indices)?;
    Ok(())
}

/// Reads an 8-bit indexed PNG back as raw palette indices.
pub fn load_indexed_png(path: impl AsRef<Path>) -> Result<(u32, u32, Vec<u8>)> {
    let (info, data) = decode(path.as_ref(), Transformations::IDENTITY)?;
    if info.2 != ColorType::Indexed || info.3 != BitDepth::Eight {
        return Err(Error::invalid_input(
            "expected an 8-bit indexed png".to_string(),
        ));
    }
    Ok((info.0, info.1, data))
}

fn decode(
    path: &Path,
    transformations: Transformations,
) -> Result<((u32, u32, ColorType, BitDepth), Vec<u8>)> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(transformations);
    let mut reader = decoder.read_info()?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::invalid_input("png output size overflows"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf)?;
    let len = info.buffer_size();
    buf.truncate(len);
    Ok(((info.width, info.height, info.color_type, info.bit_depth), buf))
}
