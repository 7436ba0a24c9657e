//! Image file I/O: 8/16-bit PNG and little-endian PFM.
//!
//! Samples are normalized to `[0, 1]` on load and clamped to it on save.
//! 8-bit and 16-bit quantization rounds to the nearest level with ties away
//! from zero, so `0.5` is stored as `128 / 255`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png8,
    Png16,
    Pfm,
}

impl ImageFormat {
    /// Format implied by the file extension; `.png` means 8-bit.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
            Some("png") => Ok(ImageFormat::Png8),
            Some("pfm") => Ok(ImageFormat::Pfm),
            other => Err(Error::Format(format!("unsupported image extension {other:?} for {}", path.display()))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png8 | ImageFormat::Png16 => "png",
            ImageFormat::Pfm => "pfm",
        }
    }
}

pub fn load_image(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut magic = [0u8; 2];
    reader.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    drop(reader);
    if &magic == b"PF" || &magic == b"Pf" {
        load_pfm(path)
    } else {
        load_png(path)
    }
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    save_image_as(img, path, ImageFormat::from_path(path)?)
}

pub fn save_image_as(img: &Image, path: &Path, format: ImageFormat) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match format {
        ImageFormat::Png8 => save_png(img, path, png::BitDepth::Eight),
        ImageFormat::Png16 => save_png(img, path, png::BitDepth::Sixteen),
        ImageFormat::Pfm => save_pfm(img, path),
    }
}

pub(crate) fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn quantize_u16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

fn load_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    {
        let info = reader.info();
        if info.color_type != png::ColorType::Indexed && (info.bit_depth as u8) < 8 {
            return Err(Error::Format(format!("{}: unsupported bit depth {}", path.display(), info.bit_depth as u8)));
        }
    }
    let size = reader.output_buffer_size().ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    let (src_channels, keep) = match frame.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::Format(format!("{}: palette was not expanded", path.display()))),
    };
    let (h, w) = (frame.height as usize, frame.width as usize);
    let samples: Vec<f32> = match frame.bit_depth {
        png::BitDepth::Eight => buf[..frame.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => {
            buf[..frame.buffer_size()].chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0).collect()
        }
        d => return Err(Error::Format(format!("{}: unsupported bit depth {}", path.display(), d as u8))),
    };
    let mut data = Vec::with_capacity(h * w * keep);
    for px in samples.chunks_exact(src_channels) {
        data.extend_from_slice(&px[..keep]);
    }
    Image::new(h, w, keep, data)
}

fn png_err(path: &Path, e: png::DecodingError) -> Error {
    match e {
        png::DecodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn save_png(img: &Image, path: &Path, depth: png::BitDepth) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(if img.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(depth);
    let bytes: Vec<u8> = match depth {
        png::BitDepth::Sixteen => img.data().iter().flat_map(|&v| quantize_u16(v).to_be_bytes()).collect(),
        _ => img.data().iter().map(|&v| quantize_u8(v)).collect(),
    };
    let to_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    };
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(&bytes).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Writes raw 8-bit gray levels (used for label maps).
pub(crate) fn save_gray8(levels: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(to_err)?;
    writer.write_image_data(levels).map_err(to_err)?;
    writer.finish().map_err(to_err)
}

/// Reads raw 8-bit gray levels of a single-channel PNG.
pub(crate) fn load_gray8(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let img = load_png(path)?;
    if img.channels() != 1 {
        return Err(Error::Format(format!("{}: expected a single-channel label image", path.display())));
    }
    let levels = img.data().iter().map(|&v| quantize_u8(v)).collect();
    Ok((levels, img.height(), img.width()))
}

fn load_pfm(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let bad = |what: &str| Error::Format(format!("{}: malformed PFM ({what})", path.display()));
    let read_token = |reader: &mut BufReader<File>| -> Result<String> {
        let mut tok = Vec::new();
        loop {
            let mut byte = [0u8; 1];
            reader.read_exact(&mut byte).map_err(|e| Error::io(path, e))?;
            if byte[0].is_ascii_whitespace() {
                if tok.is_empty() {
                    continue;
                }
                return String::from_utf8(tok).map_err(|_| Error::Format("non-ascii PFM header".into()));
            }
            tok.push(byte[0]);
        }
    };
    let magic = read_token(&mut reader)?;
    let channels = match magic.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("magic")),
    };
    let width: usize = read_token(&mut reader)?.parse().map_err(|_| bad("width"))?;
    let height: usize = read_token(&mut reader)?.parse().map_err(|_| bad("height"))?;
    let scale: f32 = read_token(&mut reader)?.parse().map_err(|_| bad("scale"))?;
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * channels * 4];
    reader.read_exact(&mut raw).map_err(|_| bad("truncated data"))?;
    if reader.fill_buf().map(|b| !b.is_empty()).unwrap_or(false) {
        return Err(bad("trailing data"));
    }
    let mut data = vec![0f32; width * height * channels];
    let row_len = width * channels;
    for (file_row, chunk) in raw.chunks_exact(row_len * 4).enumerate() {
        // PFM stores the bottom row first.
        let row = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let bytes = [b[0], b[1], b[2], b[3]];
            let v = if little { f32::from_le_bytes(bytes) } else { f32::from_be_bytes(bytes) };
            if !v.is_finite() {
                return Err(bad("non-finite sample"));
            }
            data[row * row_len + i] = v.clamp(0.0, 1.0);
        }
    }
    Image::new(height, width, channels, data)
}

fn save_pfm(img: &Image, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let magic = if img.channels() == 3 { "PF" } else { "Pf" };
    let io = |e| Error::io(path, e);
    write!(w, "{magic}\n{} {}\n-1.0\n", img.width(), img.height()).map_err(io)?;
    let row_len = img.width() * img.channels();
    for row in (0..img.height()).rev() {
        for v in &img.data()[row * row_len..(row + 1) * row_len] {
            w.write_all(&v.clamp(0.0, 1.0).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
