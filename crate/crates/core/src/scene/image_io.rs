use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

use super::RgbImage;

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads an 8- or 16-bit PNG. An alpha channel is composited over
/// `background`.
pub fn read_image(path: &Path, background: [f64; 3]) -> Result<RgbImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "image file not found"),
        ));
    }
    let img = image::open(path).map_err(|e| image_error(path, e))?.into_rgba32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img
        .pixels()
        .map(|p| {
            let [r, g, b, a] = p.0;
            let a = a.clamp(0.0, 1.0) as f64;
            [r, g, b]
                .iter()
                .zip(background)
                .map(|(c, bg)| ((*c as f64).clamp(0.0, 1.0) * a + bg * (1.0 - a)) as f32)
                .collect::<Vec<_>>()
                .try_into()
                .expect("three channels")
        })
        .collect();
    RgbImage::new(w, h, pixels)
}

/// 8-bit RGB PNG, values rounded to the nearest level.
pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    image::save_buffer(
        path,
        &bytes,
        img.width as u32,
        img.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| image_error(path, e))
}

/// Portable float map: color (`PF`) when `channels == 3`, grayscale (`Pf`)
/// when 1. Rows are stored bottom-to-top, little-endian.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f32]) -> Result<()> {
    if (channels != 1 && channels != 3) || data.len() != width * height * channels {
        return Err(Error::InvalidParameter(format!(
            "{} values do not form a {width}x{height}x{channels} float map",
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * 4 + 32);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    write!(out, "{tag}\n{width} {height}\n-1.0\n").expect("write to vec");
    let row = width * channels;
    for j in (0..height).rev() {
        for v in &data[j * row..(j + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, channels, data)` with rows top-to-bottom.
pub fn read_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let parse = |m: &str| Error::Parse {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    // three whitespace-terminated header tokens groups: tag, dims, scale
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse("truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match tokens[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(parse("not a PFM file")),
    };
    let width: usize = tokens[1].parse().map_err(|_| parse("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| parse("bad height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| parse("bad scale"))?;
    let n = width * height * channels;
    if bytes.len() < pos + 4 * n {
        return Err(parse("truncated pixel data"));
    }
    let word = |k: usize| {
        let b: [u8; 4] = bytes[pos + 4 * k..pos + 4 * k + 4].try_into().expect("4 bytes");
        if scale < 0.0 {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        }
    };
    let row = width * channels;
    let mut data = vec![0.0; n];
    for j in 0..height {
        let src = (height - 1 - j) * row;
        for k in 0..row {
            data[j * row + k] = word(src + k);
        }
    }
    Ok((width, height, channels, data))
}
