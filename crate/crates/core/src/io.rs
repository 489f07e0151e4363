//! 8-bit PNG and binary PPM (P6) import/export. Samples map to floats by
//! /255 on read and round(x*255) with clamp on write.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::ImageBuf;

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn read_png(path: &Path) -> Result<ImageBuf> {
    let dynimg = image::open(path)?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg {
        image::DynamicImage::ImageLuma8(g) => {
            let data = g.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
            ImageBuf::new(w, h, 1, data)
        }
        other => {
            let rgb = other.to_rgb8();
            let mut data = vec![0.0; w * h * 3];
            for (i, p) in rgb.pixels().enumerate() {
                for c in 0..3 {
                    data[c * w * h + i] = p.0[c] as f64 / 255.0;
                }
            }
            ImageBuf::new(w, h, 3, data)
        }
    }
}

pub fn write_png(img: &ImageBuf, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let n = img.width() * img.height();
    match img.channels() {
        1 => {
            let buf: Vec<u8> = img.plane(0).iter().map(|&v| to_u8(v)).collect();
            let out = image::GrayImage::from_raw(w, h, buf).expect("buffer sized to image");
            out.save(path)?;
        }
        _ => {
            let mut buf = vec![0u8; n * 3];
            for c in 0..3 {
                let plane = img.plane(c);
                for i in 0..n {
                    buf[i * 3 + c] = to_u8(plane[i]);
                }
            }
            let out = image::RgbImage::from_raw(w, h, buf).expect("buffer sized to image");
            out.save(path)?;
        }
    }
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<ImageBuf> {
    let bytes = fs::read(path).map_err(|source| Error::Read { path: path.into(), source })?;
    let mut pos = 0usize;
    let mut next_token = || -> Result<String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::param("truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if next_token()? != "P6" {
        return Err(Error::param("not a P6 PPM file"));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse().map_err(|_| Error::param(format!("bad PPM header field: {s}")))
    };
    let w = parse(next_token()?)?;
    let h = parse(next_token()?)?;
    let maxval = parse(next_token()?)?;
    if maxval != 255 {
        return Err(Error::param(format!("unsupported PPM maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::param("truncated PPM pixel data"));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0; need];
    for i in 0..w * h {
        for c in 0..3 {
            data[c * w * h + i] = raster[i * 3 + c] as f64 / 255.0;
        }
    }
    ImageBuf::new(w, h, 3, data)
}

pub fn write_ppm(img: &ImageBuf, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|source| Error::Write { path: path.into(), source })?;
    let mut out = BufWriter::new(file);
    let n = img.width() * img.height();
    write!(out, "P6\n{} {}\n255\n", img.width(), img.height())?;
    let mut raster = vec![0u8; n * 3];
    for i in 0..n {
        for c in 0..3 {
            let plane = img.plane(if img.channels() == 1 { 0 } else { c });
            raster[i * 3 + c] = to_u8(plane[i]);
        }
    }
    out.write_all(&raster)?;
    Ok(())
}

/// Dispatch on extension; `.ppm` falls back to the dependency-free reader.
pub fn read_image(path: &Path) -> Result<ImageBuf> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => read_ppm(path),
        _ => read_png(path),
    }
}
