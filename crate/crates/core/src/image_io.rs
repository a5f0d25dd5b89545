//! PNG input and label-map rendering.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::superpixel::LabelMap;
use crate::tensor::Tensor;
use crate::util::write_atomic;

/// Decodes an 8-bit PNG into a `[H, W, 3]` tensor with values in `[0, 255]`.
///
/// Grayscale is replicated across the three channels and alpha is dropped.
pub fn read_image_png(path: impl AsRef<Path>) -> Result<Tensor> {
    read_image_png_from(BufReader::new(File::open(path)?))
}

pub fn read_image_png_from<R: Read + Seek>(r: BufReader<R>) -> Result<Tensor> {
    let bad = |e: png::DecodingError| match e {
        png::DecodingError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedPng(other.to_string()),
    };
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(bad)?;
    {
        let info = reader.info();
        if info.bit_depth == BitDepth::Sixteen {
            return Err(Error::UnsupportedPng("16-bit samples".into()));
        }
        if info.color_type == ColorType::Indexed && info.trns.is_some() {
            return Err(Error::UnsupportedPng("palette with transparency".into()));
        }
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedPng("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(bad)?;
    if frame.bit_depth != BitDepth::Eight {
        return Err(Error::UnsupportedPng(format!("bit depth {:?}", frame.bit_depth)));
    }
    let (h, w) = (frame.height as usize, frame.width as usize);
    let samples = frame.color_type.samples();
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let line = &buf[y * frame.line_size..];
        for x in 0..w {
            let px = &line[x * samples..(x + 1) * samples];
            match frame.color_type {
                ColorType::Grayscale | ColorType::GrayscaleAlpha => {
                    data.extend_from_slice(&[px[0] as f32; 3]);
                }
                ColorType::Rgb | ColorType::Rgba => {
                    data.extend(px[..3].iter().map(|&v| v as f32));
                }
                ColorType::Indexed => return Err(Error::UnsupportedPng("palette was not expanded".into())),
            }
        }
    }
    Tensor::new(vec![h, w, 3], data)
}

/// The fixed 256-entry label palette (the PASCAL VOC bit-interleaved map).
pub fn palette_color(label: u32) -> [u8; 3] {
    let mut c = (label % 256) as u8;
    let mut rgb = [0u8; 3];
    for shift in (0..8).rev() {
        rgb[0] |= (c & 1) << shift;
        rgb[1] |= ((c >> 1) & 1) << shift;
        rgb[2] |= ((c >> 2) & 1) << shift;
        c >>= 3;
    }
    rgb
}

fn write_png<W: Write>(w: W, width: usize, height: usize, color: ColorType, data: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::Io(io),
        other => Error::UnsupportedPng(other.to_string()),
    };
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(())
}

/// Renders a label map with one palette color per label (`label mod 256`).
pub fn write_segmentation_png(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let rgb: Vec<u8> = labels.labels().iter().flat_map(|&l| palette_color(l)).collect();
    write_atomic(path.as_ref(), |f| {
        write_png(BufWriter::new(f), labels.width(), labels.height(), ColorType::Rgb, &rgb)
    })
}

/// Renders a `[H, W]` map with values in `[0, 1]` as 8-bit grayscale.
/// Values outside the range are clamped.
pub fn write_gray_png(map: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = map.matrix_dims()?;
    let gray: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_atomic(path.as_ref(), |f| {
        write_png(BufWriter::new(f), w, h, ColorType::Grayscale, &gray)
    })
}

/// Writes an 8-bit RGB image from a `[H, W, 3]` tensor (values clamped to `[0, 255]`).
pub fn write_image_png(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let &[h, w, 3] = image.shape() else {
        return Err(Error::ShapeMismatch(format!(
            "expected [H,W,3], got {:?}",
            image.shape()
        )));
    };
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| v.clamp(0.0, 255.0).round() as u8)
        .collect();
    write_atomic(path.as_ref(), |f| {
        write_png(BufWriter::new(f), w, h, ColorType::Rgb, &bytes)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Cursor;

    fn encode(width: u32, height: u32, color: ColorType, depth: BitDepth, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, width, height);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(data).unwrap();
        }
        out
    }

    fn decode(bytes: Vec<u8>) -> Result<Tensor> {
        read_image_png_from(BufReader::new(Cursor::new(bytes)))
    }

    #[test]
    fn white_rgb() {
        let t = decode(encode(2, 2, ColorType::Rgb, BitDepth::Eight, &[255; 12])).unwrap();
        assert_eq!(t.shape(), &[2, 2, 3]);
        assert!(t.data().iter().all(|&v| v == 255.0));
    }

    #[test]
    fn black_pixel_and_gray_replication() {
        let t = decode(encode(1, 1, ColorType::Rgb, BitDepth::Eight, &[0, 0, 0])).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0]);
        let g = decode(encode(2, 1, ColorType::Grayscale, BitDepth::Eight, &[7, 200])).unwrap();
        assert_eq!(g.data(), &[7., 7., 7., 200., 200., 200.]);
    }

    #[test]
    fn rejects_sixteen_bit() {
        let bytes = encode(1, 1, ColorType::Grayscale, BitDepth::Sixteen, &[1, 2]);
        assert!(matches!(decode(bytes), Err(Error::UnsupportedPng(_))));
    }

    #[test]
    fn rejects_transparent_palette() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(ColorType::Indexed);
            enc.set_depth(BitDepth::Eight);
            enc.set_palette(vec![10, 20, 30]);
            enc.set_trns(vec![0]);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0]).unwrap();
        }
        assert!(matches!(decode(out), Err(Error::UnsupportedPng(_))));
    }

    #[test]
    fn opaque_palette_is_expanded() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(ColorType::Indexed);
            enc.set_depth(BitDepth::Eight);
            enc.set_palette(vec![10, 20, 30, 40, 50, 60]);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[1, 0]).unwrap();
        }
        assert_eq!(decode(out).unwrap().data(), &[40., 50., 60., 10., 20., 30.]);
    }

    #[test]
    fn palette_is_distinct() {
        let colors: HashSet<[u8; 3]> = (0..256).map(palette_color).collect();
        assert_eq!(colors.len(), 256);
        assert_eq!(palette_color(1), palette_color(257));
    }

    #[test]
    fn segmentation_png_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.png");
        let map = LabelMap::new(2, 2, vec![0, 1, 1, 0]).unwrap();
        write_segmentation_png(&map, &path).unwrap();
        let t = read_image_png(&path).unwrap();
        let px: Vec<[u8; 3]> = t
            .data()
            .chunks(3)
            .map(|c| [c[0] as u8, c[1] as u8, c[2] as u8])
            .collect();
        assert_eq!(px[0], palette_color(0));
        assert_eq!(px[1], palette_color(1));
        assert_eq!(px[0], px[3]);
        assert_ne!(px[0], px[1]);

        let uniform = LabelMap::new(3, 3, vec![4; 9]).unwrap();
        write_segmentation_png(&uniform, &path).unwrap();
        let t = read_image_png(&path).unwrap();
        let distinct: HashSet<Vec<u32>> = t
            .data()
            .chunks(3)
            .map(|c| c.iter().map(|v| v.to_bits()).collect())
            .collect();
        assert_eq!(distinct.len(), 1);
    }
}
