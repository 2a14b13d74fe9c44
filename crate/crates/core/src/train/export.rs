use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Background black, pedestrian red, cyclist green, car blue.
pub const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [255, 0, 0], [0, 255, 0], [0, 0, 255]];

/// Writes an `[H, W]` label map as an RGB PNG.
pub fn save_mask_png(path: &Path, mask: &Tensor<u8>) -> Result<()> {
    let &[h, w] = mask.shape() else {
        return Err(Error::shape("save_mask_png", format!("need [H, W], got {:?}", mask.shape())));
    };
    let mut rgb = Vec::with_capacity(h * w * 3);
    for &c in mask.data() {
        let color = PALETTE
            .get(c as usize)
            .ok_or_else(|| Error::Data(format!("label {c} has no palette color")))?;
        rgb.extend_from_slice(color);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(&rgb).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads a PNG written by [`save_mask_png`] back into labels.
pub fn load_mask_png(path: &Path) -> Result<Tensor<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let png_err = |e: png::DecodingError| Error::format(path, e.to_string());
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info().map_err(png_err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(path, format!("expected 8-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let labels = buf[..info.buffer_size()]
        .chunks(3)
        .map(|px| {
            PALETTE
                .iter()
                .position(|c| c == px)
                .map(|c| c as u8)
                .ok_or_else(|| Error::format(path, format!("color {px:?} is not in the palette")))
        })
        .collect::<Result<Vec<u8>>>()?;
    Tensor::new(vec![h, w], labels)
}
