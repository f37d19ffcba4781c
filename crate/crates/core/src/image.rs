//! 8-bit RGB images, PPM/PNG I/O, bilinear resizing and box rendering.
//!
//! Coordinates: `x` is the column, `y` the row, origin at the top-left pixel.
//! Boxes are half-open: a box covers `xmin <= x < xmax`, `ymin <= y < ymax`.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub type Rgb = [u8; 3];

impl Image {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image extents must be positive, got {width}x{height}")));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Ok(Image { width, height, data })
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("image extents must be positive, got {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Format(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Image { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Copy of the `w x h` region at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::invalid(format!(
                "crop {w}x{h} at ({x},{y}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h * 3);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Image::from_raw(w, h, data)
    }

    /// Pastes `src` with its top-left corner at `(x, y)`, clipping at the borders.
    pub fn blit(&mut self, src: &Image, x: usize, y: usize) {
        for sy in 0..src.height {
            let ty = y + sy;
            if ty >= self.height {
                break;
            }
            let w = src.width.min(self.width.saturating_sub(x));
            if w == 0 {
                return;
            }
            let d = (ty * self.width + x) * 3;
            let s = sy * src.width * 3;
            self.data[d..d + w * 3].copy_from_slice(&src.data[s..s + w * 3]);
        }
    }

    /// Whether every pixel of the `w x h` region at `(x, y)` has the same colour.
    pub fn region_is_uniform(&self, x: usize, y: usize, w: usize, h: usize) -> Option<Rgb> {
        let first = self.pixel(x, y);
        for row in y..y + h {
            let start = (row * self.width + x) * 3;
            if !self.data[start..start + w * 3]
                .chunks_exact(3)
                .all(|p| p == first)
            {
                return None;
            }
        }
        Some(first)
    }

    /// Channel-major `3 x H x W` values scaled to `[0, 1]`, appended to `out`.
    pub fn write_normalized_chw(&self, out: &mut Vec<f32>) {
        let plane = self.width * self.height;
        let start = out.len();
        out.resize(start + 3 * plane, 0.0);
        let dst = &mut out[start..];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                dst[c * plane + i] = f32::from(px[c]) / 255.0;
            }
        }
    }
}

/// Half-open axis-aligned box in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: i64,
    pub ymin: i64,
    pub xmax: i64,
    pub ymax: i64,
}

impl BBox {
    pub fn new(xmin: i64, ymin: i64, xmax: i64, ymax: i64) -> Result<Self> {
        if xmin >= xmax || ymin >= ymax {
            return Err(Error::invalid(format!(
                "degenerate box [{xmin},{ymin},{xmax},{ymax}]"
            )));
        }
        Ok(BBox { xmin, ymin, xmax, ymax })
    }

    pub fn width(&self) -> i64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> i64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> i64 {
        self.width().max(0) * self.height().max(0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.xmin + self.xmax) as f64 / 2.0,
            (self.ymin + self.ymax) as f64 / 2.0,
        )
    }

    pub fn contains(&self, other: &BBox) -> bool {
        self.xmin <= other.xmin && self.ymin <= other.ymin && self.xmax >= other.xmax && self.ymax >= other.ymax
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.xmin as f64 && x < self.xmax as f64 && y >= self.ymin as f64 && y < self.ymax as f64
    }

    pub fn intersection_area(&self, other: &BBox) -> i64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        w.max(0) * h.max(0)
    }

    /// Intersection over union.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn as_array(&self) -> [i64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

fn skip_ws_and_comments(bytes: &[u8], mut i: usize) -> usize {
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
        } else {
            return i;
        }
    }
}

fn header_number(bytes: &[u8], i: &mut usize, what: &str) -> Result<usize> {
    *i = skip_ws_and_comments(bytes, *i);
    let start = *i;
    while *i < bytes.len() && bytes[*i].is_ascii_digit() {
        *i += 1;
    }
    if start == *i {
        return Err(Error::Format(format!("PPM header: missing {what}")));
    }
    std::str::from_utf8(&bytes[start..*i])
        .expect("ascii digits")
        .parse()
        .map_err(|_| Error::Format(format!("PPM header: {what} out of range")))
}

/// Parses a binary (`P6`) PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::Format("not a binary PPM (missing P6 magic)".into()));
    }
    let mut i = 2;
    let width = header_number(bytes, &mut i, "width")?;
    let height = header_number(bytes, &mut i, "height")?;
    let maxval = header_number(bytes, &mut i, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("PPM maxval {maxval} unsupported (need 255)")));
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(Error::Format("PPM header: expected whitespace before pixel data".into()));
    }
    i += 1;
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::Format("PPM dimensions overflow".into()))?;
    let pixels = &bytes[i..];
    if pixels.len() < need {
        return Err(Error::Format(format!(
            "truncated PPM pixel data: expected {need} bytes, got {}",
            pixels.len()
        )));
    }
    Image::from_raw(width, height, pixels[..need].to_vec())
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Format("PNG too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src = &buf[..info.buffer_size()];
    let data: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => src.to_vec(),
        png::ColorType::Rgba => src.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => src.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => src.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::Format("PNG: unexpanded palette".into())),
    };
    Image::from_raw(w, h, data)
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::Format(format!("PNG: {e}")))?;
        w.write_image_data(&image.data).map_err(|e| Error::Format(format!("PNG: {e}")))?;
    }
    Ok(out)
}

/// Loads a PPM (P6) or PNG, detected by magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_ppm(&bytes)
    }
}

/// Saves as PNG when the extension is `.png`, otherwise as binary PPM.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png(image)? } else { encode_ppm(image) };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Source sample positions for corner-aligned resampling of `src` onto `dst` pixels.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                0.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of the `w x h` region at `(x, y)` to `out_w x out_h`.
///
/// Corner-aligned: output corners sample input corners exactly.
pub fn resize_region(image: &Image, x: usize, y: usize, w: usize, h: usize, out_w: usize, out_h: usize) -> Image {
    assert!(w > 0 && h > 0 && x + w <= image.width && y + h <= image.height);
    assert!(out_w > 0 && out_h > 0);
    let xt = taps(w, out_w);
    let yt = taps(h, out_h);
    let stride = image.width * 3;
    let src = &image.data;
    let mut data = Vec::with_capacity(out_w * out_h * 3);
    let at = |row: usize, col: usize, c: usize| f32::from(src[(y + row) * stride + (x + col) * 3 + c]);
    for &(y0, y1, fy) in &yt {
        for &(x0, x1, fx) in &xt {
            for c in 0..3 {
                let top = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
                let bottom = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image {
        width: out_w,
        height: out_h,
        data,
    }
}

/// Bilinear resize of the whole image to `size x size`.
pub fn resize_bilinear(image: &Image, size: usize) -> Image {
    resize_region(image, 0, 0, image.width, image.height, size, size)
}

/// Paints the border (`thickness` pixels, inside the box) of every box.
/// Parts of a box outside the image are skipped.
pub fn draw_boxes(image: &Image, boxes: &[BBox], color: Rgb, thickness: usize) -> Image {
    let mut out = image.clone();
    let t = thickness.max(1) as i64;
    let (w, h) = (image.width as i64, image.height as i64);
    for b in boxes {
        let x0 = b.xmin.max(0);
        let x1 = b.xmax.min(w);
        let y0 = b.ymin.max(0);
        let y1 = b.ymax.min(h);
        for yy in y0..y1 {
            for xx in x0..x1 {
                let border = xx < b.xmin + t || xx >= b.xmax - t || yy < b.ymin + t || yy >= b.ymax - t;
                if border {
                    out.set_pixel(xx as usize, yy as usize, color);
                }
            }
        }
    }
    out
}
