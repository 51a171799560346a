//! RGB images with unit-interval `f64` intensities, plus resampling,
//! augmentation transforms and 8-bit PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

pub const WHITE: Rgb = [1.0, 1.0, 1.0];
pub const BLACK: Rgb = [0.0, 0.0, 0.0];

/// An `height x width x 3` image stored row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Canvas {
    /// A canvas filled with a single color.
    pub fn new(height: usize, width: usize, fill: Rgb) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("canvas dimensions must be positive, got {height}x{width}")));
        }
        if fill.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::invalid(format!("fill color {fill:?} outside [0,1]")));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&fill);
        }
        Ok(Self { height, width, data })
    }

    pub fn white(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, WHITE)
    }

    /// Builds a canvas from interleaved RGB data. Values are validated to lie in [0,1].
    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("canvas dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "expected {} values for a {height}x{width} canvas, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a canvas by evaluating `f(row, col)`; results are clamped to [0,1].
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self> {
        let mut canvas = Self::white(height, width)?;
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                canvas.set(r, c, [px[0].clamp(0.0, 1.0), px[1].clamp(0.0, 1.0), px[2].clamp(0.0, 1.0)]);
            }
        }
        Ok(canvas)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn same_shape(&self, other: &Canvas) -> bool {
        self.dims() == other.dims()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, px: Rgb) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Copies the `height x width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Canvas> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::invalid(format!(
                "crop {height}x{width} at ({row},{col}) does not fit a {}x{} canvas",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for r in row..row + height {
            let start = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Canvas { height, width, data })
    }

    /// Rotates counter-clockwise by `quarter_turns * 90` degrees.
    pub fn rotate90(&self, quarter_turns: u32) -> Canvas {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            let (h, w) = out.dims();
            let mut data = vec![0.0; h * w * 3];
            // new[r][c] = old[c][w-1-r], new shape w x h
            for r in 0..w {
                for c in 0..h {
                    let src = (c * w + (w - 1 - r)) * 3;
                    let dst = (r * h + c) * 3;
                    data[dst..dst + 3].copy_from_slice(&out.data[src..src + 3]);
                }
            }
            out = Canvas { height: w, width: h, data };
        }
        out
    }

    /// Mirrors left to right.
    pub fn flip_horizontal(&self) -> Canvas {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, c, self.get(r, self.width - 1 - c));
            }
        }
        out
    }

    /// Area-average resampling. Each output pixel is the mean of the source
    /// region it covers, with fractional edge weights.
    pub fn resize_area(&self, height: usize, width: usize) -> Result<Canvas> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize target must be positive"));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let rows = area_weights(self.height, height);
        let cols = area_weights(self.width, width);
        let mut out = Canvas::white(height, width)?;
        for (orow, rw) in rows.iter().enumerate() {
            for (ocol, cw) in cols.iter().enumerate() {
                let mut acc = [0.0; 3];
                let mut total = 0.0;
                for &(sr, wr) in rw {
                    for &(sc, wc) in cw {
                        let w = wr * wc;
                        let px = self.get(sr, sc);
                        for k in 0..3 {
                            acc[k] += w * px[k];
                        }
                        total += w;
                    }
                }
                out.set(orow, ocol, acc.map(|v| (v / total).clamp(0.0, 1.0)));
            }
        }
        Ok(out)
    }

    /// Bilinear resampling with pixel centers aligned (`src = (dst + 0.5) * in / out - 0.5`).
    /// Resizing to the same shape is an exact copy.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<Canvas> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize target must be positive"));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Canvas::white(height, width)?;
        for r in 0..height {
            let (r0, r1, fr) = bilinear_taps((r as f64 + 0.5) * sy - 0.5, self.height);
            for c in 0..width {
                let (c0, c1, fc) = bilinear_taps((c as f64 + 0.5) * sx - 0.5, self.width);
                let p00 = self.get(r0, c0);
                let p01 = self.get(r0, c1);
                let p10 = self.get(r1, c0);
                let p11 = self.get(r1, c1);
                let mut px = [0.0; 3];
                for k in 0..3 {
                    let top = p00[k] * (1.0 - fc) + p01[k] * fc;
                    let bottom = p10[k] * (1.0 - fc) + p11[k] * fc;
                    px[k] = (top * (1.0 - fr) + bottom * fr).clamp(0.0, 1.0);
                }
                out.set(r, c, px);
            }
        }
        Ok(out)
    }

    /// Loads an 8-bit RGB PNG. Intensities are `byte / 255`.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Canvas> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let (color, depth) = reader.output_color_type();
        match (color, depth) {
            (png::ColorType::Rgb, png::BitDepth::Eight) => {}
            (png::ColorType::Rgba, _) | (png::ColorType::GrayscaleAlpha, _) => {
                return Err(Error::format(format!(
                    "{}: images with an alpha channel are not supported, convert to 8-bit RGB",
                    path.display()
                )))
            }
            other => return Err(Error::format(format!("{}: expected 8-bit RGB, found {other:?}", path.display()))),
        }
        let size =
            reader.output_buffer_size().ok_or_else(|| Error::format(format!("{}: image too large", path.display())))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let (h, w) = (info.height as usize, info.width as usize);
        let mut data = Vec::with_capacity(h * w * 3);
        for row in buf.chunks(info.line_size).take(h) {
            data.extend(row[..w * 3].iter().map(|&b| b as f64 / 255.0));
        }
        Canvas::from_data(h, w, data)
    }

    /// Quantizes to 8 bits, rounding half up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        writer.write_image_data(&self.to_rgb8()).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        writer.finish().map_err(|e| Error::format(format!("{}: {e}", path.display())))
    }
}

#[inline]
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn bilinear_taps(pos: f64, len: usize) -> (usize, usize, f64) {
    let pos = pos.clamp(0.0, (len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}

/// For each output index, the source indices it overlaps and the overlap lengths.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut s = lo.floor() as usize;
            while (s as f64) < hi && s < src {
                let overlap = hi.min((s + 1) as f64) - lo.max(s as f64);
                if overlap > 0.0 {
                    taps.push((s, overlap));
                }
                s += 1;
            }
            taps
        })
        .collect()
}
