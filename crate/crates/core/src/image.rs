//! Multi-channel intensity images and binary netpbm (P5/P6) I/O.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A gray (one channel) or RGB (three channels) image with real-valued
/// intensities on a `bits`-deep scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: Vec<Array2<f64>>,
    bits: u32,
}

impl Image {
    pub fn new(channels: Vec<Array2<f64>>, bits: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidDimension("image has no channels".into()));
        }
        if !(1..=16).contains(&bits) {
            return Err(Error::InvalidDimension(format!("bit depth {bits}")));
        }
        let dim = channels[0].dim();
        if dim.0 == 0 || dim.1 == 0 {
            return Err(Error::InvalidDimension(format!("{}x{}", dim.0, dim.1)));
        }
        if channels.iter().any(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch("channels differ in shape".into()));
        }
        Ok(Image { channels, bits })
    }

    pub fn gray(data: Array2<f64>, bits: u32) -> Result<Self> {
        Image::new(vec![data], bits)
    }

    pub fn rows(&self) -> usize {
        self.channels[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].ncols()
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, z: usize) -> &Array2<f64> {
        &self.channels[z]
    }

    pub fn channels(&self) -> &[Array2<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Array2<f64>> {
        self.channels
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Peak intensity `2^bits - 1`.
    pub fn peak(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.rows() * self.cols() * self.channel_count()
    }

    /// Rounds to the integer lattice and clamps to `[0, peak]`.
    pub fn quantized(&self) -> Image {
        let peak = self.peak();
        let channels = self.channels.iter().map(|c| c.mapv(|v| v.round().clamp(0.0, peak))).collect();
        Image { channels, bits: self.bits }
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
        let bytes = fs::read(path)?;
        Netpbm::parse(&bytes)?.to_image()
    }

    /// Writes the image rounded and clamped to its bit depth.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, Netpbm::from_image(self).encode())?;
        Ok(())
    }
}

/// Raw binary netpbm raster: interleaved integer samples, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Netpbm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Netpbm {
    pub fn parse(bytes: &[u8]) -> Result<Netpbm> {
        let mut pos = 0usize;
        let magic = bytes.get(..2).ok_or_else(|| Error::Format("missing magic".into()))?;
        let channels = match magic {
            b"P5" => 1,
            b"P6" => 3,
            _ => return Err(Error::Format("expected P5 or P6".into())),
        };
        pos += 2;
        let mut fields = [0usize; 3];
        for field in fields.iter_mut() {
            *field = read_header_number(bytes, &mut pos)?;
        }
        let [width, height, maxval] = fields;
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            _ => return Err(Error::Format("missing raster separator".into())),
        }
        if width == 0 || height == 0 {
            return Err(Error::Format(format!("bad size {width}x{height}")));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::Format(format!("bad maxval {maxval}")));
        }
        let wide = maxval > 255;
        let count = width * height * channels;
        let need = count * if wide { 2 } else { 1 };
        let raster =
            bytes.get(pos..pos + need).ok_or_else(|| Error::Format(format!("truncated raster: need {need} bytes")))?;
        let samples = if wide {
            raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
        } else {
            raster.iter().map(|&b| b as u16).collect()
        };
        Ok(Netpbm { width, height, channels, maxval: maxval as u16, samples })
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        if self.maxval > 255 {
            out.reserve(self.samples.len() * 2);
            for s in &self.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        } else {
            out.extend(self.samples.iter().map(|&s| s as u8));
        }
        out
    }

    pub fn to_image(&self) -> Result<Image> {
        let bits = 16 - self.maxval.leading_zeros();
        if (1u32 << bits) - 1 != self.maxval as u32 {
            return Err(Error::Format(format!("maxval {} is not 2^b-1", self.maxval)));
        }
        let channels = (0..self.channels)
            .map(|z| {
                Array2::from_shape_fn((self.height, self.width), |(r, c)| {
                    self.samples[(r * self.width + c) * self.channels + z] as f64
                })
            })
            .collect();
        Image::new(channels, bits)
    }

    pub fn from_image(image: &Image) -> Netpbm {
        let q = image.quantized();
        let (height, width, channels) = (image.rows(), image.cols(), image.channel_count());
        let mut samples = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for z in 0..channels {
                    samples.push(q.channel(z)[[r, c]] as u16);
                }
            }
        }
        Netpbm { width, height, channels, maxval: image.peak() as u16, samples }
    }
}

fn read_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("expected a decimal number in header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("header number overflow".into()))
}
