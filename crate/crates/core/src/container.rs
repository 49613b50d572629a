//! The folded image on disk.
//!
//! A container is a 16-bit binary PGM (one channel) or PPM (three
//! channels) whose rows are, top to bottom: the host blocks, the ad-hoc
//! blocks, and one header row. Each section is quantized affinely to the
//! full 16-bit range with its own `(min, scale)` pair recorded in the header.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2};

use crate::error::{Error, Result};
use crate::image::{Image, Netpbm};

pub const MAGIC: u16 = 0x5343;
pub const VERSION: u16 = 1;
/// Words occupied by the header at the start of the last row.
pub const HEADER_WORDS: usize = 33;
const WORD_MAX: f64 = 65535.0;

/// Flag bit: the atom count of every block travels inside the index stream.
pub const FLAG_COUNTS_HIDDEN: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionQuant {
    pub min: f64,
    pub scale: f64,
}

impl Default for SectionQuant {
    fn default() -> Self {
        SectionQuant { min: 0.0, scale: 1.0 }
    }
}

/// Maps values onto `0..=65535` with `word = round((v − min)·scale)`.
pub fn quantize_section(values: &[f64]) -> Result<(Vec<u16>, SectionQuant)> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let Some(min) = values.iter().copied().reduce(f64::min) else {
        return Ok((Vec::new(), SectionQuant::default()));
    };
    let max = values.iter().copied().fold(min, f64::max);
    let scale = if max > min { WORD_MAX / (max - min) } else { 1.0 };
    let quant = SectionQuant { min, scale };
    Ok((quantize_with(values, quant), quant))
}

pub fn quantize_with(values: &[f64], q: SectionQuant) -> Vec<u16> {
    values.iter().map(|v| ((v - q.min) * q.scale).round().clamp(0.0, WORD_MAX) as u16).collect()
}

pub fn dequantize_section(words: &[u16], q: SectionQuant) -> Vec<f64> {
    words.iter().map(|&w| w as f64 / q.scale + q.min).collect()
}

/// Public parameters stored in the last row of the container.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeaderFields {
    pub orig_rows: u32,
    pub orig_cols: u32,
    pub channels: u16,
    pub block_n: u16,
    pub q: u32,
    pub h: u32,
    pub h_tilde: u32,
    pub public_seed: u32,
    pub flags: u16,
    pub host_quant: SectionQuant,
    pub adhoc_quant: SectionQuant,
}

fn push_u32(words: &mut Vec<u16>, v: u32) {
    words.push((v >> 16) as u16);
    words.push(v as u16);
}

fn push_f64(words: &mut Vec<u16>, v: f64) {
    let bits = v.to_bits();
    for shift in [48, 32, 16, 0] {
        words.push((bits >> shift) as u16);
    }
}

struct WordReader<'a> {
    words: &'a [u16],
    pos: usize,
}

impl WordReader<'_> {
    fn u16(&mut self) -> u16 {
        let w = self.words[self.pos];
        self.pos += 1;
        w
    }

    fn u32(&mut self) -> u32 {
        ((self.u16() as u32) << 16) | self.u16() as u32
    }

    fn f64(&mut self) -> f64 {
        let bits = (0..4).fold(0u64, |acc, _| (acc << 16) | self.u16() as u64);
        f64::from_bits(bits)
    }
}

impl HeaderFields {
    /// Header words zero-padded to `width`.
    pub fn encode(&self, width: usize) -> Result<Vec<u16>> {
        if width < HEADER_WORDS {
            return Err(Error::TooNarrow { needed: HEADER_WORDS, width });
        }
        let mut w = Vec::with_capacity(width);
        w.push(MAGIC);
        w.push(VERSION);
        push_u32(&mut w, self.orig_rows);
        push_u32(&mut w, self.orig_cols);
        w.push(self.channels);
        w.push(self.block_n);
        push_u32(&mut w, self.q);
        push_u32(&mut w, self.h);
        push_u32(&mut w, self.h_tilde);
        push_u32(&mut w, self.public_seed);
        w.push(self.flags);
        for q in [self.host_quant, self.adhoc_quant] {
            push_f64(&mut w, q.min);
            push_f64(&mut w, q.scale);
        }
        debug_assert_eq!(w.len(), HEADER_WORDS);
        w.resize(width, 0);
        Ok(w)
    }

    /// Parses the fixed layout; trailing words are ignored.
    pub fn decode(row: &[u16]) -> Result<HeaderFields> {
        if row.len() < HEADER_WORDS {
            return Err(Error::ContainerCorrupt(format!("header row holds {} words", row.len())));
        }
        let mut r = WordReader { words: row, pos: 0 };
        if r.u16() != MAGIC {
            return Err(Error::ContainerCorrupt("bad magic".into()));
        }
        let version = r.u16();
        if version != VERSION {
            return Err(Error::ContainerCorrupt(format!("unsupported version {version}")));
        }
        let orig_rows = r.u32();
        let orig_cols = r.u32();
        let channels = r.u16();
        let block_n = r.u16();
        let q = r.u32();
        let h = r.u32();
        let h_tilde = r.u32();
        let public_seed = r.u32();
        let flags = r.u16();
        let host_quant = SectionQuant { min: r.f64(), scale: r.f64() };
        let adhoc_quant = SectionQuant { min: r.f64(), scale: r.f64() };
        Ok(HeaderFields {
            orig_rows,
            orig_cols,
            channels,
            block_n,
            q,
            h,
            h_tilde,
            public_seed,
            flags,
            host_quant,
            adhoc_quant,
        })
    }

    /// Semantic checks that a header describes a decodable container.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ContainerCorrupt(m));
        if self.orig_rows == 0 || self.orig_cols == 0 {
            return bad(format!("image dims {}x{}", self.orig_rows, self.orig_cols));
        }
        if self.channels != 1 && self.channels != 3 {
            return bad(format!("{} channels", self.channels));
        }
        if self.block_n == 0 {
            return bad("zero block size".into());
        }
        let n = self.block_n as u64;
        let expect_q = (self.orig_rows as u64).div_ceil(n) * (self.orig_cols as u64).div_ceil(n);
        if self.q as u64 != expect_q {
            return bad(format!("block count {} but dims imply {expect_q}", self.q));
        }
        if self.h > self.q {
            return bad(format!("{} hosts for {} blocks", self.h, self.q));
        }
        for sq in [self.host_quant, self.adhoc_quant] {
            if !sq.min.is_finite() || !sq.scale.is_finite() || sq.scale <= 0.0 {
                return bad("bad quantization parameters".into());
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Geometry {
        Geometry::new(
            self.orig_rows as usize,
            self.orig_cols as usize,
            self.block_n as usize,
            self.channels as usize,
            self.h as usize,
            self.h_tilde as usize,
        )
    }
}

/// Block layout of a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub block_n: usize,
    pub channels: usize,
    pub blocks_per_row: usize,
    pub width: usize,
    pub hosts: usize,
    pub adhoc: usize,
    pub host_rows: usize,
    pub adhoc_rows: usize,
}

impl Geometry {
    pub fn new(
        orig_rows: usize,
        orig_cols: usize,
        block_n: usize,
        channels: usize,
        hosts: usize,
        adhoc: usize,
    ) -> Self {
        let _ = orig_rows;
        let blocks_per_row = orig_cols.div_ceil(block_n);
        let adhoc_per_row = blocks_per_row * channels;
        Geometry {
            block_n,
            channels,
            blocks_per_row,
            width: blocks_per_row * block_n,
            hosts,
            adhoc,
            host_rows: hosts.div_ceil(blocks_per_row) * block_n,
            adhoc_rows: adhoc.div_ceil(adhoc_per_row) * block_n,
        }
    }

    /// Total rows including the header row.
    pub fn rows(&self) -> usize {
        self.host_rows + self.adhoc_rows + 1
    }

    /// Top-left corner of host block `q` within the host section.
    pub fn host_origin(&self, q: usize) -> (usize, usize) {
        ((q / self.blocks_per_row) * self.block_n, (q % self.blocks_per_row) * self.block_n)
    }

    /// Channel and top-left corner of ad-hoc block `t` within the ad-hoc
    /// section. Consecutive blocks cycle through the channels first.
    pub fn adhoc_origin(&self, t: usize) -> (usize, usize, usize) {
        let per_row = self.blocks_per_row * self.channels;
        let (row, rem) = (t / per_row, t % per_row);
        (rem % self.channels, row * self.block_n, (rem / self.channels) * self.block_n)
    }
}

/// The folded cipher image with real-valued sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldedContainer {
    pub header: HeaderFields,
    /// Per channel, `host_rows × width`.
    pub host: Vec<Array2<f64>>,
    /// Per channel, `adhoc_rows × width`.
    pub adhoc: Vec<Array2<f64>>,
}

fn stack_words(sections: &[Array2<f64>]) -> Vec<f64> {
    sections.iter().flat_map(|a| a.iter().copied()).collect()
}

impl FoldedContainer {
    /// Lays out host blocks (`hosts[q][z]`) and ad-hoc blocks and computes
    /// the quantization parameters of both sections.
    pub fn assemble(
        mut header: HeaderFields,
        hosts: &[Vec<Array2<f64>>],
        adhoc: &[Array2<f64>],
    ) -> Result<FoldedContainer> {
        header.h = hosts.len() as u32;
        header.h_tilde = adhoc.len() as u32;
        let g = header.geometry();
        let n = g.block_n;
        let mut host = vec![Array2::zeros((g.host_rows, g.width)); g.channels];
        for (q, blocks) in hosts.iter().enumerate() {
            let (r, c) = g.host_origin(q);
            for (z, b) in blocks.iter().enumerate() {
                host[z].slice_mut(s![r..r + n, c..c + n]).assign(b);
            }
        }
        let mut adhoc_sec = vec![Array2::zeros((g.adhoc_rows, g.width)); g.channels];
        for (t, b) in adhoc.iter().enumerate() {
            let (z, r, c) = g.adhoc_origin(t);
            adhoc_sec[z].slice_mut(s![r..r + n, c..c + n]).assign(b);
        }
        header.host_quant = quantize_section(&stack_words(&host))?.1;
        header.adhoc_quant = quantize_section(&stack_words(&adhoc_sec))?.1;
        // the header row must fit
        header.encode(g.width)?;
        Ok(FoldedContainer { header, host, adhoc: adhoc_sec })
    }

    pub fn geometry(&self) -> Geometry {
        self.header.geometry()
    }

    pub fn host_block(&self, q: usize, z: usize) -> Array2<f64> {
        let g = self.geometry();
        let (r, c) = g.host_origin(q);
        self.host[z].slice(s![r..r + g.block_n, c..c + g.block_n]).to_owned()
    }

    pub fn adhoc_block(&self, t: usize) -> Array2<f64> {
        let g = self.geometry();
        let (z, r, c) = g.adhoc_origin(t);
        self.adhoc[z].slice(s![r..r + g.block_n, c..c + g.block_n]).to_owned()
    }

    /// Container dimensions `(rows, cols, channels)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let g = self.geometry();
        (g.rows(), g.width, g.channels)
    }

    pub fn to_netpbm(&self) -> Result<Netpbm> {
        let g = self.geometry();
        let host_words: Vec<Vec<u16>> = self
            .host
            .iter()
            .map(|a| quantize_with(&a.iter().copied().collect::<Vec<_>>(), self.header.host_quant))
            .collect();
        let adhoc_words: Vec<Vec<u16>> = self
            .adhoc
            .iter()
            .map(|a| quantize_with(&a.iter().copied().collect::<Vec<_>>(), self.header.adhoc_quant))
            .collect();
        let header_row = self.header.encode(g.width)?;
        let rows = g.rows();
        let mut samples = Vec::with_capacity(rows * g.width * g.channels);
        for r in 0..rows {
            for c in 0..g.width {
                for z in 0..g.channels {
                    let w = if r < g.host_rows {
                        host_words[z][r * g.width + c]
                    } else if r < g.host_rows + g.adhoc_rows {
                        adhoc_words[z][(r - g.host_rows) * g.width + c]
                    } else if z == 0 {
                        header_row[c]
                    } else {
                        0
                    };
                    samples.push(w);
                }
            }
        }
        Ok(Netpbm { width: g.width, height: rows, channels: g.channels, maxval: 65535, samples })
    }

    pub fn from_netpbm(p: &Netpbm) -> Result<FoldedContainer> {
        if p.maxval != 65535 {
            return Err(Error::Format("container must be 16-bit".into()));
        }
        let (w, ch) = (p.width, p.channels);
        let last = p.height - 1;
        let header_row: Vec<u16> = (0..w).map(|c| p.samples[(last * w + c) * ch]).collect();
        let header = HeaderFields::decode(&header_row)?;
        header.validate()?;
        let g = header.geometry();
        if g.channels != ch || g.width != w || g.rows() != p.height {
            return Err(Error::ContainerCorrupt(format!(
                "file is {}x{}x{} but header implies {}x{}x{}",
                p.height,
                w,
                ch,
                g.rows(),
                g.width,
                g.channels
            )));
        }
        let section = |start: usize, rows: usize, q: SectionQuant| -> Vec<Array2<f64>> {
            (0..ch)
                .map(|z| {
                    let words: Vec<u16> =
                        (0..rows * w).map(|i| p.samples[((start + i / w) * w + i % w) * ch + z]).collect();
                    Array2::from_shape_vec((rows, w), dequantize_section(&words, q)).expect("section shape")
                })
                .collect()
        };
        Ok(FoldedContainer {
            host: section(0, g.host_rows, header.host_quant),
            adhoc: section(g.host_rows, g.adhoc_rows, header.adhoc_quant),
            header,
        })
    }

    /// The container as it reads back after a 16-bit write.
    pub fn quantized(&self) -> Result<FoldedContainer> {
        FoldedContainer::from_netpbm(&self.to_netpbm()?)
    }
}

pub fn write_container(c: &FoldedContainer, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, c.to_netpbm()?.encode())?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<FoldedContainer> {
    let bytes = fs::read(path)?;
    FoldedContainer::from_netpbm(&Netpbm::parse(&bytes)?)
}

/// Splits every channel into `block_n × block_n` tiles in raster order,
/// replicating the last row and column to fill partial edge blocks.
/// Returns `tiles[q][z]`.
pub fn tile_image(image: &Image, block_n: usize) -> Vec<Vec<Array2<f64>>> {
    let (rows, cols) = (image.rows(), image.cols());
    let (br, bc) = (rows.div_ceil(block_n), cols.div_ceil(block_n));
    let mut tiles = Vec::with_capacity(br * bc);
    for by in 0..br {
        for bx in 0..bc {
            tiles.push(
                image
                    .channels()
                    .iter()
                    .map(|ch| {
                        Array2::from_shape_fn((block_n, block_n), |(i, j)| {
                            let r = (by * block_n + i).min(rows - 1);
                            let c = (bx * block_n + j).min(cols - 1);
                            ch[[r, c]]
                        })
                    })
                    .collect(),
            );
        }
    }
    tiles
}

/// Inverse of [`tile_image`]: places tiles in raster order and crops to
/// `rows × cols`.
pub fn assemble_image(
    tiles: &[Vec<Array2<f64>>],
    rows: usize,
    cols: usize,
    block_n: usize,
    bits: u32,
) -> Result<Image> {
    let bc = cols.div_ceil(block_n);
    let expected = rows.div_ceil(block_n) * bc;
    if tiles.len() != expected {
        return Err(Error::DimensionMismatch(format!("{} tiles for {expected} blocks", tiles.len())));
    }
    let channels = tiles.first().map_or(0, |t| t.len());
    let mut planes = vec![Array2::zeros((rows, cols)); channels];
    for (q, tile) in tiles.iter().enumerate() {
        let (r0, c0) = ((q / bc) * block_n, (q % bc) * block_n);
        let (h, w) = (block_n.min(rows - r0), block_n.min(cols - c0));
        for (z, t) in tile.iter().enumerate() {
            planes[z].slice_mut(s![r0..r0 + h, c0..c0 + w]).assign(&t.slice(s![..h, ..w]));
        }
    }
    Image::new(planes, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystream::RandomStream;
    use proptest::prelude::*;

    fn header() -> HeaderFields {
        HeaderFields {
            orig_rows: 13,
            orig_cols: 40,
            channels: 3,
            block_n: 8,
            q: 10,
            h: 2,
            h_tilde: 1,
            public_seed: 0xDEAD_BEEF,
            flags: FLAG_COUNTS_HIDDEN,
            host_quant: SectionQuant { min: -12.5, scale: 3.25 },
            adhoc_quant: SectionQuant::default(),
        }
    }

    #[test]
    fn constant_section_quantizes_to_zero() {
        let (w, q) = quantize_section(&[4.5; 10]).unwrap();
        assert_eq!(q, SectionQuant { min: 4.5, scale: 1.0 });
        assert!(w.iter().all(|&x| x == 0));
        assert_eq!(dequantize_section(&w, q), vec![4.5; 10]);
    }

    #[test]
    fn lattice_points_roundtrip() {
        let (w, q) = quantize_section(&[0.0, 65535.0]).unwrap();
        assert_eq!(w, vec![0, 65535]);
        assert_eq!(q.scale, 1.0);
        assert_eq!(dequantize_section(&w, q), vec![0.0, 65535.0]);
    }

    #[test]
    fn random_section_error_bound() {
        let mut s = RandomStream::new(1);
        let v: Vec<f64> = (0..10_000).map(|_| 100.0 * s.uniform()).collect();
        let (w, q) = quantize_section(&v).unwrap();
        let back = dequantize_section(&w, q);
        let err = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / q.scale + 1e-12);
        assert!(err <= 1.6e-3);
        assert!(matches!(quantize_section(&[1.0, f64::NAN]), Err(Error::NonFinite)));
    }

    #[test]
    fn header_roundtrip_and_corruption() {
        let h = header();
        let row = h.encode(40).unwrap();
        assert_eq!(row.len(), 40);
        assert_eq!(HeaderFields::decode(&row).unwrap(), h);
        let mut bad = row.clone();
        bad[0] ^= 1;
        assert!(matches!(HeaderFields::decode(&bad), Err(Error::ContainerCorrupt(_))));
        let mut bad = row;
        bad[1] = 2;
        assert!(HeaderFields::decode(&bad).is_err());
        assert!(matches!(h.encode(32), Err(Error::TooNarrow { needed: 33, width: 32 })));
    }

    #[test]
    fn header_extremes_roundtrip() {
        for v in [0u32, u32::MAX] {
            let h = HeaderFields {
                orig_rows: v,
                orig_cols: v,
                channels: v as u16,
                block_n: v as u16,
                q: v,
                h: v,
                h_tilde: v,
                public_seed: v,
                flags: v as u16,
                host_quant: SectionQuant { min: f64::MAX, scale: f64::MIN_POSITIVE },
                adhoc_quant: SectionQuant { min: -0.0, scale: 0.0 },
            };
            let back = HeaderFields::decode(&h.encode(HEADER_WORDS).unwrap()).unwrap();
            assert_eq!(back.host_quant.min.to_bits(), h.host_quant.min.to_bits());
            assert_eq!(back.adhoc_quant.min.to_bits(), h.adhoc_quant.min.to_bits());
            assert_eq!(back, h);
        }
    }

    proptest! {
        #[test]
        fn header_roundtrip_random(rows in 1u32.., cols in 1u32.., seed: u32, q: u32, h: u32, ht: u32, m: f64, sc in 1e-9f64..1e9) {
            let hf = HeaderFields {
                orig_rows: rows, orig_cols: cols, channels: 3, block_n: 8, q, h, h_tilde: ht,
                public_seed: seed, flags: 1,
                host_quant: SectionQuant { min: m, scale: sc },
                adhoc_quant: SectionQuant { min: -m, scale: 1.0 / sc },
            };
            let back = HeaderFields::decode(&hf.encode(64).unwrap()).unwrap();
            prop_assert_eq!(back.orig_rows, rows);
            prop_assert_eq!(back.public_seed, seed);
            prop_assert_eq!(back.host_quant.min.to_bits(), m.to_bits());
            prop_assert_eq!(back.adhoc_quant.scale.to_bits(), (1.0 / sc).to_bits());
        }
    }

    fn sample_container() -> FoldedContainer {
        let mut s = RandomStream::new(3);
        let block = |s: &mut RandomStream| Array2::from_shape_simple_fn((8, 8), || 300.0 * s.uniform());
        let hosts: Vec<Vec<Array2<f64>>> = (0..2).map(|_| (0..3).map(|_| block(&mut s)).collect()).collect();
        let adhoc: Vec<Array2<f64>> = (0..4).map(|_| block(&mut s) * 10.0).collect();
        FoldedContainer::assemble(header(), &hosts, &adhoc).unwrap()
    }

    #[test]
    fn container_layout() {
        let c = sample_container();
        let g = c.geometry();
        assert_eq!((g.blocks_per_row, g.width, g.host_rows, g.adhoc_rows), (5, 40, 8, 8));
        assert_eq!(c.dims(), (17, 40, 3));
        assert_eq!(g.adhoc_origin(0), (0, 0, 0));
        assert_eq!(g.adhoc_origin(1), (1, 0, 0));
        assert_eq!(g.adhoc_origin(3), (0, 0, 8));
    }

    #[test]
    fn container_file_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample_container();
        let a = dir.path().join("a.ppm");
        let b = dir.path().join("b.ppm");
        write_container(&c, &a).unwrap();
        let back = read_container(&a).unwrap();
        assert_eq!(back.header, c.header);
        write_container(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let err = back.host[1].iter().zip(c.host[1].iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / c.header.host_quant.scale + 1e-9);
    }

    #[test]
    fn eight_bit_or_truncated_files_are_rejected() {
        let mut p = sample_container().to_netpbm().unwrap();
        let mut bytes = p.encode();
        bytes.truncate(bytes.len() - 5);
        assert!(Netpbm::parse(&bytes).is_err());
        p.maxval = 255;
        p.samples.iter_mut().for_each(|s| *s &= 0xff);
        let err = FoldedContainer::from_netpbm(&Netpbm::parse(&p.encode()).unwrap()).unwrap_err();
        assert!(err.to_string().contains("container must be 16-bit"));
    }

    #[test]
    fn tiling_examples() {
        let ramp = Array2::from_shape_fn((16, 16), |(r, c)| (r * 16 + c) as f64);
        let img = Image::gray(ramp, 8).unwrap();
        let tiles = tile_image(&img, 8);
        assert_eq!(tiles.len(), 4);
        assert_eq!(tiles[1][0][[0, 0]], 8.0);
        assert_eq!(tiles[2][0][[0, 0]], 128.0);
        assert_eq!(assemble_image(&tiles, 16, 16, 8, 8).unwrap(), img);
    }

    #[test]
    fn edge_tiles_replicate_and_crop() {
        let data = Array2::from_shape_fn((13, 9), |(r, c)| (r * 9 + c) as f64);
        let img = Image::new(vec![data.clone(), -&data], 8).unwrap();
        let tiles = tile_image(&img, 8);
        assert_eq!(tiles.len(), 4);
        // pad oracle: clamp coordinates into the image
        for (q, tile) in tiles.iter().enumerate() {
            let (r0, c0) = ((q / 2) * 8, (q % 2) * 8);
            for i in 0..8 {
                for j in 0..8 {
                    let expect = data[[(r0 + i).min(12), (c0 + j).min(8)]];
                    assert_eq!(tile[0][[i, j]], expect);
                    assert_eq!(tile[1][[i, j]], -expect);
                }
            }
        }
        assert_eq!(assemble_image(&tiles, 13, 9, 8, 8).unwrap(), img);
    }
}
