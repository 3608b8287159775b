//! On-disk artifacts.
//!
//! Every binary format here is a 4-byte magic tag, a small header of 32-bit
//! little-endian unsigned integers and a little-endian payload:
//!
//! | format | magic  | header              | payload                          |
//! |--------|--------|---------------------|----------------------------------|
//! | cube   | `HSC1` | H, W, L, dtype (0)  | H·W·L `f32`, band-sequential     |
//! | labels | `LBL1` | H, W                | H·W `u16`, 0 = unlabeled         |
//! | probs  | `PRB1` | C, H, W             | C·H·W `f32`, class-major         |
//!
//! Images are binary `P6` portable pixmaps with maxval 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const CUBE_MAGIC: &[u8; 4] = b"HSC1";
const LABEL_MAGIC: &[u8; 4] = b"LBL1";
const PROB_MAGIC: &[u8; 4] = b"PRB1";
const DTYPE_F32: u32 = 0;

/// An `H × W × L` radiance cube stored band-sequentially.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
}

impl HsiCube {
    /// Builds a cube from band-sequential values (`L` planes of `H` rows of `W`).
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Data(format!("cube extent {height}x{width} is empty")));
        }
        if bands < 3 {
            return Err(Error::Data(format!("cube needs at least 3 bands, got {bands}")));
        }
        if values.len() != height * width * bands {
            return Err(Error::Size(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite cube value at index {pos}")));
        }
        Ok(Self { height, width, bands, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The `k`-th band as a row-major `H × W` plane.
    pub fn band_plane(&self, k: usize) -> &[f32] {
        let n = self.pixels();
        &self.values[k * n..(k + 1) * n]
    }

    /// Spectrum of pixel `(row, col)`.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        let n = self.pixels();
        let p = row * self.width + col;
        (0..self.bands).map(|k| self.values[k * n + p]).collect()
    }
}

/// Sparse or dense per-pixel class ids; `0` means unlabeled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Size(format!(
                "label map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    /// Largest class id present.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Number of labeled pixels per class, indexed by `class - 1`.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if l != 0 && (l as usize) <= classes {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

/// Dense prediction map; every pixel carries a class id in `1..=C`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u16>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Size(format!(
                "class map {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if labels.contains(&0) {
            return Err(Error::Data("class maps must label every pixel".into()));
        }
        Ok(Self { height, width, labels })
    }

    pub fn to_label_map(&self) -> LabelMap {
        LabelMap { height: self.height, width: self.width, labels: self.labels.clone() }
    }

    pub fn from_label_map(map: LabelMap) -> Result<Self> {
        Self::new(map.height, map.width, map.labels)
    }

    /// Renders the map with the fixed class palette.
    pub fn to_rgb(&self) -> RgbImage {
        let n = self.height * self.width;
        let mut data = vec![0u8; 3 * n];
        for (p, &l) in self.labels.iter().enumerate() {
            let rgb = palette_color(l);
            for c in 0..3 {
                data[c * n + p] = rgb[c];
            }
        }
        RgbImage { height: self.height, width: self.width, data }
    }
}

/// Per-pixel class scores, class-major (`C` planes of `H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ProbMap {
    pub fn new(classes: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != classes * height * width {
            return Err(Error::Size(format!(
                "probability map {classes}x{height}x{width} needs {} values, got {}",
                classes * height * width,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Data(format!(
                "probability map value {} at index {pos} is not a nonnegative real",
                values[pos]
            )));
        }
        Ok(Self { classes, height, width, values })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Score of `class` (0-based) at pixel index `p`.
    pub fn score(&self, class: usize, p: usize) -> f32 {
        self.values[class * self.pixels() + p]
    }

    /// Per-pixel argmax; ties resolve to the smallest class id.
    pub fn argmax(&self) -> ClassMap {
        let n = self.pixels();
        let labels = (0..n)
            .map(|p| {
                let mut best = 0;
                for c in 1..self.classes {
                    if self.score(c, p) > self.score(best, p) {
                        best = c;
                    }
                }
                (best + 1) as u16
            })
            .collect();
        ClassMap { height: self.height, width: self.width, labels }
    }
}

/// Planar 8-bit three-channel image (`3 × H × W`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Size(format!(
                "image {height}x{width} needs {} bytes, got {}",
                3 * height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// The 22-entry class palette: golden-angle hues at saturation 0.70, value 0.95.
/// Class `k` uses entry `(k - 1) mod 22`; unlabeled pixels render black.
pub const PALETTE: [[u8; 3]; 22] = [
    [242, 73, 73],
    [73, 242, 122],
    [172, 73, 242],
    [242, 221, 73],
    [73, 214, 242],
    [242, 73, 164],
    [115, 242, 73],
    [80, 73, 242],
    [242, 129, 73],
    [73, 242, 179],
    [228, 73, 242],
    [207, 242, 73],
    [73, 157, 242],
    [242, 73, 108],
    [73, 242, 87],
    [137, 73, 242],
    [242, 186, 73],
    [73, 242, 236],
    [242, 73, 199],
    [150, 242, 73],
    [73, 100, 242],
    [242, 94, 73],
];

pub fn palette_color(label: u16) -> [u8; 3] {
    if label == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(label as usize - 1) % PALETTE.len()]
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 4], what: &str) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "{what}: expected magic {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Self { bytes, pos: 4 })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Size(format!(
                "{what}: truncated, needed {n} more bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn finish(&self, what: &str) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Size(format!(
                "{what}: {} trailing bytes after payload",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn checked_len(dims: &[u32], what: &str) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize)).ok_or_else(|| {
        Error::Size(format!("{what}: header extents {dims:?} overflow"))
    })
}

fn f32s_le(bytes: &[u8]) -> Vec<f32> {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect()
}

fn write_file(path: &Path, buf: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(buf)?;
    Ok(())
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut buf = Vec::with_capacity(20 + 4 * cube.values.len());
    buf.extend_from_slice(CUBE_MAGIC);
    for v in [cube.height as u32, cube.width as u32, cube.bands as u32, DTYPE_F32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &cube.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_cube(bytes: &[u8]) -> Result<HsiCube> {
    let what = "cube";
    let mut r = Reader::new(bytes, CUBE_MAGIC, what)?;
    let (h, w, l) = (r.u32(what)?, r.u32(what)?, r.u32(what)?);
    let dtype = r.u32(what)?;
    if dtype != DTYPE_F32 {
        return Err(Error::Format(format!("cube: unsupported dtype code {dtype}")));
    }
    let n = checked_len(&[h, w, l, 4], what)?;
    let values = f32s_le(r.take(n, what)?);
    r.finish(what)?;
    HsiCube::new(h as usize, w as usize, l as usize, values)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    decode_cube(&fs::read(path)?)
}

pub fn save_cube(cube: &HsiCube, path: impl AsRef<Path>) -> Result<()> {
    if cube.bands < 3 || cube.height == 0 || cube.width == 0 {
        return Err(Error::Data("refusing to save a degenerate cube".into()));
    }
    write_file(path.as_ref(), &encode_cube(cube))
}

pub fn encode_labels(map: &LabelMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 2 * map.labels.len());
    buf.extend_from_slice(LABEL_MAGIC);
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    for l in &map.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    buf
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelMap> {
    let what = "labels";
    let mut r = Reader::new(bytes, LABEL_MAGIC, what)?;
    let (h, w) = (r.u32(what)?, r.u32(what)?);
    let n = checked_len(&[h, w, 2], what)?;
    let labels = r
        .take(n, what)?
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    r.finish(what)?;
    LabelMap::new(h as usize, w as usize, labels)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    decode_labels(&fs::read(path)?)
}

pub fn save_labels(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_labels(map))
}

pub fn load_class_map(path: impl AsRef<Path>) -> Result<ClassMap> {
    ClassMap::from_label_map(load_labels(path)?)
}

pub fn save_class_map(map: &ClassMap, path: impl AsRef<Path>) -> Result<()> {
    save_labels(&map.to_label_map(), path)
}

pub fn encode_probmap(p: &ProbMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * p.values.len());
    buf.extend_from_slice(PROB_MAGIC);
    for v in [p.classes as u32, p.height as u32, p.width as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in &p.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_probmap(bytes: &[u8]) -> Result<ProbMap> {
    let what = "probability map";
    let mut r = Reader::new(bytes, PROB_MAGIC, what)?;
    let (c, h, w) = (r.u32(what)?, r.u32(what)?, r.u32(what)?);
    let n = checked_len(&[c, h, w, 4], what)?;
    let values = f32s_le(r.take(n, what)?);
    r.finish(what)?;
    ProbMap::new(c as usize, h as usize, w as usize, values)
}

pub fn load_probmap(path: impl AsRef<Path>) -> Result<ProbMap> {
    decode_probmap(&fs::read(path)?)
}

pub fn save_probmap(p: &ProbMap, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_probmap(p))
}

/// Serializes a planar image as binary `P6`; channel 0 becomes red.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let n = img.height * img.width;
    let mut buf = Vec::with_capacity(header.len() + 3 * n);
    buf.extend_from_slice(header.as_bytes());
    for p in 0..n {
        for c in 0..3 {
            buf.push(img.data[c * n + p]);
        }
    }
    buf
}

/// Parses a binary `P6` pixmap with maxval 255 into planar layout.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Format("ppm: header ended early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("ppm: expected P6, got {:?}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>().map_err(|_| Error::Format(format!("ppm: bad header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("ppm: unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::Format("ppm: missing separator before raster".into()));
    }
    pos += 1;
    let n = width * height;
    let body = &bytes[pos..];
    if body.len() != 3 * n {
        return Err(Error::Size(format!("ppm: raster has {} bytes, expected {}", body.len(), 3 * n)));
    }
    let mut data = vec![0u8; 3 * n];
    for p in 0..n {
        for c in 0..3 {
            data[c * n + p] = body[3 * p + c];
        }
    }
    RgbImage::new(height, width, data)
}

pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_ppm(img))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: &[u8], dims: &[u32]) -> Vec<u8> {
        let mut b = magic.to_vec();
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn cube_band_sequential_decode() {
        let mut bytes = header(b"HSC1", &[2, 2, 3, 0]);
        for v in 0..12 {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let cube = decode_cube(&bytes).unwrap();
        assert_eq!(cube.band_plane(0), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(cube.band_plane(2), &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(cube.spectrum(1, 0), vec![2.0, 6.0, 10.0]);
    }

    #[test]
    fn cube_byte_count() {
        let cube = HsiCube::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode_cube(&cube);
        assert_eq!(bytes.len(), 20 + 12);
    }

    #[test]
    fn cube_errors() {
        assert!(matches!(decode_cube(b"HSC0\0\0\0\0"), Err(Error::Format(_))));
        let mut bytes = header(b"HSC1", &[2, 2, 3, 0]);
        bytes.extend_from_slice(&[0u8; 40]);
        assert!(matches!(decode_cube(&bytes), Err(Error::Size(_))));
        let mut bytes = header(b"HSC1", &[1, 1, 3, 0]);
        for v in [1.0f32, f32::NAN, 2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_cube(&bytes), Err(Error::Data(_))));
        assert!(HsiCube::new(1, 1, 0, vec![]).is_err());
    }

    #[test]
    fn longkou_header_accepted() {
        // Only the header is decoded here; a full payload would be 237 MB.
        let bytes = header(b"HSC1", &[550, 400, 270, 0]);
        match decode_cube(&bytes) {
            Err(Error::Size(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected a size error, got {other:?}"),
        }
        let cube = HsiCube::new(550, 400, 270, vec![0.0; 550 * 400 * 270]).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands()), (550, 400, 270));
    }

    #[test]
    fn labels_decode() {
        let mut bytes = header(b"LBL1", &[2, 2]);
        for l in [0u16, 1, 2, 1] {
            bytes.extend_from_slice(&l.to_le_bytes());
        }
        let map = decode_labels(&bytes).unwrap();
        assert_eq!(map.num_classes(), 2);
        assert_eq!(map.labeled_count(), 3);

        let zeros = LabelMap::new(2, 2, vec![0; 4]).unwrap();
        assert_eq!(decode_labels(&encode_labels(&zeros)).unwrap().labeled_count(), 0);

        let mut short = header(b"LBL1", &[2, 2]);
        short.extend_from_slice(&[0u8; 6]);
        assert!(matches!(decode_labels(&short), Err(Error::Size(_))));
        assert!(matches!(decode_labels(b"LBL2"), Err(Error::Format(_))));
    }

    #[test]
    fn ppm_single_pixel_and_sizes() {
        let img = RgbImage::new(1, 1, vec![255, 0, 0]).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(&bytes[bytes.len() - 3..], &[0xFF, 0x00, 0x00]);
        assert_eq!(bytes.strip_suffix(&[0xFF, 0, 0]).unwrap(), b"P6\n1 1\n255\n");

        let img = RgbImage::new(2, 3, (0..18).collect()).unwrap();
        let bytes = encode_ppm(&img);
        let header_len = b"P6\n3 2\n255\n".len();
        assert_eq!(bytes.len() - header_len, 18);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
    }

    #[test]
    fn ppm_errors() {
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(Error::Format(_))));
        assert!(matches!(decode_ppm(b"P6\n1 1\n255\n\0\0"), Err(Error::Size(_))));
        let with_comment = b"P6\n# made by hand\n1 1\n255\n\x01\x02\x03";
        assert_eq!(decode_ppm(with_comment).unwrap().data, vec![1, 2, 3]);
    }

    #[test]
    fn probmap_sizes_and_errors() {
        let p = ProbMap::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        let bytes = encode_probmap(&p);
        assert_eq!(bytes.len() - 16, 8);
        assert_eq!(decode_probmap(&bytes).unwrap(), p);

        let mut bad = header(b"PRB1", &[2, 1, 1]);
        for v in [-0.25f32, 1.25] {
            bad.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_probmap(&bad), Err(Error::Data(_))));
        assert!(matches!(decode_probmap(&bytes[..bytes.len() - 1]), Err(Error::Size(_))));
    }

    #[test]
    fn palette_rendering_is_fixed() {
        let map = ClassMap::new(1, 3, vec![1, 2, 23]).unwrap();
        let img = map.to_rgb();
        assert_eq!(img.channel(0), &[242, 73, 242]);
        assert_eq!(encode_ppm(&img), encode_ppm(&map.clone().to_rgb()));
        assert_eq!(palette_color(0), [0, 0, 0]);
    }

    #[test]
    fn class_map_rejects_unlabeled() {
        assert!(ClassMap::new(1, 2, vec![1, 0]).is_err());
    }
}
