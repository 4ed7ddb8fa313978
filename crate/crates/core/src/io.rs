//! Rasters, masks, dataset manifests and the binary feature format.
//!
//! Images are RGB rasters of `f64` samples in `[0, 1]`; masks are `u8` class
//! ids with [`IGNORE`] reserved. Both are read from and written to PNG.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mask value for pixels that belong to no class.
pub const IGNORE: u8 = 255;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Builds an image from interleaved RGB samples, rejecting values outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for a {height}x{width} RGB image, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("sample {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds an image from interleaved samples, clamping each into `[0, 1]`.
    /// NaN samples become 0.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    /// Builds an image by evaluating `f(row, col)`; results are clamped.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::from_clamped(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Interleaved RGB samples, row-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        self.pixel_at(y * self.width + x)
    }

    /// Pixel by flat row-major index.
    pub fn pixel_at(&self, i: usize) -> [f64; 3] {
        let p = &self.data[3 * i..3 * i + 3];
        [p[0], p[1], p[2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Extracts one channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Reassembles an image from three row-major planes, clamping into `[0, 1]`.
    pub fn from_channels(height: usize, width: usize, planes: [&[f64]; 3]) -> Result<Self> {
        let n = height * width;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::InvalidArgument("channel plane size mismatch".into()));
        }
        let data = (0..n)
            .flat_map(|i| [planes[0][i], planes[1][i], planes[2][i]])
            .collect();
        Self::from_clamped(height, width, data)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::InvalidArgument(format!(
                "expected {} labels for a {height}x{width} mask, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Distinct non-ignore labels in ascending order.
    pub fn labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.data {
            seen[l as usize] = true;
        }
        (0..IGNORE).filter(|&l| seen[l as usize]).collect()
    }

    /// Flat pixel indices per label; index 255 collects ignored pixels.
    pub fn regions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); 256];
        for (i, &l) in self.data.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(u8) -> u8) -> LabelMask {
        LabelMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&l| f(l)).collect(),
        }
    }
}

/// An image with its (optional) semantic mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    image: Image,
    mask: Option<LabelMask>,
}

impl LabeledPair {
    pub fn new(image: Image, mask: Option<LabelMask>) -> Result<Self> {
        if let Some(m) = &mask {
            check_shapes("labeled pair", &image, m)?;
        }
        Ok(Self { image, mask })
    }

    pub fn unlabeled(image: Image) -> Self {
        Self { image, mask: None }
    }

    pub fn image(&self) -> &Image {
        &self.image
    }

    pub fn mask(&self) -> Option<&LabelMask> {
        self.mask.as_ref()
    }

    pub fn into_parts(self) -> (Image, Option<LabelMask>) {
        (self.image, self.mask)
    }
}

pub(crate) fn check_shapes(context: &'static str, image: &Image, mask: &LabelMask) -> Result<()> {
    if image.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            context,
            left_name: "image",
            left: image.shape(),
            right_name: "mask",
            right: mask.shape(),
        });
    }
    Ok(())
}

fn open_png(path: &Path) -> Result<png::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    decoder.read_info().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn read_frame(path: &Path, reader: &mut png::Reader<BufReader<File>>) -> Result<Vec<u8>> {
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    buf.truncate(info.buffer_size());
    Ok(buf)
}

/// Reads an 8- or 16-bit RGB/RGBA PNG, scaling samples to `[0, 1]` and dropping alpha.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let mut reader = open_png(path)?;
    let (width, height) = reader.info().size();
    let (color, depth) = reader.output_color_type();
    if width == 0 || height == 0 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "zero-sized image".into(),
        });
    }
    let channels = match color {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("color type {other:?}, expected RGB or RGBA"),
            })
        }
    };
    let buf = read_frame(path, &mut reader)?;
    let n = width as usize * height as usize;
    let mut data = Vec::with_capacity(n * 3);
    match depth {
        png::BitDepth::Eight => {
            for px in buf.chunks_exact(channels).take(n) {
                data.extend(px[..3].iter().map(|&b| f64::from(b) / 255.0));
            }
        }
        png::BitDepth::Sixteen => {
            for px in buf.chunks_exact(2 * channels).take(n) {
                for c in 0..3 {
                    let v = u16::from_be_bytes([px[2 * c], px[2 * c + 1]]);
                    data.push(f64::from(v) / 65535.0);
                }
            }
        }
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("bit depth {other:?}, expected 8 or 16"),
            })
        }
    }
    Image::new(height as usize, width as usize, data)
}

/// Reads an 8-bit grayscale PNG where each pixel value is a class id.
pub fn load_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let mut reader = open_png(path)?;
    let (width, height) = reader.info().size();
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: format!("mask must be 8-bit grayscale, got {color:?} at {depth:?}"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: "zero-sized mask".into(),
        });
    }
    let mut buf = read_frame(path, &mut reader)?;
    buf.truncate(width as usize * height as usize);
    LabelMask::new(height as usize, width as usize, buf)
}

/// Quantizes a sample to a byte with round-half-up.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(bytes).map_err(to_io)?;
    writer.finish().map_err(to_io)
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = image.as_slice().iter().map(|&v| quantize(v)).collect();
    write_png(
        path.as_ref(),
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        &bytes,
    )
}

/// Writes an 8-bit grayscale PNG of class ids.
pub fn save_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_png(
        path.as_ref(),
        mask.width(),
        mask.height(),
        png::ColorType::Grayscale,
        mask.as_slice(),
    )
}

/// One line of a manifest. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, relative: &Path) -> PathBuf {
        self.root.join(relative)
    }

    /// Loads every image, plus its mask when `with_masks` is set and the record has one.
    pub fn load_pairs(&self, with_masks: bool) -> Result<Vec<LabeledPair>> {
        use rayon::prelude::*;
        self.records
            .par_iter()
            .map(|r| {
                let image = load_image(self.resolve(&r.image))?;
                let mask = match (&r.mask, with_masks) {
                    (Some(m), true) => Some(load_mask(self.resolve(m))?),
                    _ => None,
                };
                LabeledPair::new(image, mask)
            })
            .collect()
    }

    /// Loads images only; mask paths are never opened.
    pub fn load_images(&self) -> Result<Vec<Image>> {
        use rayon::prelude::*;
        self.records
            .par_iter()
            .map(|r| load_image(self.resolve(&r.image)))
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
            out.push('\n');
        }
        out
    }

    /// Writes the records as JSON Lines; `root` is not stored.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let bad = |message: &str| Error::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.to_string(),
        };
        let image = match value.get("image") {
            Some(serde_json::Value::String(s)) => PathBuf::from(s),
            Some(_) => return Err(bad("\"image\" must be a string")),
            None => return Err(bad("missing \"image\" key")),
        };
        let mask = match value.get("mask") {
            None | Some(serde_json::Value::Null) => None,
            Some(serde_json::Value::String(s)) => Some(PathBuf::from(s)),
            Some(_) => return Err(bad("\"mask\" must be a string or null")),
        };
        records.push(ManifestRecord { image, mask });
    }
    if records.is_empty() {
        return Err(Error::EmptyManifest(path.to_path_buf()));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(DatasetManifest { root, records })
}

/// Labeled feature vectors, stored as `f32` exactly as in the on-disk format.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    labels: Vec<u8>,
    values: Vec<f32>,
}

const FEATURE_MAGIC: &[u8; 4] = b"DSFT";
const FEATURE_VERSION: u32 = 1;

impl FeatureSet {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::FeatureFormat("dim must be positive".into()));
        }
        Ok(Self {
            dim,
            labels: Vec::new(),
            values: Vec::new(),
        })
    }

    pub fn push(&mut self, label: u8, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if label == IGNORE {
            return Err(Error::InvalidArgument("feature label 255 is reserved".into()));
        }
        self.labels.push(label);
        self.values.extend_from_slice(vector);
        Ok(())
    }

    pub fn extend(&mut self, other: &FeatureSet) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "cannot merge feature sets of dim {} and {}",
                self.dim, other.dim
            )));
        }
        self.labels.extend_from_slice(&other.labels);
        self.values.extend_from_slice(&other.values);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = (u8, &[f32])> {
        self.labels.iter().copied().zip(self.values.chunks_exact(self.dim))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&FEATURE_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for (label, row) in self.rows() {
            w.write_all(&u16::from(label).to_le_bytes())?;
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let truncated = |_| Error::FeatureFormat("truncated payload".into());
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(truncated)?;
        if &header[..4] != FEATURE_MAGIC {
            return Err(Error::FeatureFormat("bad magic, expected DSFT".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != FEATURE_VERSION {
            return Err(Error::FeatureFormat(format!("unsupported version {version}")));
        }
        let rows = word(8) as usize;
        let dim = word(12) as usize;
        let mut set = FeatureSet::new(dim)?;
        let mut record = vec![0u8; 2 + 4 * dim];
        let mut vector = vec![0f32; dim];
        for _ in 0..rows {
            r.read_exact(&mut record).map_err(truncated)?;
            let label = u16::from_le_bytes([record[0], record[1]]);
            let label = u8::try_from(label)
                .ok()
                .filter(|&l| l != IGNORE)
                .ok_or_else(|| Error::FeatureFormat(format!("label {label} outside [0, 254]")))?;
            for (v, b) in vector.iter_mut().zip(record[2..].chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
            set.push(label, &vector)?;
        }
        Ok(set)
    }
}

pub fn write_features(features: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    features.write_to(BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    FeatureSet::read_from(BufReader::new(file))
}
