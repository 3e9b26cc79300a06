//! Dataset parsing (MNIST-family IDX files, CIFAR-10 binary batches) and the
//! exact pixel-lattice histogram built from them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pixel::{check_channels, lattice_size, Image, LabeledDataset, Pixel};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_CLASSES: usize = 10;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(field, "truncated file"))
}

/// Parses an IDX image file and its companion label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    parse_idx(&read(images_path)?, &read(labels_path)?)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, "images magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            "images magic",
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"),
        ));
    }
    let count = be_u32(images, 4, "image count")? as usize;
    let rows = be_u32(images, 8, "rows")? as usize;
    let cols = be_u32(images, 12, "cols")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::parse("rows", "image dimensions must be positive"));
    }
    let body = &images[16..];
    let per_image = rows * cols;
    if body.len() < count * per_image {
        return Err(Error::parse(
            "image data",
            format!(
                "truncated file: {} bytes for {count} images of {rows}x{cols}",
                body.len()
            ),
        ));
    }

    let magic = be_u32(labels, 0, "labels magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            "labels magic",
            format!("bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"),
        ));
    }
    let label_count = be_u32(labels, 4, "label count")? as usize;
    if label_count != count {
        return Err(Error::parse(
            "label count",
            format!("{label_count} labels for {count} images"),
        ));
    }
    let label_body = &labels[8..];
    if label_body.len() < count {
        return Err(Error::parse("label data", "truncated file"));
    }

    let images = body
        .chunks_exact(per_image)
        .take(count)
        .map(|chunk| Image::new(rows, cols, 1, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = label_body[..count].iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(images, labels, num_classes)
}

/// Parses one or more CIFAR-10 binary batches and concatenates them in order.
pub fn load_cifar10(batch_paths: &[PathBuf]) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in batch_paths {
        let bytes = read(path)?;
        if bytes.is_empty() {
            log::warn!("{} is empty; contributes no images", path.display());
        }
        let (mut im, mut lb) = parse_cifar10_records(&bytes)?;
        images.append(&mut im);
        labels.append(&mut lb);
    }
    LabeledDataset::new(images, labels, CIFAR_CLASSES)
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.is_empty() {
        log::warn!("empty CIFAR-10 batch");
    }
    let (images, labels) = parse_cifar10_records(bytes)?;
    LabeledDataset::new(images, labels, CIFAR_CLASSES)
}

fn parse_cifar10_records(bytes: &[u8]) -> Result<(Vec<Image>, Vec<usize>)> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::parse(
            "file length",
            format!("{} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        ));
    }
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (n, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::parse(
                format!("record {n} label"),
                format!("label out of range: {label}"),
            ));
        }
        let planes = &record[1..];
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            data.extend_from_slice(&[planes[i], planes[plane + i], planes[2 * plane + i]]);
        }
        images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, 3, data)?);
        labels.push(label);
    }
    Ok((images, labels))
}

/// Serializes a grayscale dataset as an IDX image/label pair.
pub fn encode_idx(ds: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match ds.images.first() {
        Some(im) => (im.height(), im.width()),
        None => (0, 0),
    };
    let mut images = Vec::with_capacity(16 + ds.len() * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in &ds.images {
        if im.channels() != 1 || im.height() != rows || im.width() != cols {
            return Err(Error::structural("IDX output needs uniform grayscale images"));
        }
        images.extend_from_slice(im.data());
    }
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    for &l in &ds.labels {
        let byte = u8::try_from(l).map_err(|_| Error::structural("label does not fit a byte"))?;
        labels.push(byte);
    }
    Ok((images, labels))
}

/// Serializes a 32x32 RGB dataset as one CIFAR-10 binary batch.
pub fn encode_cifar10(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (im, &label) in ds.images.iter().zip(&ds.labels) {
        if im.shape() != [CIFAR_SIDE, CIFAR_SIDE, 3] {
            return Err(Error::structural("CIFAR-10 output needs 32x32x3 images"));
        }
        if label >= CIFAR_CLASSES {
            return Err(Error::structural(format!("label out of range: {label}")));
        }
        out.push(label as u8);
        let data = im.data();
        for c in 0..3 {
            out.extend((0..plane).map(|i| data[3 * i + c]));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetFormat {
    Idx,
    Cifar10,
}

impl DatasetFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "idx" | "mnist" => Ok(DatasetFormat::Idx),
            "cifar10" | "cifar" => Ok(DatasetFormat::Cifar10),
            other => Err(Error::config(format!("unknown dataset format {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetFormat::Idx => "idx",
            DatasetFormat::Cifar10 => "cifar10",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Location of a standard dataset on disk.
#[derive(Clone, Debug)]
pub struct DatasetLocation {
    pub format: DatasetFormat,
    pub dir: PathBuf,
    pub split: Split,
}

impl DatasetLocation {
    /// Files read for this split, using the distribution file names.
    pub fn files(&self) -> Vec<PathBuf> {
        match (self.format, self.split) {
            (DatasetFormat::Idx, Split::Train) => vec![
                self.dir.join("train-images-idx3-ubyte"),
                self.dir.join("train-labels-idx1-ubyte"),
            ],
            (DatasetFormat::Idx, Split::Test) => vec![
                self.dir.join("t10k-images-idx3-ubyte"),
                self.dir.join("t10k-labels-idx1-ubyte"),
            ],
            (DatasetFormat::Cifar10, Split::Train) => (1..=5)
                .map(|i| self.dir.join(format!("data_batch_{i}.bin")))
                .collect(),
            (DatasetFormat::Cifar10, Split::Test) => vec![self.dir.join("test_batch.bin")],
        }
    }

    pub fn load(&self) -> Result<LabeledDataset> {
        let files = self.files();
        match self.format {
            DatasetFormat::Idx => load_idx(&files[0], &files[1]),
            DatasetFormat::Cifar10 => load_cifar10(&files),
        }
    }
}

/// Exact frequency table over the pixel lattice.
#[derive(Clone, PartialEq, Eq)]
pub struct PixelHistogram {
    channels: usize,
    counts: Vec<u64>,
    total: u64,
}

impl std::fmt::Debug for PixelHistogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PixelHistogram")
            .field("channels", &self.channels)
            .field("total", &self.total)
            .finish_non_exhaustive()
    }
}

impl PixelHistogram {
    pub fn empty(channels: usize) -> Result<Self> {
        check_channels(channels)?;
        Ok(PixelHistogram {
            channels,
            counts: vec![0; lattice_size(channels)],
            total: 0,
        })
    }

    pub fn from_pixels<I: IntoIterator<Item = Pixel>>(channels: usize, pixels: I) -> Result<Self> {
        let mut h = PixelHistogram::empty(channels)?;
        for p in pixels {
            if p.channels() != channels {
                return Err(Error::structural("pixel channel count differs from histogram"));
            }
            h.counts[p.lattice_index()] += 1;
            h.total += 1;
        }
        Ok(h)
    }

    /// Builds a grayscale or RGB histogram from `(value, count)` pairs.
    pub fn from_counts(channels: usize, entries: &[(Pixel, u64)]) -> Result<Self> {
        let mut h = PixelHistogram::empty(channels)?;
        for &(p, c) in entries {
            if p.channels() != channels {
                return Err(Error::structural("pixel channel count differs from histogram"));
            }
            h.counts[p.lattice_index()] += c;
            h.total += c;
        }
        Ok(h)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn total_count(&self) -> u64 {
        self.total
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, p: &Pixel) -> u64 {
        self.counts[p.lattice_index()]
    }

    /// Present values in ascending lattice order with their counts.
    pub fn nonzero(&self) -> impl Iterator<Item = (Pixel, u64)> + '_ {
        let c = self.channels;
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(move |(i, &n)| (Pixel::from_lattice_index(i, c), n))
    }

    pub fn distinct_values(&self) -> usize {
        self.counts.iter().filter(|&&n| n > 0).count()
    }

    pub(crate) fn merge(&mut self, other: &PixelHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

/// Frequency of every pixel value over all images of `ds`.
///
/// The dataset is processed in image shards whose partial tables are summed,
/// so the result does not depend on the shard size.
pub fn build_histogram(ds: &LabeledDataset) -> Result<PixelHistogram> {
    build_histogram_sharded(ds, 4096)
}

pub fn build_histogram_sharded(ds: &LabeledDataset, shard: usize) -> Result<PixelHistogram> {
    let channels = ds.channels().unwrap_or(1);
    let mut total = PixelHistogram::empty(channels)?;
    let mut part = PixelHistogram::empty(channels)?;
    for chunk in ds.images.chunks(shard.max(1)) {
        part.counts.iter_mut().for_each(|c| *c = 0);
        part.total = 0;
        for im in chunk {
            let data = im.data();
            if channels == 1 {
                for &v in data {
                    part.counts[v as usize] += 1;
                }
            } else {
                for px in data.chunks_exact(3) {
                    let idx = ((px[0] as usize) << 16) | ((px[1] as usize) << 8) | px[2] as usize;
                    part.counts[idx] += 1;
                }
            }
            part.total += im.num_pixels() as u64;
        }
        total.merge(&part);
    }
    Ok(total)
}

/// Reproducibility line emitted by the `ingest` command.
#[derive(Clone, Debug, Serialize, PartialEq, Eq)]
pub struct DatasetSummary {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub pixels: u64,
    pub distinct_values: usize,
    pub digest: String,
}

pub fn summarize(ds: &LabeledDataset, hist: &PixelHistogram) -> DatasetSummary {
    let (height, width, channels) = ds
        .images
        .first()
        .map_or((0, 0, hist.channels()), |im| (im.height(), im.width(), im.channels()));
    DatasetSummary {
        images: ds.len(),
        height,
        width,
        channels,
        num_classes: ds.num_classes,
        pixels: ds.total_pixels(),
        distinct_values: hist.distinct_values(),
        digest: ds.digest(),
    }
}
