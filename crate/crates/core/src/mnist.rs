//! IDX image/label files and simple image preprocessing.

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale images in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, `len() * rows * cols` values.
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format { path: self.path.display().to_string(), offset, msg: msg.into() }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.bytes.get(self.pos..end).ok_or_else(|| self.fail(self.pos, "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn rest(&self, need: usize) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < need {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated payload: expected {need} bytes after offset {}, found {have}", self.pos),
            ));
        }
        Ok(&self.bytes[self.pos..self.pos + need])
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX3 image file; returns `(count, rows, cols, raw bytes)`.
pub fn parse_images<'a>(bytes: &'a [u8], path: &'a Path) -> Result<(usize, usize, usize, &'a [u8])> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(r.fail(0, format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}")));
    }
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    Ok((count, rows, cols, r.rest(count * rows * cols)?))
}

/// Parses an IDX1 label file.
pub fn parse_labels<'a>(bytes: &'a [u8], path: &'a Path) -> Result<&'a [u8]> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.u32()?;
    if magic != LABELS_MAGIC {
        return Err(r.fail(0, format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}")));
    }
    let count = r.u32()? as usize;
    r.rest(count)
}

/// Loads a matching pair of IDX files, scaling pixels by `1/255`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ibytes = read_file(ip)?;
    let lbytes = read_file(lp)?;
    let (count, rows, cols, raw) = parse_images(&ibytes, ip)?;
    let labels = parse_labels(&lbytes, lp)?;
    if labels.len() != count {
        return Err(Error::invalid(format!(
            "{} has {count} images but {} has {} labels",
            ip.display(),
            lp.display(),
            labels.len()
        )));
    }
    Ok(Dataset { rows, cols, pixels: raw.iter().map(|&b| b as f64 / 255.0).collect(), labels: labels.to_vec() })
}

/// Encodes images (pixels in `[0, 1]`, rounded to bytes) as IDX3.
pub fn encode_images(pixels: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.image_size();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Non-overlapping `factor×factor` average pooling.
    pub fn downscale(&self, factor: usize) -> Result<Dataset> {
        if factor == 0 || !self.rows.is_multiple_of(factor) || !self.cols.is_multiple_of(factor) {
            return Err(Error::invalid(format!("{}×{} images are not divisible by {factor}", self.rows, self.cols)));
        }
        let (r2, c2) = (self.rows / factor, self.cols / factor);
        let area = (factor * factor) as f64;
        let mut pixels = Vec::with_capacity(self.len() * r2 * c2);
        for i in 0..self.len() {
            let img = self.image(i);
            for r in 0..r2 {
                for c in 0..c2 {
                    let mut s = 0.0;
                    for dr in 0..factor {
                        for dc in 0..factor {
                            s += img[(r * factor + dr) * self.cols + c * factor + dc];
                        }
                    }
                    pixels.push(s / area);
                }
            }
        }
        Ok(Dataset { rows: r2, cols: c2, pixels, labels: self.labels.clone() })
    }

    /// Images `indices` as a `[k×(rows·cols)]` matrix with their labels.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let n = self.image_size();
        let mut data = Vec::with_capacity(indices.len() * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i] as usize);
        }
        (Tensor::matrix(indices.len(), n, data).expect("sizes agree"), labels)
    }

    /// Each image as a pixel sequence, `[k×(rows·cols)×1]`.
    pub fn sequences(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let (x, y) = self.batch(indices);
        let n = self.image_size();
        (Tensor::new(vec![indices.len(), n, 1], x.into_data()).expect("sizes agree"), y)
    }

    /// Splits off the first `n` samples.
    pub fn split(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let cut = n * self.image_size();
        let head = Dataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..cut].to_vec(),
            labels: self.labels[..n].to_vec(),
        };
        let tail = Dataset {
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[cut..].to_vec(),
            labels: self.labels[n..].to_vec(),
        };
        (head, tail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downscale_averages_blocks() {
        let d = Dataset { rows: 2, cols: 2, pixels: vec![1.0, 0.0, 0.0, 1.0], labels: vec![3] };
        let s = d.downscale(2).unwrap();
        assert_eq!((s.rows, s.cols), (1, 1));
        assert_eq!(s.pixels, vec![0.5]);
        assert!(d.downscale(3).is_err());
    }

    #[test]
    fn header_errors_name_offsets() {
        let p = Path::new("x.idx");
        let mut bytes = encode_labels(&[1, 2, 3]);
        assert_eq!(parse_labels(&bytes, p).unwrap(), &[1, 2, 3]);
        bytes.pop();
        match parse_labels(&bytes, p) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
        match parse_images(&bytes, p) {
            Err(Error::Format { offset: 0, msg, .. }) => assert!(msg.contains("magic")),
            other => panic!("{other:?}"),
        }
        match parse_labels(&bytes[..6], p) {
            Err(Error::Format { offset: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }
}
