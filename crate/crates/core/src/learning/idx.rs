//! IDX container reader/writer (the MNIST distribution format).
//!
//! Images: magic `0x00000803`, then `count`, `rows`, `cols` as big-endian
//! u32, then `count * rows * cols` unsigned bytes. Labels: magic
//! `0x00000801`, `count`, then `count` label bytes.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use super::Dataset;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated {section}")]
    Truncated { section: &'static str },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("idx contents do not form a dataset: {0}")]
    Dataset(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Images with pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f64>,
}

fn header(cur: &mut Cursor<&[u8]>, section: &'static str) -> Result<u32, IdxError> {
    cur.read_u32::<BigEndian>()
        .map_err(|_| IdxError::Truncated { section })
}

fn check_magic(cur: &mut Cursor<&[u8]>, expected: u32) -> Result<(), IdxError> {
    let found = header(cur, "magic number")?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, IMAGES_MAGIC)?;
    let count = header(&mut cur, "image header")? as usize;
    let rows = header(&mut cur, "image header")? as usize;
    let cols = header(&mut cur, "image header")? as usize;
    let n = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(IdxError::Truncated {
            section: "pixel data",
        })?;
    let mut raw = vec![0u8; n];
    cur.read_exact(&mut raw).map_err(|_| IdxError::Truncated {
        section: "pixel data",
    })?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: raw.into_iter().map(|p| f64::from(p) / 255.0).collect(),
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let mut cur = Cursor::new(bytes);
    check_magic(&mut cur, LABELS_MAGIC)?;
    let count = header(&mut cur, "label header")? as usize;
    let mut labels = vec![0u8; count];
    cur.read_exact(&mut labels)
        .map_err(|_| IdxError::Truncated { section: "labels" })?;
    Ok(labels)
}

/// Combine parsed images and labels. The class count is `max label + 1`.
pub fn to_dataset(images: IdxImages, labels: &[u8]) -> Result<Dataset, IdxError> {
    if images.count != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.count,
            labels: labels.len(),
        });
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    Dataset::new(
        images.pixels,
        labels.iter().map(|&l| l as usize).collect(),
        images.rows * images.cols,
        n_classes,
    )
    .map_err(|e| IdxError::Dataset(e.to_string()))
}

fn read_file(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let images = parse_images(&read_file(images_path)?)?;
    let labels = parse_labels(&read_file(labels_path)?)?;
    to_dataset(images, &labels)
}

pub fn write_images<W: Write>(
    mut out: W,
    rows: usize,
    cols: usize,
    pixels: &[u8],
) -> std::io::Result<()> {
    let per = rows * cols;
    assert!(
        per > 0 && pixels.len().is_multiple_of(per),
        "pixel buffer is not whole images"
    );
    out.write_u32::<BigEndian>(IMAGES_MAGIC)?;
    out.write_u32::<BigEndian>((pixels.len() / per) as u32)?;
    out.write_u32::<BigEndian>(rows as u32)?;
    out.write_u32::<BigEndian>(cols as u32)?;
    out.write_all(pixels)
}

pub fn write_labels<W: Write>(mut out: W, labels: &[u8]) -> std::io::Result<()> {
    out.write_u32::<BigEndian>(LABELS_MAGIC)?;
    out.write_u32::<BigEndian>(labels.len() as u32)?;
    out.write_all(labels)
}
