//! IDX containers (unsigned-byte image stacks and label lists).

use std::path::Path;

use super::episode::Dataset;
use super::image::Image;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Labels(Vec<u8>),
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
}

fn bad(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "idx",
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| bad(offset, format!("header truncated: file has {} bytes", bytes.len())))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    let rank = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => {
            return Err(bad(
                0,
                format!("magic {other:#010x}, expected {LABELS_MAGIC:#010x} or {IMAGES_MAGIC:#010x}"),
            ))
        }
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - start;
    if actual != expected {
        return Err(bad(
            start + actual.min(expected),
            format!("payload has {actual} bytes, dimensions {dims:?} need {expected}"),
        ));
    }
    let payload = bytes[start..].to_vec();
    Ok(match rank {
        1 => IdxData::Labels(payload),
        _ => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: payload,
        },
    })
}

pub fn encode_idx(data: &IdxData) -> Vec<u8> {
    let (magic, dims, payload): (u32, Vec<usize>, &[u8]) = match data {
        IdxData::Labels(l) => (LABELS_MAGIC, vec![l.len()], l),
        IdxData::Images {
            count,
            rows,
            cols,
            pixels,
        } => (IMAGES_MAGIC, vec![*count, *rows, *cols], pixels),
    };
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

pub fn load_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

pub fn write_idx(path: &Path, data: &IdxData) -> Result<()> {
    write_atomic(path, &encode_idx(data))
}

impl IdxData {
    /// Image stack with intensities scaled by `1/255`.
    pub fn to_images(&self) -> Result<Vec<Image>> {
        match self {
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            } => (0..*count)
                .map(|i| {
                    let px = &pixels[i * rows * cols..(i + 1) * rows * cols];
                    Image::new(*rows, *cols, px.iter().map(|&b| b as f64 / 255.0).collect())
                })
                .collect(),
            IdxData::Labels(_) => Err(Error::invalid("IDX file holds labels, not images")),
        }
    }
}

/// Labelled dataset from an image file and a label file.
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let imgs = load_idx(images)?.to_images()?;
    let labels = match load_idx(labels)? {
        IdxData::Labels(l) => l.into_iter().map(usize::from).collect(),
        IdxData::Images { .. } => return Err(Error::invalid("label path holds an image stack")),
    };
    Dataset::new(imgs, labels)
}
