//! IDX (MNIST-style) image and label files.

use std::fs;
use std::path::Path;

use crate::data::{LabeledDataset, Targets};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn parse_err<T>(offset: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        offset,
        message: message.into(),
    })
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => parse_err(offset, "file truncated inside the header"),
    }
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return parse_err(0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}"));
    }
    Ok(())
}

/// Image file: returns one row per image, pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Matrix> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * dim {
        return parse_err(
            bytes.len(),
            format!("file truncated: expected {} pixel bytes, found {}", n * dim, body.len()),
        );
    }
    let data = body[..n * dim].iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::new(n, dim, data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return parse_err(
            bytes.len(),
            format!("file truncated: expected {n} labels, found {}", body.len()),
        );
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Classification dataset with `max label + 1` classes.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if images.rows() != labels.len() {
        return parse_err(4, format!("{} images but {} labels", images.rows(), labels.len()));
    }
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    LabeledDataset::new(
        images,
        Targets::Labels { labels, classes },
        images_path.display().to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn images(n: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, n, 2, 2] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    #[test]
    fn two_image_fixture() {
        let m = parse_idx_images(&images(2, &[0, 255, 51, 0, 1, 2, 3, 4])).unwrap();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m.row(0), &[0.0, 1.0, 0.2, 0.0]);
    }

    #[test]
    fn errors_name_offsets() {
        let mut bad = images(2, &[0; 8]);
        bad[3] = 0x01;
        match parse_idx_images(&bad) {
            Err(Error::Parse { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("magic"));
            }
            other => panic!("{other:?}"),
        }
        match parse_idx_images(&images(2, &[0; 5])) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 21),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_idx_labels(&[0, 0, 8]),
            Err(Error::Parse { offset: 0, .. })
        ));
    }
}
