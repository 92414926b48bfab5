//! MNIST-style IDX files (unsigned-byte payloads only).

use std::io::{Read, Write};
use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const UBYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::Parse(format!("idx: truncated magic at byte offset {}", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Parse("idx: bad magic at byte offset 0".into()));
    }
    if bytes[2] != UBYTE {
        return Err(Error::Parse(format!(
            "idx: unsupported element type 0x{:02x} at byte offset 2",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::Parse("idx: zero dimensions at byte offset 3".into()));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Parse(format!(
            "idx: truncated dimension list at byte offset {}",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Parse("idx: element count overflows".into()))?;
    let have = bytes.len() - header;
    if have != count {
        return Err(Error::Parse(format!(
            "idx: payload starting at byte offset {header} holds {have} bytes, dimensions require {count}"
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    parse_idx(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn encode_idx(array: &IdxArray) -> Result<Vec<u8>> {
    let count: usize = array.dims.iter().product();
    if array.dims.is_empty() || array.dims.len() > 255 || count != array.data.len() {
        return Err(Error::InvalidArgument("idx: dimensions do not match payload".into()));
    }
    let mut out = vec![0, 0, UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidArgument("idx: dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    std::fs::File::create(path)?.write_all(&encode_idx(array)?)?;
    Ok(())
}

/// Images scaled to `[0, 1]` and flattened; labels from a 1-D file.
pub fn load_idx_dataset<T: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<T>> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() < 2 || lab.dims.len() != 1 {
        return Err(Error::Parse(
            "idx: expected N×... images and a 1-D label file".into(),
        ));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(Error::Parse(format!(
            "idx: {} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    let dim = img.dims[1..].iter().product();
    let labels: Vec<usize> = lab.data.iter().map(|&v| v as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let x = img.data.iter().map(|&v| T::of(f64::from(v) / 255.0)).collect();
    Dataset::new(x, dim, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let a = IdxArray {
            dims: vec![2, 2, 3],
            data: (0..12).collect(),
        };
        assert_eq!(parse_idx(&encode_idx(&a).unwrap()).unwrap(), a);
    }

    #[test]
    fn truncation_reports_offset() {
        let a = IdxArray {
            dims: vec![4],
            data: vec![1, 2, 3, 4],
        };
        let mut b = encode_idx(&a).unwrap();
        b.pop();
        let msg = parse_idx(&b).unwrap_err().to_string();
        assert!(msg.contains("byte offset 8"), "{msg}");
        assert!(parse_idx(&[0, 0, 0x0d, 1, 0, 0, 0, 0]).unwrap_err().to_string().contains("offset 2"));
    }

    #[test]
    fn dataset_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&ip, &IdxArray { dims: vec![3, 2, 2], data: vec![0, 255, 0, 0, 51, 0, 0, 0, 0, 0, 0, 255] }).unwrap();
        write_idx(&lp, &IdxArray { dims: vec![3], data: vec![0, 2, 1] }).unwrap();
        let d: Dataset<f32> = load_idx_dataset(&ip, &lp).unwrap();
        assert_eq!((d.len(), d.dim(), d.classes()), (3, 4, 3));
        assert_eq!(d.row(0), &[0.0, 1.0, 0.0, 0.0]);
        assert!((d.row(1)[0] - 0.2).abs() < 1e-6);
    }
}
