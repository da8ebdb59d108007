//! IDX files (big-endian header, raw unsigned bytes).

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder};

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn header(path: &Path, bytes: &[u8], expected: u32, dims: usize) -> Result<Vec<usize>> {
    let need = 4 + 4 * dims;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes, header needs {need}", bytes.len()),
        });
    }
    let magic = BigEndian::read_u32(&bytes[..4]);
    if magic != expected {
        return Err(Error::WrongMagic {
            path: path.to_path_buf(),
            expected,
            found: magic,
        });
    }
    if bytes.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes, header needs {need}", bytes.len()),
        });
    }
    Ok((0..dims)
        .map(|i| BigEndian::read_u32(&bytes[4 + 4 * i..8 + 4 * i]) as usize)
        .collect())
}

fn body<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8]> {
    let have = bytes.len() - offset;
    if have < len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("payload has {have} bytes, header promises {len}"),
        });
    }
    Ok(&bytes[offset..offset + len])
}

pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<IdxImages> {
    let d = header(path, bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (d[0], d[1], d[2]);
    let pixels = body(path, bytes, 16, count * rows * cols)?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let d = header(path, bytes, LABELS_MAGIC, 1)?;
    Ok(body(path, bytes, 8, d[0])?.to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    parse_images(path, &fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    parse_labels(path, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels_file(magic: u32, n: u32, payload: &[u8]) -> Vec<u8> {
        let mut b = vec![0u8; 8];
        BigEndian::write_u32(&mut b[..4], magic);
        BigEndian::write_u32(&mut b[4..], n);
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn labels_roundtrip() {
        let b = labels_file(LABELS_MAGIC, 3, &[7, 0, 9]);
        assert_eq!(parse_labels(Path::new("l"), &b).unwrap(), vec![7, 0, 9]);
    }

    #[test]
    fn image_magic_in_labels_file() {
        let b = labels_file(IMAGES_MAGIC, 3, &[7, 0, 9]);
        let e = parse_labels(Path::new("l"), &b).unwrap_err();
        assert!(matches!(e, Error::WrongMagic { found: IMAGES_MAGIC, .. }));
        assert!(e.to_string().contains("wrong magic"));
    }

    #[test]
    fn empty_and_short_files() {
        assert!(matches!(parse_labels(Path::new("l"), &[]), Err(Error::Truncated { .. })));
        let b = labels_file(LABELS_MAGIC, 5, &[1, 2]);
        assert!(matches!(parse_labels(Path::new("l"), &b), Err(Error::Truncated { .. })));
    }

    #[test]
    fn images_header() {
        let mut b = vec![0u8; 16];
        BigEndian::write_u32(&mut b[..4], IMAGES_MAGIC);
        BigEndian::write_u32(&mut b[4..8], 2);
        BigEndian::write_u32(&mut b[8..12], 2);
        BigEndian::write_u32(&mut b[12..16], 3);
        b.extend(0..12u8);
        let im = parse_images(Path::new("i"), &b).unwrap();
        assert_eq!((im.count, im.rows, im.cols), (2, 2, 3));
        assert_eq!(im.pixels[11], 11);
    }
}
