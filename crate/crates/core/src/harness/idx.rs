//! IDX (MNIST-format) image and label files, optionally gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::data::{DataError, Dataset};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    let io = |e: std::io::Error| DataError::Io {
        file: path.display().to_string(),
        reason: e.to_string(),
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, file: &str) -> Result<u32, DataError> {
    let word = bytes
        .get(at..at + 4)
        .ok_or_else(|| DataError::IdxTruncated {
            file: file.to_string(),
            needed: at + 4,
            actual: bytes.len(),
        })?;
    Ok(u32::from_be_bytes(word.try_into().unwrap()))
}

/// Parses an image file into `(pixels scaled to [0, 1], count, rows * cols)`.
pub fn parse_images(bytes: &[u8], file: &str) -> Result<(Vec<f64>, usize, usize), DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::IdxMagic {
            file: file.to_string(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let dim = be_u32(bytes, 8, file)? as usize * be_u32(bytes, 12, file)? as usize;
    let needed = 16 + count * dim;
    if bytes.len() < needed {
        return Err(DataError::IdxTruncated {
            file: file.to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    let pixels = bytes[16..needed]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok((pixels, count, dim))
}

pub fn parse_labels(bytes: &[u8], file: &str) -> Result<Vec<usize>, DataError> {
    let magic = be_u32(bytes, 0, file)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::IdxMagic {
            file: file.to_string(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, file)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(DataError::IdxTruncated {
            file: file.to_string(),
            needed,
            actual: bytes.len(),
        });
    }
    Ok(bytes[8..needed].iter().map(|&b| b as usize).collect())
}

/// Loads a paired image/label file set, keeping at most `limit` samples.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
) -> Result<Dataset, DataError> {
    let image_name = images.display().to_string();
    let label_name = labels.display().to_string();
    let (mut pixels, count, dim) = parse_images(&read_bytes(images)?, &image_name)?;
    let mut labels = parse_labels(&read_bytes(labels)?, &label_name)?;
    if count != labels.len() {
        return Err(DataError::IdxCountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if let Some(limit) = limit.filter(|&l| l < count) {
        pixels.truncate(limit * dim);
        labels.truncate(limit);
    }
    Dataset::new(pixels, dim, labels)
}

/// Encodes an image file; `pixels` holds `count * rows * cols` bytes.
pub fn encode_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use std::io::Write;

    #[test]
    fn round_trip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let img = encode_images(&[0, 255, 51, 102, 0, 0, 0, 255], 2, 2, 2);
        let lab = encode_labels(&[3, 7]);
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab.gz");
        fs::write(&ip, &img).unwrap();
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        gz.write_all(&lab).unwrap();
        fs::write(&lp, gz.finish().unwrap()).unwrap();

        let d = load_idx_dataset(&ip, &lp, None).unwrap();
        assert_eq!((d.len(), d.dim()), (2, 4));
        assert_eq!(d.labels(), &[3, 7]);
        assert_eq!(d.sample(0), &[0.0, 1.0, 0.2, 0.4]);

        let d = load_idx_dataset(&ip, &lp, Some(1)).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn malformed_files() {
        let img = encode_images(&[1, 2, 3, 4], 1, 2, 2);
        assert!(matches!(
            parse_labels(&img, "x"),
            Err(DataError::IdxMagic {
                found: IMAGE_MAGIC,
                ..
            })
        ));
        assert!(matches!(
            parse_images(&img[..18], "x"),
            Err(DataError::IdxTruncated {
                needed: 20,
                actual: 18,
                ..
            })
        ));
        assert!(matches!(
            parse_images(&img[..3], "x"),
            Err(DataError::IdxTruncated { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i");
        let lp = dir.path().join("l");
        fs::write(&ip, &img).unwrap();
        fs::write(&lp, encode_labels(&[1, 2])).unwrap();
        assert_eq!(
            load_idx_dataset(&ip, &lp, None),
            Err(DataError::IdxCountMismatch {
                images: 1,
                labels: 2
            })
        );
        assert!(matches!(
            load_idx_dataset(&dir.path().join("missing"), &lp, None),
            Err(DataError::Io { .. })
        ));
    }
}
