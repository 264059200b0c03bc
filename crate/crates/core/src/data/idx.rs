//! IDX file reader (the MNIST container), with transparent gzip support.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::LabeledDataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw contents of an IDX file: extents and the unsigned byte payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                detail: format!("gzip stream: {e}"),
            })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an IDX byte buffer whose magic must equal `expected_magic`.
/// Offsets in errors refer to the (decompressed) buffer.
pub fn parse(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray> {
    let fail = |offset: usize, detail: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        detail,
    };
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| fail(at, format!("truncated header ({} bytes)", bytes.len())))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(fail(
            0,
            format!("magic {magic:#010x}, expected {expected_magic:#010x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| word(4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let payload: usize = dims.iter().product();
    let available = bytes.len() - header;
    if available < payload {
        return Err(fail(
            bytes.len(),
            format!("truncated payload: dims {dims:?} need {payload} bytes, found {available}"),
        ));
    }
    if available > payload {
        return Err(fail(
            header + payload,
            format!("{} trailing bytes after payload", available - payload),
        ));
    }
    Ok(IdxArray {
        dims,
        bytes: bytes[header..].to_vec(),
    })
}

pub fn read(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    parse(&read_maybe_gz(path)?, expected_magic, path)
}

/// Loads an image/label file pair. Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images = read(images_path, IMAGES_MAGIC)?;
    let labels = read(labels_path, LABELS_MAGIC)?;
    let (n, input_dim) = (images.dims[0], images.dims[1] * images.dims[2]);
    if labels.dims[0] != n {
        return Err(Error::Format {
            path: labels_path.to_path_buf(),
            offset: 4,
            detail: format!("{} labels for {n} images", labels.dims[0]),
        });
    }
    let features = images.bytes.iter().map(|&b| f32::from(b) / 255.0).collect();
    let class_count = labels.bytes.iter().copied().max().map_or(1, |m| m as usize + 1);
    let labels = labels.bytes.iter().map(|&b| Some(b as usize)).collect();
    LabeledDataset::new(features, labels, input_dim, class_count)
}

/// File locations of an MNIST-layout dataset.
#[derive(Clone, Debug)]
pub struct MnistFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Environment variable naming the directory that holds dataset files.
pub const DATA_DIR_ENV: &str = "SSVAE_DATA_DIR";

impl MnistFiles {
    /// Finds the four standard file names in `dir`, accepting a `.gz` suffix.
    pub fn in_dir(dir: &Path) -> Result<Self> {
        let find = |stem: &str| -> Result<PathBuf> {
            [stem.to_string(), format!("{stem}.gz")]
                .iter()
                .map(|n| dir.join(n))
                .find(|p| p.is_file())
                .ok_or_else(|| {
                    Error::Data(format!("{stem}[.gz] not found in {}", dir.display()))
                })
        };
        Ok(MnistFiles {
            train_images: find("train-images-idx3-ubyte")?,
            train_labels: find("train-labels-idx1-ubyte")?,
            test_images: find("t10k-images-idx3-ubyte")?,
            test_labels: find("t10k-labels-idx1-ubyte")?,
        })
    }

    /// `dir` if given, else `$SSVAE_DATA_DIR` or its `mnist/` subdirectory.
    pub fn locate(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            return Self::in_dir(d);
        }
        let root = std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).ok_or_else(|| {
            Error::Data(format!("no dataset directory given and {DATA_DIR_ENV} is unset"))
        })?;
        Self::in_dir(&root).or_else(|_| Self::in_dir(&root.join("mnist")))
    }

    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        Ok((
            load_idx(&self.train_images, &self.train_labels)?,
            load_idx(&self.test_images, &self.test_labels)?,
        ))
    }
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use flate2::write::GzEncoder;
    use flate2::Compression;

    use super::*;

    pub(crate) fn image_fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 51, 102, 204, 0, 255, 1]);
        b
    }

    pub(crate) fn label_fixture() -> Vec<u8> {
        vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3]
    }

    #[test]
    fn fixture_decodes_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, image_fixture()).unwrap();
        fs::write(&lp, label_fixture()).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.input_dim(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.row(1), &[0.8, 0.0, 1.0, 1.0 / 255.0]);
        assert_eq!(ds.labels(), &[Some(7), Some(3)]);
    }

    #[test]
    fn gzip_is_transparent() {
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("i.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&image_fixture()).unwrap();
        fs::write(&ip, enc.finish().unwrap()).unwrap();
        let plain = parse(&image_fixture(), IMAGES_MAGIC, Path::new("x")).unwrap();
        assert_eq!(read(&ip, IMAGES_MAGIC).unwrap(), plain);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let p = Path::new("f");
        let mut bad = image_fixture();
        bad[3] = 9;
        assert!(matches!(parse(&bad, IMAGES_MAGIC, p), Err(Error::Format { offset: 0, .. })));
        let short = &image_fixture()[..20];
        assert!(matches!(parse(short, IMAGES_MAGIC, p), Err(Error::Format { offset: 20, .. })));
        assert!(matches!(parse(&[0, 0], IMAGES_MAGIC, p), Err(Error::Format { .. })));

        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, image_fixture()).unwrap();
        fs::write(&lp, [0, 0, 8, 1, 0, 0, 0, 1, 7]).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err().to_string();
        assert!(err.contains("1 labels for 2 images"), "{err}");
    }
}
