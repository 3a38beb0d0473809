//! MNIST in IDX format: loading, class filtering and seeded balanced splits.
//!
//! IDX files may be stored raw or gzip-compressed; compression is detected
//! from the gzip magic bytes, not the file name.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const DEFAULT_CLASSES: [u8; 4] = [0, 1, 2, 3];
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";

/// Images and labels as read from disk; pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Filtered, relabelled samples. `source` holds each sample's index in the
/// raw dataset it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub source: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> Vec<(&[f64], usize)> {
        self.images.iter().map(Vec::as_slice).zip(self.labels.iter().copied()).collect()
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::Format {
            offset: out.len() as u64,
            msg: format!("{}: corrupt gzip stream: {e}", path.display()),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: String,
}

impl Cursor<'_> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!(
                    "{}: truncated, needed {n} bytes at offset {}",
                    self.name, self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parse an IDX image file and its label file.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawDataset> {
    let img_bytes = read_maybe_gz(images_path)?;
    let lbl_bytes = read_maybe_gz(labels_path)?;

    let mut c = Cursor { bytes: &img_bytes, pos: 0, name: images_path.display().to_string() };
    let magic = c.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("{}: bad image magic {magic:#010x}", c.name),
        });
    }
    let (count, rows, cols) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let pixels = c.take(count * rows * cols)?;
    let images = pixels
        .chunks_exact((rows * cols).max(1))
        .take(count)
        .map(|img| img.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect::<Vec<Vec<f64>>>();

    let mut c = Cursor { bytes: &lbl_bytes, pos: 0, name: labels_path.display().to_string() };
    let magic = c.u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("{}: bad label magic {magic:#010x}", c.name),
        });
    }
    let label_count = c.u32()? as usize;
    if label_count != count {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{count} images but {label_count} labels"),
        });
    }
    let labels = c.take(count)?.to_vec();
    Ok(RawDataset { rows, cols, images, labels })
}

/// Locate `train-images-idx3-ubyte` / `train-labels-idx1-ubyte`, raw or `.gz`, in `dir`.
pub fn mnist_paths(dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let find = |stem: &str| {
        [stem.to_string(), format!("{stem}.gz")]
            .into_iter()
            .map(|n| dir.join(n))
            .find(|p| p.is_file())
            .ok_or_else(|| Error::Data(format!("no {stem}[.gz] in {}", dir.display())))
    };
    Ok((find(TRAIN_IMAGES)?, find(TRAIN_LABELS)?))
}

pub fn load_mnist_dir(dir: &Path) -> Result<RawDataset> {
    let (images, labels) = mnist_paths(dir)?;
    load_idx(&images, &labels)
}

/// Write images (pixels in `[0, 1]`, rounded to bytes) and labels as raw IDX files.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    images: &[Vec<f64>],
    labels: &[u8],
) -> Result<()> {
    if images.len() != labels.len() || images.iter().any(|i| i.len() != rows * cols) {
        return Err(Error::Dimension("image/label counts or sizes disagree".into()));
    }
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for image in images {
        img.extend(image.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lbl = Vec::with_capacity(8 + labels.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    std::fs::write(images_path, img).map_err(|e| Error::io(format!("writing {}", images_path.display()), e))?;
    std::fs::write(labels_path, lbl).map_err(|e| Error::io(format!("writing {}", labels_path.display()), e))
}

/// Share of `total` assigned to class `i` of `k`: `total / k`, plus one for
/// the first `total % k` classes.
pub fn class_quota(total: usize, k: usize, i: usize) -> usize {
    total / k + usize::from(i < total % k)
}

/// Keep `classes` (relabelled to their position in the list), then draw
/// class-balanced, disjoint train and test sets with a seeded shuffle.
pub fn filter_and_split(
    raw: &RawDataset,
    classes: &[u8],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes.is_empty() {
        return Err(Error::Data("no classes requested".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx: Vec<(usize, usize)> = Vec::with_capacity(n_train);
    let mut test_idx: Vec<(usize, usize)> = Vec::with_capacity(n_test);
    for (ci, &class) in classes.iter().enumerate() {
        let mut members: Vec<usize> = (0..raw.len()).filter(|&i| raw.labels[i] == class).collect();
        let (q_train, q_test) = (class_quota(n_train, classes.len(), ci), class_quota(n_test, classes.len(), ci));
        if members.len() < q_train + q_test {
            return Err(Error::Data(format!(
                "class {class} has {} samples, {} needed",
                members.len(),
                q_train + q_test
            )));
        }
        members.shuffle(&mut rng);
        train_idx.extend(members[..q_train].iter().map(|&i| (i, ci)));
        test_idx.extend(members[q_train..q_train + q_test].iter().map(|&i| (i, ci)));
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);
    let build = |idx: Vec<(usize, usize)>| Dataset {
        images: idx.iter().map(|&(i, _)| raw.images[i].clone()).collect(),
        labels: idx.iter().map(|&(_, c)| c).collect(),
        source: idx.iter().map(|&(i, _)| i).collect(),
    };
    Ok((build(train_idx), build(test_idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn fixture(dir: &Path) -> (PathBuf, PathBuf) {
        let imgs = dir.join("img");
        let lbls = dir.join("lbl");
        let mut i = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        i.extend_from_slice(&[0, 51, 255, 128, 7, 8, 9, 10]);
        std::fs::write(&imgs, i).unwrap();
        std::fs::write(&lbls, [0, 0, 8, 1, 0, 0, 0, 2, 3, 1]).unwrap();
        (imgs, lbls)
    }

    #[test]
    fn parses_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = fixture(dir.path());
        let raw = load_idx(&i, &l).unwrap();
        assert_eq!((raw.len(), raw.rows, raw.cols), (2, 2, 2));
        assert_eq!(raw.images[0], vec![0.0, 51.0 / 255.0, 1.0, 128.0 / 255.0]);
        assert_eq!(raw.images[1], vec![7.0 / 255.0, 8.0 / 255.0, 9.0 / 255.0, 10.0 / 255.0]);
        assert_eq!(raw.labels, vec![3, 1]);
    }

    #[test]
    fn reads_gzip_transparently() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = fixture(dir.path());
        let gz = dir.path().join("img.gz");
        let mut enc = flate2::write::GzEncoder::new(std::fs::File::create(&gz).unwrap(), flate2::Compression::default());
        enc.write_all(&std::fs::read(&i).unwrap()).unwrap();
        enc.finish().unwrap();
        assert_eq!(load_idx(&gz, &l).unwrap(), load_idx(&i, &l).unwrap());
    }

    #[test]
    fn rejects_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = fixture(dir.path());
        let bytes = std::fs::read(&i).unwrap();

        let short = dir.path().join("short");
        std::fs::write(&short, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&short, &l), Err(Error::Format { .. })));

        let header_only = dir.path().join("hdr");
        std::fs::write(&header_only, &bytes[..6]).unwrap();
        assert!(matches!(load_idx(&header_only, &l), Err(Error::Format { .. })));

        let mut wrong = bytes.clone();
        wrong[3] = 0x01;
        let bad = dir.path().join("bad");
        std::fs::write(&bad, wrong).unwrap();
        assert!(matches!(load_idx(&bad, &l), Err(Error::Format { offset: 0, .. })));

        let fewer = dir.path().join("fewer");
        std::fs::write(&fewer, [0, 0, 8, 1, 0, 0, 0, 1, 3]).unwrap();
        assert!(matches!(load_idx(&i, &fewer), Err(Error::Format { .. })));

        assert!(matches!(load_idx(&dir.path().join("missing"), &l), Err(Error::Io { .. })));
    }

    fn synthetic(per_class: usize) -> RawDataset {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class * 10 {
            labels.push((i % 10) as u8);
            images.push(vec![(i % 256) as f64 / 255.0; 4]);
        }
        RawDataset { rows: 2, cols: 2, images, labels }
    }

    #[test]
    fn balanced_disjoint_split() {
        let raw = synthetic(60);
        let (train, test) = filter_and_split(&raw, &DEFAULT_CLASSES, 100, 100, 3).unwrap();
        assert_eq!(train.class_counts(4), vec![25; 4]);
        assert_eq!(test.class_counts(4), vec![25; 4]);
        assert!(train.source.iter().all(|i| !test.source.contains(i)));
        assert!(train.source.iter().all(|&i| raw.labels[i] < 4));

        let (odd, _) = filter_and_split(&raw, &DEFAULT_CLASSES, 10, 0, 3).unwrap();
        assert_eq!(odd.class_counts(4), vec![3, 3, 2, 2]);

        assert!(matches!(
            filter_and_split(&raw, &DEFAULT_CLASSES, 200, 100, 0),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn relabels_to_class_position() {
        let raw = synthetic(5);
        let (train, _) = filter_and_split(&raw, &[7, 2], 4, 0, 1).unwrap();
        for (&l, &s) in train.labels.iter().zip(&train.source) {
            assert_eq!([7u8, 2][l], raw.labels[s]);
        }
    }

    #[test]
    fn quota_rule() {
        assert_eq!((0..4).map(|i| class_quota(100, 4, i)).collect::<Vec<_>>(), vec![25; 4]);
        assert_eq!((0..4).map(|i| class_quota(6, 4, i)).collect::<Vec<_>>(), vec![2, 2, 1, 1]);
    }
}
