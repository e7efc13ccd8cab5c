//! Dataset file formats: the banana CSV, IDX image/label pairs (plain or
//! gzipped), and a synthetic two-crescent generator for self-contained runs.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use csv::ReaderBuilder;
use flate2::read::GzDecoder;
use imitation_core::data::Dataset;
use imitation_core::linalg::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CliError, Result};

/// Loads a banana-style CSV: two feature columns plus one label column with
/// labels in `{-1, +1}` or `{1, 2}`, optional header auto-detected. Labels
/// map to `{0, 1}` preserving correspondence; row order is preserved.
pub fn load_banana(path: &Path) -> Result<Dataset> {
    let file = File::open(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows: Vec<[f64; 2]> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record =
            record.map_err(|e| CliError::data(format!("{}: row {line}: {e}", path.display())))?;
        if record.len() != 3 {
            return Err(CliError::data(format!(
                "{}: row {line}: expected 3 columns, found {}",
                path.display(),
                record.len()
            )));
        }
        let parsed: Option<Vec<f64>> = record.iter().map(|f| f.parse::<f64>().ok()).collect();
        match parsed {
            Some(vals) => {
                let label = vals[2];
                if label.fract() != 0.0 {
                    return Err(CliError::data(format!(
                        "{}: row {line}: label column must be an integer, found {label}",
                        path.display()
                    )));
                }
                rows.push([vals[0], vals[1]]);
                raw_labels.push(label as i64);
            }
            None if idx == 0 => continue, // header row
            None => {
                return Err(CliError::data(format!(
                    "{}: row {line}: malformed numeric field",
                    path.display()
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::data(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    // {-1,+1} when a -1 appears, otherwise {1,2}.
    let has_neg = raw_labels.iter().any(|&l| l == -1);
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, &raw) in raw_labels.iter().enumerate() {
        let mapped = match (has_neg, raw) {
            (true, -1) => 0,
            (true, 1) => 1,
            (false, 1) => 0,
            (false, 2) => 1,
            _ => {
                return Err(CliError::data(format!(
                    "{}: row {}: unsupported label {raw} (want -1/+1 or 1/2)",
                    path.display(),
                    i + 1
                )))
            }
        };
        labels.push(mapped);
    }

    let mut data = Vec::with_capacity(rows.len() * 2);
    for r in &rows {
        data.extend_from_slice(r);
    }
    let features = Matrix::from_vec(rows.len(), 2, data)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Dataset::new(features, labels, 2).map_err(|e| CliError::data(e.to_string()))
}

fn read_maybe_gzipped(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?
        .read_to_end(&mut raw)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| CliError::data(format!("{}: gzip: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| CliError::data(format!("{}: truncated header", path.display())))
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label pair (big-endian, optionally gzipped). Pixels
/// scale to `[0, 1]`, images flatten row-major; class count is 10.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let img = read_maybe_gzipped(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CliError::data(format!(
            "{}: image magic {magic:#010x}, want {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let d = rows * cols;
    let pixels = &img[16..];
    if pixels.len() != n * d {
        return Err(CliError::data(format!(
            "{}: truncated image payload: {} bytes for {n} x {d}",
            images_path.display(),
            pixels.len()
        )));
    }

    let lab = read_maybe_gzipped(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CliError::data(format!(
            "{}: label magic {magic:#010x}, want {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_labels != n {
        return Err(CliError::data(format!(
            "image/label count mismatch: {n} images vs {n_labels} labels"
        )));
    }
    let label_bytes = &lab[8..];
    if label_bytes.len() != n_labels {
        return Err(CliError::data(format!(
            "{}: truncated label payload",
            labels_path.display()
        )));
    }

    let data: Vec<f64> = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes.iter().map(|&l| l as usize).collect();
    let features = Matrix::from_vec(n, d, data).map_err(|e| CliError::data(e.to_string()))?;
    Dataset::new(features, labels, 10).map_err(|e| CliError::data(e.to_string()))
}

/// Two interleaved crescents, `n` points split evenly between the classes.
/// A stand-in with the same shape characteristics as the banana benchmark.
pub fn synthetic_banana(n: usize, noise: f64, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = n / 2;
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = usize::from(i >= half);
        let t = std::f64::consts::PI * rng.random::<f64>();
        let (mut x, mut y) = if class == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        let nx: f64 = rng.sample(StandardNormal);
        let ny: f64 = rng.sample(StandardNormal);
        x = 2.0 * x + noise * nx;
        y = 2.0 * y + noise * ny;
        rows.push(vec![x, y]);
        labels.push(class);
    }
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, 2).unwrap()
}

/// Writes a dataset in the banana CSV layout (`x1,x2,label` with labels
/// `{-1,+1}` and a header).
pub fn write_banana_csv(path: &Path, ds: &Dataset) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "x1,x2,label")?;
    for i in 0..ds.len() {
        let row = ds.features.row(i);
        let label = if ds.labels[i] == 0 { -1 } else { 1 };
        writeln!(out, "{},{},{label}", row[0], row[1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;
    use tempfile::tempdir;

    #[test]
    fn banana_roundtrip_with_header_and_neg_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("banana.csv");
        let ds = synthetic_banana(40, 0.2, 3);
        write_banana_csv(&path, &ds).unwrap();
        let loaded = load_banana(&path).unwrap();
        assert_eq!(loaded.len(), 40);
        assert_eq!(loaded.dim(), 2);
        assert_eq!(loaded.labels, ds.labels);
        for i in 0..40 {
            for (a, b) in loaded.features.row(i).iter().zip(ds.features.row(i)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn banana_accepts_one_two_labels_without_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("b.csv");
        std::fs::write(&path, "0.5,1.0,1\n-0.25,0.75,2\n").unwrap();
        let ds = load_banana(&path).unwrap();
        assert_eq!(ds.labels, vec![0, 1]);
    }

    #[test]
    fn banana_rejects_empty_and_malformed() {
        let dir = tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(load_banana(&empty).is_err());

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "0.1,0.2,1\nx,0.3,1\n").unwrap();
        let err = load_banana(&bad).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");

        let cols = dir.path().join("cols.csv");
        std::fs::write(&cols, "0.1,0.2\n").unwrap();
        assert!(load_banana(&cols).is_err());
    }

    fn write_idx_pair(
        dir: &Path,
        images: &[Vec<u8>],
        labels: &[u8],
        gzip: bool,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let side = (images[0].len() as f64).sqrt() as u32;
        let mut img = Vec::new();
        img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        img.extend_from_slice(&(images.len() as u32).to_be_bytes());
        img.extend_from_slice(&side.to_be_bytes());
        img.extend_from_slice(&side.to_be_bytes());
        for im in images {
            img.extend_from_slice(im);
        }
        let mut lab = Vec::new();
        lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        lab.extend_from_slice(labels);

        let (ip, lp) = (dir.join("img.idx"), dir.join("lab.idx"));
        if gzip {
            for (path, payload) in [(&ip, &img), (&lp, &lab)] {
                let f = File::create(path).unwrap();
                let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::default());
                enc.write_all(payload).unwrap();
                enc.finish().unwrap();
            }
        } else {
            std::fs::write(&ip, &img).unwrap();
            std::fs::write(&lp, &lab).unwrap();
        }
        (ip, lp)
    }

    #[test]
    fn idx_roundtrip_plain_and_gzipped() {
        let dir = tempdir().unwrap();
        let images: Vec<Vec<u8>> = vec![vec![0, 51, 102, 255], vec![255, 204, 153, 0]];
        let labels = vec![3u8, 7];
        for gzip in [false, true] {
            let (ip, lp) = write_idx_pair(dir.path(), &images, &labels, gzip);
            let ds = load_idx(&ip, &lp).unwrap();
            assert_eq!(ds.len(), 2);
            assert_eq!(ds.dim(), 4);
            assert_eq!(ds.labels, vec![3, 7]);
            // Exact pixel reproduction after the /255 scaling.
            for (i, im) in images.iter().enumerate() {
                for (j, &p) in im.iter().enumerate() {
                    assert_eq!(ds.features.get(i, j), f64::from(p) / 255.0);
                }
            }
            assert!(ds.features.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn idx_rejects_magic_and_count_mismatches() {
        let dir = tempdir().unwrap();
        let images: Vec<Vec<u8>> = vec![vec![1, 2, 3, 4]];
        let (ip, lp) = write_idx_pair(dir.path(), &images, &[1, 2], false);
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("1 images vs 2 labels"), "{err}");

        let bad_magic = dir.path().join("bad.idx");
        std::fs::write(&bad_magic, 99u32.to_be_bytes()).unwrap();
        assert!(load_idx(&bad_magic, &lp).is_err());
    }

    #[test]
    fn synthetic_banana_is_deterministic_and_balanced() {
        let a = synthetic_banana(400, 0.25, 7);
        let b = synthetic_banana(400, 0.25, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 400);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 200);
    }
}
