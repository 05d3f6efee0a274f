//! Dataset ingestion and result serialization.
//!
//! Readers: IDX image/label files (big-endian, the classic digit-dataset
//! layout) and the "CSWT" tensor container (little-endian f64, bit-exact
//! round-trips). Writers: distance matrices as CSV or JSON with a stable
//! key order.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distances::MethodSpec;
use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::tensor::{EmpiricalMeasure, Tensor3};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CSWT_MAGIC: [u8; 4] = *b"CSWT";
const CSWT_VERSION: u32 = 1;

/// Pixel byte to real mapping applied on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Raw byte value as a real.
    None,
    /// Divide by 255 into `[0, 1]`.
    Unit,
    /// Map into `[-1, 1]`.
    Signed,
}

impl Normalization {
    pub fn apply(&self, byte: u8) -> f64 {
        match self {
            Normalization::None => byte as f64,
            Normalization::Unit => byte as f64 / 255.0,
            Normalization::Signed => byte as f64 / 127.5 - 1.0,
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::None => write!(f, "none"),
            Normalization::Unit => write!(f, "unit"),
            Normalization::Signed => write!(f, "signed"),
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "unit" => Ok(Normalization::Unit),
            "signed" => Ok(Normalization::Signed),
            other => Err(Error::InvalidArgument(format!("unknown normalization '{other}'"))),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.display().to_string(), reason: reason.into() }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => format_err(path, format!("truncated {what}")),
            _ => io_err(path, e),
        })
}

fn read_u32_be(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_be_bytes(b))
}

fn read_u32_le(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads an IDX image file (big-endian; magic `0x00000803`; u32 count,
/// rows, cols; then `count*rows*cols` bytes) as single-channel tensors.
pub fn read_idx_images(path: impl AsRef<Path>, normalization: Normalization) -> Result<Vec<Tensor3>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let magic = read_u32_be(&mut r, path, "header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(path, format!("bad image magic 0x{magic:08x}")));
    }
    let count = read_u32_be(&mut r, path, "header")? as usize;
    let rows = read_u32_be(&mut r, path, "header")? as usize;
    let cols = read_u32_be(&mut r, path, "header")? as usize;
    if rows != cols {
        return Err(format_err(path, format!("non-square images {rows}x{cols} unsupported")));
    }
    if rows == 0 || count.checked_mul(rows * cols).is_none() {
        return Err(format_err(path, "dimension overflow"));
    }
    let mut images = Vec::with_capacity(count);
    let mut buf = vec![0u8; rows * cols];
    for _ in 0..count {
        read_exact(&mut r, &mut buf, path, "image payload")?;
        let data = buf.iter().map(|&b| normalization.apply(b)).collect();
        images.push(Tensor3::new(1, rows, data)?);
    }
    Ok(images)
}

/// Reads an IDX label file (magic `0x00000801`; u32 count; count bytes).
pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let magic = read_u32_be(&mut r, path, "header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(path, format!("bad label magic 0x{magic:08x}")));
    }
    let count = read_u32_be(&mut r, path, "header")? as usize;
    let mut labels = vec![0u8; count];
    read_exact(&mut r, &mut labels, path, "label payload")?;
    Ok(labels)
}

/// Reads a CSWT tensor container back into an empirical measure.
pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<EmpiricalMeasure> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| io_err(path, e))?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path, "header")?;
    if magic != CSWT_MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let version = read_u32_le(&mut r, path, "header")?;
    if version != CSWT_VERSION {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    let n = read_u32_le(&mut r, path, "header")? as usize;
    let c = read_u32_le(&mut r, path, "header")? as usize;
    let d1 = read_u32_le(&mut r, path, "header")? as usize;
    let d2 = read_u32_le(&mut r, path, "header")? as usize;
    if n == 0 {
        return Err(format_err(path, "empty measure"));
    }
    if d1 != d2 {
        return Err(format_err(path, format!("non-square supports {d1}x{d2} unsupported")));
    }
    let mut supports = Vec::with_capacity(n);
    let mut buf = vec![0u8; c * d1 * d2 * 8];
    for _ in 0..n {
        read_exact(&mut r, &mut buf, path, "payload")?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("8-byte chunk")))
            .collect();
        supports.push(Tensor3::new(c, d1, data).map_err(|e| format_err(path, e.to_string()))?);
    }
    EmpiricalMeasure::new(supports)
}

/// Writes an empirical measure as a CSWT container; the round-trip with
/// [`read_tensor_file`] is bit-exact.
pub fn write_tensor_file(path: impl AsRef<Path>, measure: &EmpiricalMeasure) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| io_err(path, e));
    emit(&CSWT_MAGIC)?;
    emit(&CSWT_VERSION.to_le_bytes())?;
    emit(&(measure.len() as u32).to_le_bytes())?;
    emit(&(measure.channels() as u32).to_le_bytes())?;
    emit(&(measure.dim() as u32).to_le_bytes())?;
    emit(&(measure.dim() as u32).to_le_bytes())?;
    for s in measure.supports() {
        for v in s.data() {
            emit(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Images paired with small integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    images: Vec<Tensor3>,
    labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn new(images: Vec<Tensor3>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let (c, d) = (images[0].channels(), images[0].dim());
        if images.iter().any(|t| t.channels() != c || t.dim() != d) {
            return Err(Error::InvalidShape("images have mixed shapes".into()));
        }
        Ok(Self { images, labels })
    }

    pub fn from_idx(
        images_path: impl AsRef<Path>,
        labels_path: impl AsRef<Path>,
        normalization: Normalization,
    ) -> Result<Self> {
        Self::new(
            read_idx_images(images_path, normalization)?,
            read_idx_labels(labels_path)?,
        )
    }

    pub fn images(&self) -> &[Tensor3] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sorted distinct labels present in the dataset.
    pub fn classes(&self) -> Vec<u8> {
        let mut classes: Vec<u8> = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        classes
    }
}

/// One class's sampled supports: the full selection plus two disjoint
/// halves of it (for same-class distance entries).
#[derive(Debug, Clone)]
pub struct ClassSplit {
    pub label: u8,
    pub full: EmpiricalMeasure,
    pub half_a: EmpiricalMeasure,
    pub half_b: EmpiricalMeasure,
}

/// Samples `per_class` images per class (deterministic given `seed`) and
/// splits each selection into two disjoint halves. The per-class shuffle
/// uses a substream keyed by the label, so splits are reproducible and
/// independent across classes.
pub fn split_by_class(
    ds: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<Vec<ClassSplit>> {
    if per_class < 2 {
        return Err(Error::InvalidArgument("per_class must be >= 2".into()));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &label) in ds.labels().iter().enumerate() {
        by_class.entry(label).or_default().push(i);
    }
    let src = RandomSource::new(seed);
    let mut splits = Vec::with_capacity(by_class.len());
    for (label, mut indices) in by_class {
        if indices.len() < per_class {
            return Err(Error::InvalidArgument(format!(
                "class {label} has {} images, need {per_class}",
                indices.len()
            )));
        }
        indices.shuffle(&mut src.substream(label as u64));
        let chosen = &indices[..per_class];
        let gather = |idx: &[usize]| {
            EmpiricalMeasure::new(idx.iter().map(|&i| ds.images()[i].clone()).collect())
        };
        let mid = per_class / 2;
        splits.push(ClassSplit {
            label,
            full: gather(chosen)?,
            half_a: gather(&chosen[..mid])?,
            half_b: gather(&chosen[mid..2 * mid])?,
        });
    }
    Ok(splits)
}

fn check_matrix(matrix: &[Vec<f64>]) -> Result<()> {
    let n = matrix.len();
    if matrix.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidShape("distance matrix must be square".into()));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("matrix entries must be finite and >= 0".into()));
    }
    Ok(())
}

/// A class-by-class distance matrix plus the estimator configuration
/// that produced it. Serializes with a stable key order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceMatrixReport {
    pub method: String,
    pub variant: Option<String>,
    pub nonlinear: bool,
    pub p: f64,
    #[serde(rename = "L")]
    pub projections: usize,
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub normalization: String,
    pub param_count: usize,
    pub runtime_ms: u64,
    pub matrix: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_dev: Option<Vec<Vec<f64>>>,
}

impl DistanceMatrixReport {
    pub fn new(
        spec: &MethodSpec,
        normalization: Normalization,
        param_count: usize,
        runtime_ms: u64,
        labels: Vec<u8>,
        matrix: Vec<Vec<f64>>,
        std_dev: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        check_matrix(&matrix)?;
        if matrix.len() != labels.len() {
            return Err(Error::InvalidShape("one label per matrix row required".into()));
        }
        if let Some(sd) = &std_dev {
            check_matrix(sd)?;
            if sd.len() != matrix.len() {
                return Err(Error::InvalidShape("std-dev shape mismatch".into()));
            }
        }
        Ok(Self {
            method: spec.method.to_string(),
            variant: spec.method.variant().map(|v| v.to_string()),
            nonlinear: spec.method.nonlinear(),
            p: spec.p,
            projections: spec.projections,
            k: spec.k,
            steps: spec.steps,
            lr: spec.learning_rate,
            seed: spec.seed,
            normalization: normalization.to_string(),
            param_count,
            runtime_ms,
            matrix,
            labels,
            std_dev,
        })
    }

    /// CSV form: header `class,<label0>,...`, one row per class, values
    /// with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class");
        for label in &self.labels {
            out.push_str(&format!(",{label}"));
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.matrix) {
            out.push_str(&label.to_string());
            for v in row {
                out.push_str(&format!(",{v:.16e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A single distance value plus the configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceResult {
    pub method: String,
    pub variant: Option<String>,
    pub nonlinear: bool,
    pub p: f64,
    #[serde(rename = "L")]
    pub projections: usize,
    pub k: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    pub param_count: usize,
    pub runtime_ms: u64,
    pub value: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distances::Method;
    use crate::rng::sample_unit_tensor;

    fn write_idx_images(path: &Path, rows: usize, pixels: &[Vec<u8>]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(pixels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        f.write_all(&(rows as u32).to_be_bytes()).unwrap();
        for img in pixels {
            f.write_all(img).unwrap();
        }
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IDX_LABELS_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_reader_matches_hand_built_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("images.idx");
        // three 2x2 images with known bytes
        let pixels = vec![
            vec![0u8, 255, 128, 1],
            vec![10, 20, 30, 40],
            vec![255, 255, 0, 0],
        ];
        write_idx_images(&img_path, 2, &pixels);
        let images = read_idx_images(&img_path, Normalization::Unit).unwrap();
        assert_eq!(images.len(), 3);
        assert_eq!(images[0].get(0, 0, 1), 1.0);
        assert_eq!(images[0].get(0, 0, 0), 0.0);
        assert_eq!(images[0].get(0, 1, 0), 128.0 / 255.0);
        let raw = read_idx_images(&img_path, Normalization::None).unwrap();
        assert_eq!(raw[1].get(0, 1, 1), 40.0);
        let signed = read_idx_images(&img_path, Normalization::Signed).unwrap();
        assert_eq!(signed[2].get(0, 0, 0), 1.0);
        assert_eq!(signed[2].get(0, 1, 0), -1.0);
    }

    #[test]
    fn idx_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.idx");
        write_idx_labels(&path, &[3, 1, 4, 1, 5]);
        assert_eq!(read_idx_labels(&path).unwrap(), vec![3, 1, 4, 1, 5]);
    }

    #[test]
    fn idx_bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.idx");
        let mut f = File::create(&path).unwrap();
        f.write_all(&0x0000_0804u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8; 12]).unwrap();
        assert!(matches!(
            read_idx_images(&path, Normalization::Unit),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn idx_truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.idx");
        // header says 10 images but payload holds 9
        let pixels: Vec<Vec<u8>> = (0..9).map(|i| vec![i as u8; 4]).collect();
        let mut f = File::create(&path).unwrap();
        f.write_all(&IDX_IMAGES_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&10u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in &pixels {
            f.write_all(img).unwrap();
        }
        drop(f);
        let err = read_idx_images(&path, Normalization::Unit).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn tensor_file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let src = RandomSource::new(61);
        for trial in 0..1000u64 {
            let mut rng = src.substream(trial);
            let n = 1 + (trial % 5) as usize;
            let supports = (0..n)
                .map(|_| {
                    let mut t = sample_unit_tensor(1 + (trial % 2) as usize, 3, &mut rng).unwrap();
                    t.scale(1e3);
                    t
                })
                .collect();
            let measure = EmpiricalMeasure::new(supports).unwrap();
            let path = dir.path().join("m.cswt");
            write_tensor_file(&path, &measure).unwrap();
            let back = read_tensor_file(&path).unwrap();
            assert_eq!(back.len(), measure.len());
            for (a, b) in measure.supports().iter().zip(back.supports()) {
                assert_eq!(a.data(), b.data());
            }
        }
    }

    #[test]
    fn tensor_file_rejects_bad_magic_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.cswt");
        std::fs::write(&path, b"XSWT\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_tensor_file(&path), Err(Error::Format { .. })));
        let empty = dir.path().join("empty.cswt");
        let mut f = File::create(&empty).unwrap();
        f.write_all(b"CSWT").unwrap();
        f.write_all(&1u32.to_le_bytes()).unwrap();
        for v in [0u32, 1, 2, 2] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        drop(f);
        assert!(read_tensor_file(&empty).is_err());
    }

    fn toy_dataset() -> LabeledDataset {
        let src = RandomSource::new(77);
        let mut rng = src.substream(0);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for label in 0u8..3 {
            for _ in 0..10 {
                images.push(sample_unit_tensor(1, 2, &mut rng).unwrap());
                labels.push(label);
            }
        }
        LabeledDataset::new(images, labels).unwrap()
    }

    #[test]
    fn split_by_class_counts_and_disjointness() {
        let ds = toy_dataset();
        let splits = split_by_class(&ds, 8, 5).unwrap();
        assert_eq!(splits.len(), 3);
        for s in &splits {
            assert_eq!(s.full.len(), 8);
            assert_eq!(s.half_a.len(), 4);
            assert_eq!(s.half_b.len(), 4);
            // halves disjoint: no support of half_a appears in half_b
            for a in s.half_a.supports() {
                assert!(s.half_b.supports().iter().all(|b| b.data() != a.data()));
            }
        }
    }

    #[test]
    fn split_by_class_is_deterministic() {
        let ds = toy_dataset();
        let a = split_by_class(&ds, 6, 9).unwrap();
        let b = split_by_class(&ds, 6, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.label, y.label);
            for (s, t) in x.full.supports().iter().zip(y.full.supports()) {
                assert_eq!(s.data(), t.data());
            }
        }
        let c = split_by_class(&ds, 6, 10).unwrap();
        let same = a.iter().zip(&c).all(|(x, y)| {
            x.full
                .supports()
                .iter()
                .zip(y.full.supports())
                .all(|(s, t)| s.data() == t.data())
        });
        assert!(!same, "different seeds should reshuffle");
    }

    #[test]
    fn split_by_class_rejects_small_classes() {
        let ds = toy_dataset();
        assert!(split_by_class(&ds, 11, 0).is_err());
        assert!(split_by_class(&ds, 1, 0).is_err());
    }

    fn sample_report() -> DistanceMatrixReport {
        let spec = MethodSpec::new(Method::Sw);
        DistanceMatrixReport::new(
            &spec,
            Normalization::Unit,
            784,
            12,
            vec![0, 1],
            vec![vec![0.0, 2.5], vec![2.5, 0.125]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn csv_layout_and_precision() {
        let csv = sample_report().to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "class,0,1");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), 2.5);
        // 17 significant digits survive a parse round-trip
        assert_eq!(lines.next().unwrap().split(',').nth(2).unwrap().parse::<f64>().unwrap(), 0.125);
    }

    #[test]
    fn json_key_order_is_stable() {
        let json = sample_report().to_json();
        let keys = [
            "\"method\"", "\"variant\"", "\"nonlinear\"", "\"p\"", "\"L\"", "\"k\"",
            "\"steps\"", "\"lr\"", "\"seed\"", "\"normalization\"", "\"param_count\"",
            "\"runtime_ms\"", "\"matrix\"",
        ];
        let mut last = 0;
        for key in keys {
            let pos = json.find(key).unwrap_or_else(|| panic!("missing {key}"));
            assert!(pos > last || last == 0, "{key} out of order");
            last = pos;
        }
        let back: DistanceMatrixReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.matrix, sample_report().matrix);
    }

    #[test]
    fn report_rejects_bad_matrices() {
        let spec = MethodSpec::new(Method::Sw);
        let bad = DistanceMatrixReport::new(
            &spec,
            Normalization::Unit,
            1,
            0,
            vec![0, 1],
            vec![vec![0.0], vec![0.0, 1.0]],
            None,
        );
        assert!(bad.is_err());
        let negative = DistanceMatrixReport::new(
            &spec,
            Normalization::Unit,
            1,
            0,
            vec![0],
            vec![vec![-1.0]],
            None,
        );
        assert!(negative.is_err());
    }
}
