//! Binary tensor container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 4            | magic `GBTD`                             |
//! | 4            | format version (`u32`, currently 1)      |
//! | 1            | element type (`0` = `f64`)               |
//! | 4            | order `d` (`u32`)                        |
//! | 8 d          | dimensions (`u64` each)                  |
//! | 8 prod(dims) | payload, column-major                    |
//! | 8 + m        | optional: metadata length `m`, UTF-8 JSON |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::tensor::DenseTensor;

pub const MAGIC: &[u8; 4] = b"GBTD";
pub const VERSION: u32 = 1;
pub const ELEMENT_F64: u8 = 0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContainerMetadata {
    /// Class label per instance along the last mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_names: Option<Vec<String>>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn encode_container(
    tensor: &DenseTensor,
    metadata: Option<&ContainerMetadata>,
) -> Result<Vec<u8>, IoError> {
    let d = tensor.order();
    let mut out = Vec::with_capacity(21 + 8 * d + 8 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ELEMENT_F64);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for &n in tensor.dims() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(meta) = metadata {
        let json = serde_json::to_vec(meta)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn header<const N: usize>(&mut self, what: &str) -> Result<[u8; N], IoError> {
        self.take(N)
            .map(|s| s.try_into().expect("length checked"))
            .ok_or_else(|| IoError::CorruptHeader(format!("file ends inside the {what}")))
    }
}

pub fn decode_container(
    bytes: &[u8],
) -> Result<(DenseTensor, Option<ContainerMetadata>), IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4) != Some(MAGIC.as_slice()) {
        return Err(IoError::NotContainer);
    }
    let version = u32::from_le_bytes(r.header("version")?);
    if version != VERSION {
        return Err(IoError::UnsupportedVersion(version));
    }
    let [elem] = r.header::<1>("element type")?;
    if elem != ELEMENT_F64 {
        return Err(IoError::UnsupportedElementType(elem));
    }
    let d = u32::from_le_bytes(r.header("order")?) as usize;
    if d == 0 {
        return Err(IoError::CorruptHeader("order 0".into()));
    }
    let mut dims = Vec::with_capacity(d.min(64));
    for _ in 0..d {
        let n = u64::from_le_bytes(r.header("dimensions")?);
        if n == 0 {
            return Err(IoError::CorruptHeader("zero dimension".into()));
        }
        dims.push(usize::try_from(n).map_err(|_| IoError::CorruptHeader(format!("dimension {n}")))?);
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| IoError::CorruptHeader(format!("dimensions {dims:?} overflow")))?;
    let payload = r.take(len).ok_or(IoError::TruncatedPayload {
        expected: len,
        found: bytes.len() - r.pos,
    })?;
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let tensor = DenseTensor::new(dims, data).map_err(|e| IoError::CorruptHeader(e.to_string()))?;
    if r.pos == bytes.len() {
        return Ok((tensor, None));
    }
    let m = u64::from_le_bytes(
        r.take(8)
            .ok_or_else(|| IoError::CorruptMetadata("incomplete length prefix".into()))?
            .try_into()
            .expect("length checked"),
    );
    let json = usize::try_from(m)
        .ok()
        .and_then(|m| r.take(m))
        .ok_or_else(|| IoError::CorruptMetadata(format!("metadata of {m} bytes is truncated")))?;
    if r.pos != bytes.len() {
        return Err(IoError::CorruptMetadata("trailing bytes after metadata".into()));
    }
    let meta: ContainerMetadata =
        serde_json::from_slice(json).map_err(|e| IoError::CorruptMetadata(e.to_string()))?;
    Ok((tensor, Some(meta)))
}

pub fn save_container(
    path: impl AsRef<Path>,
    tensor: &DenseTensor,
    metadata: Option<&ContainerMetadata>,
) -> Result<(), IoError> {
    let bytes = encode_container(tensor, metadata)?;
    fs::write(path.as_ref(), bytes).map_err(|e| IoError::at(path.as_ref(), e))
}

pub fn load_container(
    path: impl AsRef<Path>,
) -> Result<(DenseTensor, Option<ContainerMetadata>), IoError> {
    let bytes = fs::read(path.as_ref()).map_err(|e| IoError::at(path.as_ref(), e))?;
    decode_container(&bytes)
}

/// `labels.json`: container file names (relative to the manifest) mapped to
/// class names, plus free-form provenance fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelsManifest {
    pub labels: BTreeMap<String, String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// Instances with class indices; classes are numbered in sorted name order.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub instances: Vec<DenseTensor>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub sources: Vec<PathBuf>,
}

impl LabeledDataset {
    fn from_named(instances: Vec<DenseTensor>, names: Vec<String>, sources: Vec<PathBuf>) -> Self {
        let mut class_names = names.clone();
        class_names.sort();
        class_names.dedup();
        let labels = names
            .iter()
            .map(|n| class_names.binary_search(n).expect("collected above"))
            .collect();
        Self {
            instances,
            labels,
            class_names,
            sources,
        }
    }
}

pub fn load_labels_manifest(path: impl AsRef<Path>) -> Result<LabelsManifest, IoError> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| IoError::at(path.as_ref(), e))?;
    serde_json::from_str(&text).map_err(|e| IoError::CorruptMetadata(e.to_string()))
}

/// Loads either a labels manifest (`.json`) listing one container per
/// instance, or a single container whose last mode indexes instances and
/// whose metadata carries one label per instance.
pub fn load_labeled(path: impl AsRef<Path>) -> Result<LabeledDataset, IoError> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        let manifest = load_labels_manifest(path)?;
        if manifest.labels.is_empty() {
            return Err(IoError::MissingLabels("manifest lists no containers".into()));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let mut instances = Vec::new();
        let mut names = Vec::new();
        let mut sources = Vec::new();
        for (file, label) in &manifest.labels {
            let p = base.join(file);
            let (t, _) = load_container(&p)?;
            if let Some(first) = instances.first().map(|f: &DenseTensor| f.dims().to_vec()) {
                if t.dims() != first.as_slice() {
                    return Err(IoError::ShapeMismatch(format!(
                        "{} has shape {:?}, expected {:?}",
                        p.display(),
                        t.dims(),
                        first
                    )));
                }
            }
            instances.push(t);
            names.push(label.clone());
            sources.push(p);
        }
        return Ok(LabeledDataset::from_named(instances, names, sources));
    }
    let (t, meta) = load_container(path)?;
    let labels = meta
        .and_then(|m| m.labels)
        .ok_or_else(|| IoError::MissingLabels(format!("{} has no labels", path.display())))?;
    let instances = split_last_mode(&t);
    if labels.len() != instances.len() {
        return Err(IoError::MissingLabels(format!(
            "{} labels for {} instances",
            labels.len(),
            instances.len()
        )));
    }
    let sources = vec![path.to_path_buf(); instances.len()];
    Ok(LabeledDataset::from_named(instances, labels, sources))
}

/// Slices along the last mode. An order-1 tensor yields scalars.
pub fn split_last_mode(t: &DenseTensor) -> Vec<DenseTensor> {
    let d = t.order();
    let n = t.dims()[d - 1];
    let len = t.len() / n;
    let dims: Vec<usize> = if d > 1 { t.dims()[..d - 1].to_vec() } else { vec![1] };
    t.data()
        .chunks(len)
        .map(|c| DenseTensor::new(dims.clone(), c.to_vec()).expect("slice shape"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_packed_header() {
        let t = DenseTensor::new(vec![2, 1], vec![1.5, -2.0]).unwrap();
        let b = encode_container(&t, None).unwrap();
        let mut expected = b"GBTD".to_vec();
        expected.extend_from_slice(&[1, 0, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0]);
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn distinct_errors() {
        let t = DenseTensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = encode_container(&t, None).unwrap();
        assert!(matches!(decode_container(&b[..b.len() - 3]), Err(IoError::TruncatedPayload { .. })));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_container(&bad), Err(IoError::NotContainer)));
        let mut v2 = b.clone();
        v2[4] = 2;
        assert!(matches!(decode_container(&v2), Err(IoError::UnsupportedVersion(2))));
        assert!(matches!(decode_container(&b[..10]), Err(IoError::CorruptHeader(_))));
        let mut junk = b.clone();
        junk.extend_from_slice(&[1, 2, 3]);
        assert!(matches!(decode_container(&junk), Err(IoError::CorruptMetadata(_))));
    }

    #[test]
    fn metadata_round_trip() {
        let t = DenseTensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let mut meta = ContainerMetadata {
            labels: Some(vec!["a".into(), "b".into()]),
            ..Default::default()
        };
        meta.extra.insert("scaling".into(), serde_json::json!("x/255"));
        let b = encode_container(&t, Some(&meta)).unwrap();
        let (t2, m2) = decode_container(&b).unwrap();
        assert_eq!(t2, t);
        assert_eq!(m2.unwrap(), meta);
    }
}
