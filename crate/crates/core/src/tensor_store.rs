//! Dense tensors, named parameter collections and the `MTBW` weight file.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! "MTBW" | version: u32 | tensor count: u32
//! per tensor, in lexicographic name order:
//!     name length: u16 | name: UTF-8 | rank: u8 | dims: u32 * rank | values: f32 * product(dims)
//! trailer: compact UTF-8 JSON {"group_of": {...}, "layer_of": {...}} up to end of file
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"MTBW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!("shape {shape:?} has a zero dimension")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!("shape {shape:?} implies {expected} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n]).expect("zero dimension in Tensor::zeros")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Replaces the values, keeping the shape.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.shape.clone(), data)
    }
}

/// Functional role of a parameter inside its layer unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Attention,
    Feedforward,
    Embedding,
    Other,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Group::Attention => "attention",
            Group::Feedforward => "feedforward",
            Group::Embedding => "embedding",
            Group::Other => "other",
        };
        f.write_str(s)
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attention" => Ok(Group::Attention),
            "feedforward" => Ok(Group::Feedforward),
            "embedding" => Ok(Group::Embedding),
            "other" => Ok(Group::Other),
            _ => Err(Error::InvalidArgument(format!("unknown group '{s}'"))),
        }
    }
}

/// Named parameters with their layer-unit and functional-group tags.
///
/// Every parameter carries both tags; iteration is lexicographic by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    params: BTreeMap<String, Tensor>,
    layer_of: BTreeMap<String, String>,
    group_of: BTreeMap<String, Group>,
}

#[derive(Serialize, Deserialize)]
struct Trailer {
    group_of: BTreeMap<String, Group>,
    layer_of: BTreeMap<String, String>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from parts, checking that every parameter is tagged and
    /// that no tag refers to a missing parameter.
    pub fn from_parts(
        params: BTreeMap<String, Tensor>,
        layer_of: BTreeMap<String, String>,
        group_of: BTreeMap<String, Group>,
    ) -> Result<Self> {
        for name in params.keys() {
            if !layer_of.contains_key(name) || !group_of.contains_key(name) {
                return Err(Error::MissingGroup(name.clone()));
            }
        }
        if let Some(extra) = layer_of.keys().chain(group_of.keys()).find(|n| !params.contains_key(*n)) {
            return Err(Error::InvalidArgument(format!("tag for unknown parameter '{extra}'")));
        }
        Ok(Self { params, layer_of, group_of })
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, layer: impl Into<String>, group: Group) {
        let name = name.into();
        self.layer_of.insert(name.clone(), layer.into());
        self.group_of.insert(name.clone(), group);
        self.params.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn layer_of(&self, name: &str) -> Option<&str> {
        self.layer_of.get(name).map(String::as_str)
    }

    pub fn group_of(&self, name: &str) -> Option<Group> {
        self.group_of.get(name).copied()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn layer_map(&self) -> &BTreeMap<String, String> {
        &self.layer_of
    }

    pub fn group_map(&self) -> &BTreeMap<String, Group> {
        &self.group_of
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Same names, tags and shapes, with new tensor values.
    pub fn map_tensors<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(&str, &Tensor) -> Result<Tensor>,
    {
        let mut params = BTreeMap::new();
        for (name, t) in &self.params {
            let out = f(name, t)?;
            if out.shape() != t.shape() {
                return Err(Error::InvalidTensor(format!("shape of '{name}' changed")));
            }
            params.insert(name.clone(), out);
        }
        Ok(Self { params, layer_of: self.layer_of.clone(), group_of: self.group_of.clone() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.total_values() * 4);
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            write_header(&mut out, name, t.shape());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.trailer_json().into_bytes());
        out
    }

    pub(crate) fn trailer_json(&self) -> String {
        trailer_json(&self.layer_of, &self.group_of)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(WEIGHT_MAGIC)?;
        let count = r.u32(None)? as usize;
        let mut params = BTreeMap::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let (name, shape) = r.header(prev.as_deref(), 4).map_err(|e| misaligned(prev.as_deref(), e))?;
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let v = r.f32(Some(&name))?;
                if !v.is_finite() {
                    return Err(Error::format(Some(&name), "non-finite value"));
                }
                data.push(v);
            }
            let t = Tensor::new(shape, data).map_err(|e| Error::format(Some(&name), e.to_string()))?;
            params.insert(name.clone(), t);
            prev = Some(name);
        }
        let trailer = r.trailer().map_err(|e| misaligned(prev.as_deref(), e))?;
        let ws = Self::from_parts(params, trailer.layer_of, trailer.group_of)
            .map_err(|e| Error::format(None, e.to_string()))?;
        Ok(ws)
    }
}

/// A failure right after a tensor's payload usually means that tensor's
/// declared shape does not match the bytes written for it.
pub(crate) fn misaligned(prev: Option<&str>, e: Error) -> Error {
    match (prev, e) {
        (Some(p), Error::Format { tensor: None, msg }) => {
            Error::format(Some(p), format!("declared element count does not match payload ({msg})"))
        }
        (_, e) => e,
    }
}

pub(crate) fn trailer_json(layer_of: &BTreeMap<String, String>, group_of: &BTreeMap<String, Group>) -> String {
    let trailer = Trailer { group_of: group_of.clone(), layer_of: layer_of.clone() };
    serde_json::to_string(&trailer).expect("trailer serialization")
}

pub(crate) fn write_header(out: &mut Vec<u8>, name: &str, shape: &[usize]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
}

/// Cursor over a weight-format byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, tensor: Option<&str>) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(tensor, format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4, None)?;
        if m != magic {
            return Err(Error::format(None, format!("bad magic {m:?}")));
        }
        let version = self.u32(None)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(None, format!("unsupported version {version}")));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, tensor: Option<&str>) -> Result<u8> {
        Ok(self.take(1, tensor)?[0])
    }

    pub(crate) fn u16(&mut self, tensor: Option<&str>) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, tensor)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, tensor: Option<&str>) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, tensor)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self, tensor: Option<&str>) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4, tensor)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self, tensor: Option<&str>) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, tensor)?.try_into().unwrap()))
    }

    /// Reads a name/rank/dims header, enforcing strictly increasing names and
    /// that `elem_size`-byte payload of the declared shape can still fit.
    pub(crate) fn header(&mut self, prev: Option<&str>, elem_size: usize) -> Result<(String, Vec<usize>)> {
        let len = self.u16(None)? as usize;
        let raw = self.take(len, None)?;
        let name = std::str::from_utf8(raw).map_err(|_| Error::format(None, "tensor name is not UTF-8"))?.to_owned();
        if let Some(p) = prev {
            if p >= name.as_str() {
                return Err(Error::format(Some(&name), "tensors not in strictly lexicographic order"));
            }
        }
        let rank = self.u8(Some(&name))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = self.u32(Some(&name))? as usize;
            if d == 0 {
                return Err(Error::format(Some(&name), "zero dimension"));
            }
            shape.push(d);
        }
        // Element count must fit in what is left of the buffer.
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        match n {
            Some(n) if n.checked_mul(elem_size).is_some_and(|b| b <= self.bytes.len() - self.pos) => {}
            _ => return Err(Error::format(Some(&name), format!("declared shape {shape:?} exceeds remaining payload"))),
        }
        Ok((name, shape))
    }

    fn trailer(&mut self) -> Result<Trailer> {
        let rest = &self.bytes[self.pos..];
        let text = std::str::from_utf8(rest).map_err(|_| Error::format(None, "trailer is not UTF-8"))?;
        let trailer: Trailer =
            serde_json::from_str(text).map_err(|e| Error::format(None, format!("trailer JSON: {e}")))?;
        // Only the compact encoding is accepted so that load/save is byte-exact.
        if serde_json::to_string(&trailer).expect("trailer serialization") != text {
            return Err(Error::format(None, "trailer JSON is not in canonical compact form"));
        }
        self.pos = self.bytes.len();
        Ok(trailer)
    }
}

pub(crate) fn parse_trailer_maps(r: &mut Reader<'_>) -> Result<(BTreeMap<String, String>, BTreeMap<String, Group>)> {
    let t = r.trailer()?;
    Ok((t.layer_of, t.group_of))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    WeightSet::from_bytes(&bytes)
}

pub fn save_weights(ws: &WeightSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ws.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Fraction of values that are exactly zero.
pub fn sparsity(ws: &WeightSet) -> Result<f64> {
    let total = ws.total_values();
    if total == 0 {
        return Err(Error::Empty("sparsity of an empty weight set".into()));
    }
    let zeros: usize = ws.params.values().map(|t| t.data.iter().filter(|&&v| v == 0.0).count()).sum();
    Ok(zeros as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, shape: Vec<usize>, data: Vec<f32>) -> WeightSet {
        let mut ws = WeightSet::new();
        ws.insert(name, Tensor::new(shape, data).unwrap(), "L0", Group::Other);
        ws
    }

    #[test]
    fn decode_single_tensor() {
        let ws = one("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let back = WeightSet::from_bytes(&ws.to_bytes()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get("w").unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(back.layer_of("w"), Some("L0"));
    }

    #[test]
    fn empty_set_has_valid_header() {
        let bytes = WeightSet::new().to_bytes();
        assert_eq!(&bytes[..4], b"MTBW");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 0);
        assert!(WeightSet::from_bytes(&bytes).unwrap().is_empty());
    }

    #[test]
    fn tensors_written_in_name_order() {
        let mut ws = WeightSet::new();
        ws.insert("zeta", Tensor::new(vec![1], vec![1.0]).unwrap(), "a", Group::Other);
        ws.insert("alpha", Tensor::new(vec![1], vec![2.0]).unwrap(), "a", Group::Other);
        let bytes = ws.to_bytes();
        let first_len = u16::from_le_bytes(bytes[12..14].try_into().unwrap()) as usize;
        assert_eq!(&bytes[14..14 + first_len], b"alpha");
    }

    #[test]
    fn payload_shorter_than_declared_is_rejected() {
        let ws = one("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let mut bytes = ws.to_bytes();
        // Bump the first dim from 2 to 3: the declared count no longer matches.
        let dim_at = 12 + 2 + 1 + 1;
        bytes[dim_at] = 3;
        let err = WeightSet::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
    }

    #[test]
    fn non_finite_value_is_rejected_with_name() {
        let ws = one("bad", vec![1], vec![1.0]);
        let mut bytes = ws.to_bytes();
        let val_at = 12 + 2 + 3 + 1 + 4;
        bytes[val_at..val_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = WeightSet::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("'bad'"), "{err}");
    }

    #[test]
    fn bad_magic_and_trailer() {
        let mut bytes = WeightSet::new().to_bytes();
        bytes[0] = b'X';
        assert!(WeightSet::from_bytes(&bytes).is_err());
        let mut bytes = WeightSet::new().to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(WeightSet::from_bytes(&bytes).is_err());
    }

    #[test]
    fn untagged_parameter_is_rejected() {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::zeros(vec![2]));
        let err = WeightSet::from_parts(params, BTreeMap::new(), BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingGroup(_)));
    }

    #[test]
    fn sparsity_counts() {
        assert_eq!(sparsity(&one("w", vec![3], vec![0.0; 3])).unwrap(), 1.0);
        assert_eq!(sparsity(&one("w", vec![2], vec![1.0, -2.0])).unwrap(), 0.0);
        assert_eq!(sparsity(&one("w", vec![4], vec![0.0, 1.0, 0.0, 3.0])).unwrap(), 0.5);
        assert!(sparsity(&WeightSet::new()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mtbw");
        let ws = one("w", vec![2, 3], vec![0.5, -1.0, 2.0, 0.0, -0.0, 7.25]);
        save_weights(&ws, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back, ws);
        assert_eq!(back.to_bytes(), bytes);
    }
}
