//! Magnitude pruning and int8 post-training quantization.
//!
//! Pruning zeroes the `round(p * n)` smallest-magnitude values inside each
//! pool, where the pooling strategy decides which parameters compete with
//! each other. Quantization maps weights to symmetric per-output-channel int8
//! and activation sites to asymmetric per-tensor int8; both pick their clip
//! range by an exhaustive MSE search over a uniform candidate grid.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_store::{self, Group, Reader, Tensor, WeightSet};

pub const QUANT_MAGIC: &[u8; 4] = b"MTBQ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneStrategy {
    /// One pool per layer unit; embeddings are their own units.
    TransformerLayer,
    /// One pool per tensor.
    PerModule,
    /// One pool per (layer unit, functional group).
    SeparateAttnFfn,
}

impl PruneStrategy {
    pub const ALL: [PruneStrategy; 3] =
        [PruneStrategy::TransformerLayer, PruneStrategy::PerModule, PruneStrategy::SeparateAttnFfn];

    pub fn as_str(self) -> &'static str {
        match self {
            PruneStrategy::TransformerLayer => "transformer-layer",
            PruneStrategy::PerModule => "per-module",
            PruneStrategy::SeparateAttnFfn => "separate-attn-ffn",
        }
    }

    /// Pool identifier of one parameter under this strategy.
    pub fn pool_key(self, ws: &WeightSet, name: &str) -> Result<String> {
        let layer = ws.layer_of(name).ok_or_else(|| Error::MissingGroup(name.to_owned()))?;
        let group = ws.group_of(name).ok_or_else(|| Error::MissingGroup(name.to_owned()))?;
        Ok(match self {
            PruneStrategy::TransformerLayer => layer.to_owned(),
            PruneStrategy::PerModule => name.to_owned(),
            PruneStrategy::SeparateAttnFfn => format!("{layer}/{group}"),
        })
    }
}

impl fmt::Display for PruneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PruneStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PruneStrategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown prune strategy '{s}'")))
    }
}

/// Groups parameter names into pools, in deterministic order.
pub fn prune_pools(ws: &WeightSet, strategy: PruneStrategy) -> Result<BTreeMap<String, Vec<String>>> {
    let mut pools: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (name, _) in ws.iter() {
        pools.entry(strategy.pool_key(ws, name)?).or_default().push(name.to_owned());
    }
    Ok(pools)
}

/// Number of values pruned from a pool of `n` at ratio `p`, rounding half away from zero.
pub fn prune_count(p: f64, n: usize) -> usize {
    ((p * n as f64).round() as usize).min(n)
}

pub fn magnitude_prune(ws: &WeightSet, p: f64, strategy: PruneStrategy) -> Result<WeightSet> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("sparsity ratio {p} outside [0, 1]")));
    }
    let pools = prune_pools(ws, strategy)?;

    // (tensor name, flat index) pairs to zero, computed per pool in parallel.
    let doomed: Vec<Vec<(String, usize)>> = pools
        .into_par_iter()
        .map(|(_, names)| {
            let mut entries: Vec<(f32, usize, usize)> = Vec::new();
            for (ti, name) in names.iter().enumerate() {
                let t = ws.get(name).expect("pool names come from the set");
                entries.extend(t.data().iter().enumerate().map(|(i, v)| (v.abs(), ti, i)));
            }
            let k = prune_count(p, entries.len());
            if k == 0 {
                return Vec::new();
            }
            // Ties in magnitude fall back to pool order: tensor name, then flat index.
            let cmp = |a: &(f32, usize, usize), b: &(f32, usize, usize)| -> Ordering {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            };
            if k < entries.len() {
                entries.select_nth_unstable_by(k - 1, cmp);
            }
            entries[..k].iter().map(|&(_, ti, i)| (names[ti].clone(), i)).collect()
        })
        .collect();

    let mut zero_at: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (name, i) in doomed.iter().flatten() {
        zero_at.entry(name.as_str()).or_default().push(*i);
    }
    ws.map_tensors(|name, t| {
        let mut data = t.data().to_vec();
        if let Some(idx) = zero_at.get(name) {
            for &i in idx {
                data[i] = 0.0;
            }
        }
        t.with_data(data)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    /// Number of candidate clip thresholds searched per channel or site.
    pub calib_grid: usize,
}

impl QuantSpec {
    pub const BITS: u32 = 8;

    pub fn validate(&self) -> Result<()> {
        if self.calib_grid < 2 {
            return Err(Error::InvalidArgument(format!("calib_grid must be at least 2, got {}", self.calib_grid)));
        }
        Ok(())
    }
}

impl Default for QuantSpec {
    fn default() -> Self {
        Self { calib_grid: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantScheme {
    SymmetricPerChannel,
    AsymmetricPerTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: Vec<usize>,
    pub q: Vec<i8>,
    pub scales: Vec<f32>,
    pub zero_points: Vec<i32>,
    pub scheme: QuantScheme,
}

impl QuantizedTensor {
    fn channel_len(&self) -> usize {
        let n = self.q.len();
        n / self.scales.len().max(1)
    }

    fn validate(&self, name: &str) -> Result<()> {
        let n: usize = self.shape.iter().product();
        let bad = |msg: String| Err(Error::format(Some(name), msg));
        if n != self.q.len() {
            return bad(format!("{} values for shape {:?}", self.q.len(), self.shape));
        }
        if self.scales.len() != self.zero_points.len() || self.scales.is_empty() {
            return bad("scale/zero-point count mismatch".into());
        }
        let expected = match self.scheme {
            QuantScheme::SymmetricPerChannel => self.shape.first().copied().unwrap_or(1),
            QuantScheme::AsymmetricPerTensor => 1,
        };
        if self.scales.len() != expected {
            return bad(format!("expected {expected} scales, got {}", self.scales.len()));
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad("non-positive or non-finite scale".into());
        }
        if self.scheme == QuantScheme::SymmetricPerChannel && self.zero_points.iter().any(|&z| z != 0) {
            return bad("symmetric tensor with non-zero zero point".into());
        }
        Ok(())
    }
}

/// Outcome of the weight-channel threshold search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelCalibration {
    /// 1-based grid index of the chosen candidate; 0 for an all-zero channel.
    pub candidate: usize,
    pub threshold: f64,
    pub scale: f32,
    pub mse: f64,
}

/// Quantization parameters of one activation site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationQuant {
    pub scale: f32,
    pub zero_point: i32,
}

impl ActivationQuant {
    pub fn quantize(&self, x: f32) -> i8 {
        let q = (x as f64 / self.scale as f64).round_ties_even() + self.zero_point as f64;
        q.clamp(-128.0, 127.0) as i8
    }

    pub fn dequantize(&self, q: i8) -> f32 {
        self.scale * (q as i32 - self.zero_point) as f32
    }

    /// Quantize-dequantize in place.
    pub fn fake_quant(&self, xs: &mut [f32]) {
        for x in xs {
            *x = self.dequantize(self.quantize(*x));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationCalibration {
    pub candidate: usize,
    pub params: ActivationQuant,
    pub mse: f64,
}

pub(crate) fn quantize_symmetric(v: f32, scale: f32) -> i8 {
    (v as f64 / scale as f64).round_ties_even().clamp(-127.0, 127.0) as i8
}

/// Squared reconstruction error of a channel at one symmetric scale.
pub fn symmetric_mse(values: &[f32], scale: f32) -> f64 {
    values
        .iter()
        .map(|&v| {
            let r = quantize_symmetric(v, scale) as f64 * scale as f64;
            let d = v as f64 - r;
            d * d
        })
        .sum()
}

/// Candidate `k` (1-based) of the weight grid: threshold `k/grid * max|w|`.
pub fn symmetric_candidate(max_abs: f64, k: usize, grid: usize) -> (f64, f32) {
    let t = max_abs * k as f64 / grid as f64;
    (t, (t / 127.0) as f32)
}

/// Searches the clip threshold minimizing reconstruction MSE for one output channel.
///
/// The first minimum wins, so ties go to the smaller threshold.
pub fn calibrate_channel(values: &[f32], grid: usize) -> ChannelCalibration {
    let max_abs = values.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    if max_abs == 0.0 {
        return ChannelCalibration { candidate: 0, threshold: 0.0, scale: 1.0, mse: 0.0 };
    }
    let mut best: Option<ChannelCalibration> = None;
    for k in 1..=grid {
        let (threshold, scale) = symmetric_candidate(max_abs, k, grid);
        if !(scale > 0.0 && scale.is_finite()) {
            continue;
        }
        let mse = symmetric_mse(values, scale);
        if best.is_none_or(|b| mse < b.mse) {
            best = Some(ChannelCalibration { candidate: k, threshold, scale, mse });
        }
    }
    // Only reachable when every candidate scale underflows f32.
    best.unwrap_or(ChannelCalibration { candidate: 0, threshold: 0.0, scale: 1.0, mse: 0.0 })
}

/// Asymmetric parameters for candidate `k`: the observed range, widened to
/// include zero, shrunk by `k/grid`.
pub fn asymmetric_candidate(lo: f64, hi: f64, k: usize, grid: usize) -> ActivationQuant {
    let f = k as f64 / grid as f64;
    let (lo, hi) = (lo * f, hi * f);
    let scale = ((hi - lo) / 255.0) as f32;
    let zero_point = (-128.0 - lo / scale as f64).round_ties_even().clamp(-128.0, 127.0) as i32;
    ActivationQuant { scale, zero_point }
}

pub fn asymmetric_mse(values: &[f32], params: &ActivationQuant) -> f64 {
    values
        .iter()
        .map(|&v| {
            let q = params.quantize(v) as i32;
            let r = (q - params.zero_point) as f64 * params.scale as f64;
            let d = v as f64 - r;
            d * d
        })
        .sum()
}

pub fn calibrate_activation(values: &[f32], grid: usize) -> ActivationCalibration {
    let lo = values.iter().fold(0.0f64, |m, &v| m.min(v as f64));
    let hi = values.iter().fold(0.0f64, |m, &v| m.max(v as f64));
    let fallback =
        ActivationCalibration { candidate: 0, params: ActivationQuant { scale: 1.0, zero_point: 0 }, mse: 0.0 };
    if hi == lo {
        return fallback;
    }
    let mut best: Option<ActivationCalibration> = None;
    for k in 1..=grid {
        let params = asymmetric_candidate(lo, hi, k, grid);
        if !(params.scale > 0.0 && params.scale.is_finite()) {
            continue;
        }
        let mse = asymmetric_mse(values, &params);
        if best.is_none_or(|b| mse < b.mse) {
            best = Some(ActivationCalibration { candidate: k, params, mse });
        }
    }
    best.unwrap_or(fallback)
}

/// Quantizes one weight tensor symmetrically per output channel (first dimension).
pub fn quantize_weight(t: &Tensor, spec: &QuantSpec) -> Result<QuantizedTensor> {
    spec.validate()?;
    let Some(&channels) = t.shape().first() else {
        return Err(Error::InvalidTensor("cannot quantize a rank-0 tensor per channel".into()));
    };
    let chunk = t.len() / channels;
    let per_channel: Vec<(f32, Vec<i8>)> = t
        .data()
        .par_chunks(chunk)
        .map(|c| {
            let cal = calibrate_channel(c, spec.calib_grid);
            (cal.scale, c.iter().map(|&v| quantize_symmetric(v, cal.scale)).collect())
        })
        .collect();
    let mut scales = Vec::with_capacity(channels);
    let mut q = Vec::with_capacity(t.len());
    for (s, qs) in per_channel {
        scales.push(s);
        q.extend(qs);
    }
    Ok(QuantizedTensor {
        shape: t.shape().to_vec(),
        q,
        zero_points: vec![0; scales.len()],
        scales,
        scheme: QuantScheme::SymmetricPerChannel,
    })
}

pub fn dequantize(qt: &QuantizedTensor) -> Tensor {
    let per = qt.channel_len().max(1);
    let data =
        qt.q.iter()
            .enumerate()
            .map(|(i, &q)| {
                let c = (i / per).min(qt.scales.len() - 1);
                qt.scales[c] * (q as i32 - qt.zero_points[c]) as f32
            })
            .collect();
    Tensor::new(qt.shape.clone(), data).expect("quantized tensor shape is consistent")
}

/// Quantized weights plus calibrated activation sites.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub weights: BTreeMap<String, QuantizedTensor>,
    pub activations: BTreeMap<String, ActivationQuant>,
    pub layer_of: BTreeMap<String, String>,
    pub group_of: BTreeMap<String, Group>,
}

/// Quantizes every weight tensor and calibrates every declared activation site.
///
/// `calib` maps a site name to its calibration batches; a site with no batches is an error.
pub fn quantize(ws: &WeightSet, calib: &BTreeMap<String, Vec<Tensor>>, spec: &QuantSpec) -> Result<QuantizedModel> {
    spec.validate()?;
    let mut weights = BTreeMap::new();
    for (name, t) in ws.iter() {
        let qt = quantize_weight(t, spec).map_err(|e| match e {
            Error::InvalidTensor(msg) => Error::InvalidTensor(format!("'{name}': {msg}")),
            other => other,
        })?;
        weights.insert(name.to_owned(), qt);
    }
    let mut activations = BTreeMap::new();
    for (site, batches) in calib {
        if batches.is_empty() {
            return Err(Error::Empty(format!("no calibration batches for activation site '{site}'")));
        }
        let values: Vec<f32> = batches.iter().flat_map(|b| b.data().iter().copied()).collect();
        activations.insert(site.clone(), calibrate_activation(&values, spec.calib_grid).params);
    }
    Ok(QuantizedModel { weights, activations, layer_of: ws.layer_map().clone(), group_of: ws.group_map().clone() })
}

/// Groups calibration tensors by site: each tensor's layer tag names its site.
pub fn calibration_sites(acts: &WeightSet) -> BTreeMap<String, Vec<Tensor>> {
    let mut sites: BTreeMap<String, Vec<Tensor>> = BTreeMap::new();
    for (name, t) in acts.iter() {
        let site = acts.layer_of(name).unwrap_or(name);
        sites.entry(site.to_owned()).or_default().push(t.clone());
    }
    sites
}

impl QuantizedModel {
    /// Float weights reconstructed from the int8 representation.
    pub fn dequantize_weights(&self) -> Result<WeightSet> {
        let params = self.weights.iter().map(|(n, qt)| (n.clone(), dequantize(qt))).collect();
        WeightSet::from_parts(params, self.layer_of.clone(), self.group_of.clone())
    }

    /// Encodes as an `MTBQ` file.
    ///
    /// ```text
    /// "MTBQ" | version: u32 | tensor count: u32
    /// per tensor: header as MTBW | scheme: u8 | n: u32 | scales: f32 * n | zero points: i32 * n | q: i8 * product(dims)
    /// site count: u32 | per site: name length: u16 | name | scale: f32 | zero point: i32
    /// trailer: same JSON as MTBW
    /// ```
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(QUANT_MAGIC);
        out.extend_from_slice(&tensor_store::FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u32).to_le_bytes());
        for (name, qt) in &self.weights {
            tensor_store::write_header(&mut out, name, &qt.shape);
            out.push(match qt.scheme {
                QuantScheme::SymmetricPerChannel => 0,
                QuantScheme::AsymmetricPerTensor => 1,
            });
            out.extend_from_slice(&(qt.scales.len() as u32).to_le_bytes());
            for s in &qt.scales {
                out.extend_from_slice(&s.to_le_bytes());
            }
            for z in &qt.zero_points {
                out.extend_from_slice(&z.to_le_bytes());
            }
            out.extend(qt.q.iter().map(|&q| q as u8));
        }
        out.extend_from_slice(&(self.activations.len() as u32).to_le_bytes());
        for (site, a) in &self.activations {
            out.extend_from_slice(&(site.len() as u16).to_le_bytes());
            out.extend_from_slice(site.as_bytes());
            out.extend_from_slice(&a.scale.to_le_bytes());
            out.extend_from_slice(&a.zero_point.to_le_bytes());
        }
        out.extend_from_slice(tensor_store::trailer_json(&self.layer_of, &self.group_of).as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(QUANT_MAGIC)?;
        let count = r.u32(None)? as usize;
        let mut weights = BTreeMap::new();
        let mut prev: Option<String> = None;
        for _ in 0..count {
            let (name, shape) =
                r.header(prev.as_deref(), 1).map_err(|e| tensor_store::misaligned(prev.as_deref(), e))?;
            let nm = Some(name.as_str());
            let scheme = match r.u8(nm)? {
                0 => QuantScheme::SymmetricPerChannel,
                1 => QuantScheme::AsymmetricPerTensor,
                s => return Err(Error::format(nm, format!("unknown scheme {s}"))),
            };
            let n = r.u32(nm)? as usize;
            if n.saturating_mul(8) > bytes.len() {
                return Err(Error::format(nm, "scale count exceeds file size"));
            }
            let scales = (0..n).map(|_| r.f32(nm)).collect::<Result<Vec<_>>>()?;
            let zero_points = (0..n).map(|_| r.i32(nm)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let q = r.take(len, nm)?.iter().map(|&b| b as i8).collect();
            let qt = QuantizedTensor { shape, q, scales, zero_points, scheme };
            qt.validate(&name)?;
            weights.insert(name.clone(), qt);
            prev = Some(name);
        }
        let sites = r.u32(None)? as usize;
        let mut activations = BTreeMap::new();
        for _ in 0..sites {
            let len = r.u16(None)? as usize;
            let site = std::str::from_utf8(r.take(len, None)?)
                .map_err(|_| Error::format(None, "site name is not UTF-8"))?
                .to_owned();
            let scale = r.f32(Some(&site))?;
            let zero_point = r.i32(Some(&site))?;
            if !(scale.is_finite() && scale > 0.0) {
                return Err(Error::format(Some(&site), "non-positive activation scale"));
            }
            activations.insert(site, ActivationQuant { scale, zero_point });
        }
        let (layer_of, group_of) = tensor_store::parse_trailer_maps(&mut r)?;
        let model = Self { weights, activations, layer_of, group_of };
        // Tag consistency is the same invariant as for float weights.
        model.dequantize_weights().map_err(|e| Error::format(None, e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// A compression method as named in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressionMethod {
    Baseline,
    Pruned(f64),
    QuantizedInt8,
}

impl CompressionMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CompressionMethod::Pruned(p) if !(0.0..=1.0).contains(&p) => {
                Err(Error::InvalidArgument(format!("pruning ratio {p} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            CompressionMethod::Baseline => "baseline".into(),
            CompressionMethod::Pruned(p) => format!("pruned {}%", p * 100.0),
            CompressionMethod::QuantizedInt8 => "quantized int8".into(),
        }
    }
}

impl FromStr for CompressionMethod {
    type Err = Error;

    /// Accepts `baseline`, `quantized-int8` and `pruned:<p>`.
    fn from_str(s: &str) -> Result<Self> {
        let m = match s {
            "baseline" => CompressionMethod::Baseline,
            "quantized-int8" | "int8" => CompressionMethod::QuantizedInt8,
            _ => {
                let p = s
                    .strip_prefix("pruned:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidArgument(format!("unknown compression method '{s}'")))?;
                CompressionMethod::Pruned(p)
            }
        };
        m.validate()?;
        Ok(m)
    }
}

/// Storage footprint relative to the fp32 baseline. Sparse index overhead is ignored.
pub fn memory_factor(method: &CompressionMethod) -> f64 {
    match *method {
        CompressionMethod::Baseline => 1.0,
        CompressionMethod::Pruned(p) => 1.0 - p,
        CompressionMethod::QuantizedInt8 => QuantSpec::BITS as f64 / 32.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_store::sparsity;

    fn single(data: Vec<f32>) -> WeightSet {
        let mut ws = WeightSet::new();
        let n = data.len();
        ws.insert("w", Tensor::new(vec![n], data).unwrap(), "enc.0", Group::Attention);
        ws
    }

    #[test]
    fn prune_zero_is_identity() {
        let ws = single(vec![0.5, -0.1, 0.3, -0.7]);
        for s in PruneStrategy::ALL {
            assert_eq!(magnitude_prune(&ws, 0.0, s).unwrap(), ws);
        }
    }

    #[test]
    fn prune_one_zeroes_everything() {
        let ws = single(vec![0.5, -0.1, 0.3, -0.7]);
        let out = magnitude_prune(&ws, 1.0, PruneStrategy::TransformerLayer).unwrap();
        assert_eq!(sparsity(&out).unwrap(), 1.0);
    }

    #[test]
    fn prune_half_of_single_pool() {
        let ws = single(vec![0.5, -0.1, 0.3, -0.7]);
        let out = magnitude_prune(&ws, 0.5, PruneStrategy::PerModule).unwrap();
        assert_eq!(out.get("w").unwrap().data(), &[0.5, 0.0, 0.0, -0.7]);
    }

    #[test]
    fn prune_ties_follow_index_order() {
        let ws = single(vec![0.2, -0.2, 0.2, 0.9]);
        let out = magnitude_prune(&ws, 0.5, PruneStrategy::PerModule).unwrap();
        assert_eq!(out.get("w").unwrap().data(), &[0.0, 0.0, 0.2, 0.9]);
    }

    #[test]
    fn prune_count_rounds_half_away() {
        assert_eq!(prune_count(0.5, 5), 3);
        assert_eq!(prune_count(0.3, 10), 3);
        assert_eq!(prune_count(0.45, 10), 5);
        assert_eq!(prune_count(0.1, 4), 0);
    }

    #[test]
    fn prune_rejects_bad_ratio() {
        let ws = single(vec![1.0]);
        assert!(magnitude_prune(&ws, 1.5, PruneStrategy::PerModule).is_err());
        assert!(magnitude_prune(&ws, -0.1, PruneStrategy::PerModule).is_err());
        assert!(magnitude_prune(&ws, f64::NAN, PruneStrategy::PerModule).is_err());
    }

    #[test]
    fn strategies_pool_differently() {
        let mut ws = WeightSet::new();
        ws.insert("a", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap(), "L0", Group::Attention);
        ws.insert("f", Tensor::new(vec![2], vec![10.0, 20.0]).unwrap(), "L0", Group::Feedforward);
        let layer = magnitude_prune(&ws, 0.5, PruneStrategy::TransformerLayer).unwrap();
        assert_eq!(layer.get("a").unwrap().data(), &[0.0, 0.0]);
        assert_eq!(layer.get("f").unwrap().data(), &[10.0, 20.0]);
        let sep = magnitude_prune(&ws, 0.5, PruneStrategy::SeparateAttnFfn).unwrap();
        assert_eq!(sep.get("a").unwrap().data(), &[0.0, 2.0]);
        assert_eq!(sep.get("f").unwrap().data(), &[0.0, 20.0]);
    }

    #[test]
    fn on_grid_channel_is_exact() {
        // max |w| = 127 puts the last candidate at scale 1.0.
        let data = vec![127.0, -3.0, 0.0, 64.0, -127.0, 5.0];
        let t = Tensor::new(vec![2, 3], data.clone()).unwrap();
        let qt = quantize_weight(&t, &QuantSpec::default()).unwrap();
        assert_eq!(dequantize(&qt).data(), &data[..]);
    }

    #[test]
    fn all_zero_tensor() {
        let t = Tensor::zeros(vec![3, 2]);
        let qt = quantize_weight(&t, &QuantSpec::default()).unwrap();
        assert!(qt.q.iter().all(|&q| q == 0));
        assert!(qt.scales.iter().all(|&s| s == 1.0));
        assert!(dequantize(&qt).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_matches_brute_force_grid() {
        let values = [-1.0f32, 0.5, 0.25];
        let grid = 100;
        let cal = calibrate_channel(&values, grid);
        // Independent search: recompute every candidate's error from scratch.
        let mut best = (0usize, f64::INFINITY);
        for k in 1..=grid {
            let scale = ((k as f64 / grid as f64) / 127.0) as f32;
            let mut err = 0.0f64;
            for &v in &values {
                let mut q = (v as f64 / scale as f64).round_ties_even();
                q = q.clamp(-127.0, 127.0);
                err += (v as f64 - q * scale as f64).powi(2);
            }
            if err < best.1 {
                best = (k, err);
            }
        }
        assert_eq!(cal.candidate, best.0);
        assert_eq!(cal.mse, best.1);
    }

    #[test]
    fn dequantize_arithmetic() {
        let qt = QuantizedTensor {
            shape: vec![1],
            q: vec![127],
            scales: vec![0.01],
            zero_points: vec![0],
            scheme: QuantScheme::SymmetricPerChannel,
        };
        assert!((dequantize(&qt).data()[0] - 1.27).abs() < 1e-6);
    }

    #[test]
    fn rank_zero_and_empty_site_errors() {
        let mut ws = WeightSet::new();
        ws.insert("s", Tensor::new(vec![], vec![1.0]).unwrap(), "L", Group::Other);
        assert!(quantize(&ws, &BTreeMap::new(), &QuantSpec::default()).is_err());

        let ws = single(vec![1.0, 2.0]);
        let mut calib = BTreeMap::new();
        calib.insert("site".to_string(), Vec::new());
        assert!(matches!(quantize(&ws, &calib, &QuantSpec::default()), Err(Error::Empty(_))));
        assert!(QuantSpec { calib_grid: 1 }.validate().is_err());
    }

    #[test]
    fn activation_calibration_covers_zero() {
        let values: Vec<f32> = (0..50).map(|i| i as f32 * 0.1 + 0.5).collect();
        let cal = calibrate_activation(&values, 100);
        assert_eq!(cal.params.dequantize(cal.params.quantize(0.0)), 0.0);
        for &v in &values {
            let r = cal.params.dequantize(cal.params.quantize(v));
            assert!((r - v).abs() <= cal.params.scale, "{v} -> {r}");
        }
    }

    #[test]
    fn quantized_file_round_trip() {
        let mut ws = WeightSet::new();
        ws.insert("a", Tensor::new(vec![2, 2], vec![0.3, -0.2, 0.9, 0.0]).unwrap(), "L0", Group::Attention);
        ws.insert("b", Tensor::new(vec![3], vec![1.0, 2.0, -3.0]).unwrap(), "L1", Group::Other);
        let mut calib = BTreeMap::new();
        calib.insert("L0.in".to_string(), vec![Tensor::new(vec![3], vec![-1.0, 0.5, 2.0]).unwrap()]);
        let qm = quantize(&ws, &calib, &QuantSpec::default()).unwrap();
        let bytes = qm.to_bytes();
        assert_eq!(&bytes[..4], b"MTBQ");
        let back = QuantizedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back, qm);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn memory_factors() {
        assert_eq!(memory_factor(&CompressionMethod::Baseline), 1.0);
        assert_eq!(memory_factor(&CompressionMethod::Pruned(0.30)), 0.70);
        assert_eq!(memory_factor(&CompressionMethod::Pruned(0.45)), 0.55);
        assert_eq!(memory_factor(&CompressionMethod::QuantizedInt8), 0.25);
        assert_eq!("pruned:0.3".parse::<CompressionMethod>().unwrap(), CompressionMethod::Pruned(0.3));
        assert!("pruned:2".parse::<CompressionMethod>().is_err());
    }
}
