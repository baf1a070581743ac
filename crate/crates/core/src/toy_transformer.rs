//! A small pre-norm transformer encoder-decoder with greedy decoding.
//!
//! The model reads all of its parameters from a [`WeightSet`] by name, adds
//! sinusoidal position encodings to untied source/target embeddings, and
//! reports the decoder's cross-attention averaged over every layer and head.
//! Linear layers are `y = W x + b` with `W` stored `[out, in]`, so the first
//! dimension of every weight matrix is its output channel.
//!
//! Named activation sites mark the input of each linear layer. A decode can
//! record the values seen at each site (for calibration) and can fake-quantize
//! them with calibrated int8 parameters.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention_alignment::AttentionMatrix;
use crate::compression::ActivationQuant;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::tensor_store::{Group, Tensor, WeightSet};

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub bos: u32,
    pub eos: u32,
    pub pad: u32,
    /// Surface form of every token id, for text input and output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let dims = [self.vocab_size, self.d_model, self.n_heads, self.n_enc_layers, self.n_dec_layers, self.d_ff];
        if dims.contains(&0) || self.max_len == 0 {
            return bad("model dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        let specials = [self.bos, self.eos, self.pad];
        if specials.iter().any(|&t| t as usize >= self.vocab_size) {
            return bad("special token id outside the vocabulary".into());
        }
        if self.bos == self.eos || self.bos == self.pad || self.eos == self.pad {
            return bad("bos, eos and pad must be distinct".into());
        }
        if let Some(v) = &self.vocab {
            if v.len() != self.vocab_size {
                return bad(format!("vocab lists {} tokens, vocab_size is {}", v.len(), self.vocab_size));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: ModelConfig = jsonl::read_json(path.as_ref())?;
        cfg.validate().map_err(|e| Error::schema(path.as_ref().display().to_string(), 0, e.to_string()))?;
        Ok(cfg)
    }

    fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Word ids for whitespace-separated text, with `eos` appended.
    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        let vocab = self.vocab.as_ref().ok_or_else(|| Error::InvalidArgument("config has no vocab".into()))?;
        let mut ids = text
            .split_whitespace()
            .map(|w| {
                vocab
                    .iter()
                    .position(|v| v == w)
                    .map(|i| i as u32)
                    .ok_or_else(|| Error::InvalidArgument(format!("word '{w}' not in vocab")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(self.eos);
        Ok(ids)
    }

    /// Output tokens before `eos` as strings: vocab words, or decimal ids.
    pub fn output_strings(&self, tokens: &[u32]) -> Vec<String> {
        tokens
            .iter()
            .take_while(|&&t| t != self.eos)
            .map(|&t| match &self.vocab {
                Some(v) => v[t as usize].clone(),
                None => t.to_string(),
            })
            .collect()
    }
}

/// Shape, layer unit and group of one named parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub shape: Vec<usize>,
    pub layer: String,
    pub group: Group,
}

/// Every parameter the config implies, keyed by name.
pub fn param_specs(cfg: &ModelConfig) -> BTreeMap<String, ParamSpec> {
    let (v, d, f) = (cfg.vocab_size, cfg.d_model, cfg.d_ff);
    let mut specs = BTreeMap::new();
    let mut add = |name: String, shape: Vec<usize>, layer: &str, group: Group| {
        specs.insert(name, ParamSpec { shape, layer: layer.to_owned(), group });
    };
    add("embed.src".into(), vec![v, d], "embed.src", Group::Embedding);
    add("embed.tgt".into(), vec![v, d], "embed.tgt", Group::Embedding);

    let norm = |add: &mut dyn FnMut(String, Vec<usize>, &str, Group), p: &str, layer: &str| {
        add(format!("{p}.g"), vec![d], layer, Group::Other);
        add(format!("{p}.b"), vec![d], layer, Group::Other);
    };
    let attn = |add: &mut dyn FnMut(String, Vec<usize>, &str, Group), p: &str, layer: &str| {
        for m in ["q", "k", "v", "o"] {
            add(format!("{p}.w{m}"), vec![d, d], layer, Group::Attention);
            add(format!("{p}.b{m}"), vec![d], layer, Group::Attention);
        }
    };
    let ffn = |add: &mut dyn FnMut(String, Vec<usize>, &str, Group), p: &str, layer: &str| {
        add(format!("{p}.w1"), vec![f, d], layer, Group::Feedforward);
        add(format!("{p}.b1"), vec![f], layer, Group::Feedforward);
        add(format!("{p}.w2"), vec![d, f], layer, Group::Feedforward);
        add(format!("{p}.b2"), vec![d], layer, Group::Feedforward);
    };
    for l in 0..cfg.n_enc_layers {
        let layer = format!("enc.{l}");
        norm(&mut add, &format!("{layer}.ln1"), &layer);
        attn(&mut add, &format!("{layer}.self"), &layer);
        norm(&mut add, &format!("{layer}.ln2"), &layer);
        ffn(&mut add, &format!("{layer}.ffn"), &layer);
    }
    norm(&mut add, "enc.ln", "enc.ln");
    for l in 0..cfg.n_dec_layers {
        let layer = format!("dec.{l}");
        norm(&mut add, &format!("{layer}.ln1"), &layer);
        attn(&mut add, &format!("{layer}.self"), &layer);
        norm(&mut add, &format!("{layer}.ln2"), &layer);
        attn(&mut add, &format!("{layer}.cross"), &layer);
        norm(&mut add, &format!("{layer}.ln3"), &layer);
        ffn(&mut add, &format!("{layer}.ffn"), &layer);
    }
    norm(&mut add, "dec.ln", "dec.ln");
    add("out.w".into(), vec![v, d], "out", Group::Other);
    add("out.b".into(), vec![v], "out", Group::Other);
    specs
}

/// Activation-site names in forward order.
pub fn activation_sites(cfg: &ModelConfig) -> Vec<String> {
    let mut sites = Vec::new();
    for l in 0..cfg.n_enc_layers {
        for s in ["self.in", "self.ctx", "ffn.in", "ffn.hidden"] {
            sites.push(format!("enc.{l}.{s}"));
        }
    }
    for l in 0..cfg.n_dec_layers {
        for s in ["self.in", "self.ctx", "cross.q_in", "cross.kv_in", "cross.ctx", "ffn.in", "ffn.hidden"] {
            sites.push(format!("dec.{l}.{s}"));
        }
    }
    sites.push("out.in".into());
    sites
}

/// SplitMix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Reproducible random weights: layer-norm gains 1 and biases 0, everything
/// else uniform in `(-s, s)` with `s = 0.1 / sqrt(d_model)`, drawn in
/// lexicographic parameter order, row-major.
pub fn make_demo_weights(cfg: &ModelConfig, seed: u64) -> WeightSet {
    let s = 0.1 / (cfg.d_model as f64).sqrt();
    let mut rng = SplitMix64::new(seed);
    let mut ws = WeightSet::new();
    for (name, spec) in param_specs(cfg) {
        let n: usize = spec.shape.iter().product();
        let data: Vec<f32> = if is_norm(&name) {
            let v = if name.ends_with(".g") { 1.0 } else { 0.0 };
            vec![v; n]
        } else {
            (0..n).map(|_| ((2.0 * rng.next_f64() - 1.0) * s) as f32).collect()
        };
        let t = Tensor::new(spec.shape, data).expect("spec shapes are positive");
        ws.insert(name, t, spec.layer, spec.group);
    }
    ws
}

fn is_norm(name: &str) -> bool {
    name.contains(".ln")
}

/// Sinusoidal position encoding for one position.
pub fn position_encoding(pos: usize, d_model: usize) -> Vec<f32> {
    (0..d_model)
        .map(|i| {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / d_model as f64);
            let a = pos as f64 * freq;
            (if i % 2 == 0 { a.sin() } else { a.cos() }) as f32
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    /// Generated ids, ending with `eos` unless `max_len` was reached first.
    pub tokens: Vec<u32>,
    /// Output positions by input positions.
    pub cross_attention: AttentionMatrix,
}

/// Per-decode instrumentation: optional int8 fake-quantization of activation
/// sites and optional recording of the values each site sees.
#[derive(Default)]
pub struct Hooks<'a> {
    pub quant: Option<&'a BTreeMap<String, ActivationQuant>>,
    recorded: Option<RefCell<BTreeMap<String, Vec<f32>>>>,
}

impl<'a> Hooks<'a> {
    pub fn quantized(quant: &'a BTreeMap<String, ActivationQuant>) -> Self {
        Self { quant: Some(quant), recorded: None }
    }

    pub fn recording() -> Self {
        Self { quant: None, recorded: Some(RefCell::new(BTreeMap::new())) }
    }

    pub fn take_recorded(self) -> BTreeMap<String, Vec<f32>> {
        self.recorded.map(RefCell::into_inner).unwrap_or_default()
    }

    fn site(&self, name: &str, rows: &mut [Vec<f32>]) {
        if let Some(rec) = &self.recorded {
            let mut rec = rec.borrow_mut();
            let buf = rec.entry(name.to_owned()).or_default();
            for r in rows.iter() {
                buf.extend_from_slice(r);
            }
        }
        if let Some(aq) = self.quant.and_then(|q| q.get(name)) {
            for r in rows.iter_mut() {
                aq.fake_quant(r);
            }
        }
    }
}

struct Linear<'a> {
    w: &'a [f32],
    b: &'a [f32],
    inp: usize,
}

impl Linear<'_> {
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.inp);
        self.w
            .chunks(self.inp)
            .zip(self.b)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>() + b)
            .collect()
    }

    fn apply_rows(&self, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

struct Norm<'a> {
    g: &'a [f32],
    b: &'a [f32],
}

impl Norm<'_> {
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len() as f32;
        let mean = x.iter().sum::<f32>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter().zip(self.g).zip(self.b).map(|((v, g), b)| (v - mean) * inv * g + b).collect()
    }

    fn apply_rows(&self, xs: &[Vec<f32>]) -> Vec<Vec<f32>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

struct Attention<'a> {
    q: Linear<'a>,
    k: Linear<'a>,
    v: Linear<'a>,
    o: Linear<'a>,
}

struct FeedForward<'a> {
    up: Linear<'a>,
    down: Linear<'a>,
}

struct EncoderLayer<'a> {
    name: String,
    ln1: Norm<'a>,
    attn: Attention<'a>,
    ln2: Norm<'a>,
    ffn: FeedForward<'a>,
}

struct DecoderLayer<'a> {
    name: String,
    ln1: Norm<'a>,
    self_attn: Attention<'a>,
    ln2: Norm<'a>,
    cross: Attention<'a>,
    ln3: Norm<'a>,
    ffn: FeedForward<'a>,
}

/// A model view over a weight set, validated against the config.
pub struct Seq2Seq<'a> {
    cfg: &'a ModelConfig,
    embed_src: &'a [f32],
    embed_tgt: &'a [f32],
    encoder: Vec<EncoderLayer<'a>>,
    enc_norm: Norm<'a>,
    decoder: Vec<DecoderLayer<'a>>,
    dec_norm: Norm<'a>,
    out: Linear<'a>,
}

impl<'a> Seq2Seq<'a> {
    pub fn new(cfg: &'a ModelConfig, ws: &'a WeightSet) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        for (name, spec) in &specs {
            let t = ws.get(name).ok_or_else(|| Error::MissingParameter(name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::InvalidTensor(format!(
                    "'{name}' has shape {:?}, config implies {:?}",
                    t.shape(),
                    spec.shape
                )));
            }
        }
        let p = |name: &str| ws.get(name).expect("checked above").data();
        let lin = |w: String, b: String| {
            let shape = &specs[&w].shape;
            Linear { w: p(&w), b: p(&b), inp: shape[1] }
        };
        let norm = |pre: String| Norm { g: p(&format!("{pre}.g")), b: p(&format!("{pre}.b")) };
        let attn = |pre: String| Attention {
            q: lin(format!("{pre}.wq"), format!("{pre}.bq")),
            k: lin(format!("{pre}.wk"), format!("{pre}.bk")),
            v: lin(format!("{pre}.wv"), format!("{pre}.bv")),
            o: lin(format!("{pre}.wo"), format!("{pre}.bo")),
        };
        let ffn = |pre: String| FeedForward {
            up: lin(format!("{pre}.w1"), format!("{pre}.b1")),
            down: lin(format!("{pre}.w2"), format!("{pre}.b2")),
        };
        let encoder = (0..cfg.n_enc_layers)
            .map(|l| {
                let n = format!("enc.{l}");
                EncoderLayer {
                    ln1: norm(format!("{n}.ln1")),
                    attn: attn(format!("{n}.self")),
                    ln2: norm(format!("{n}.ln2")),
                    ffn: ffn(format!("{n}.ffn")),
                    name: n,
                }
            })
            .collect();
        let decoder = (0..cfg.n_dec_layers)
            .map(|l| {
                let n = format!("dec.{l}");
                DecoderLayer {
                    ln1: norm(format!("{n}.ln1")),
                    self_attn: attn(format!("{n}.self")),
                    ln2: norm(format!("{n}.ln2")),
                    cross: attn(format!("{n}.cross")),
                    ln3: norm(format!("{n}.ln3")),
                    ffn: ffn(format!("{n}.ffn")),
                    name: n,
                }
            })
            .collect();
        Ok(Self {
            cfg,
            embed_src: p("embed.src"),
            embed_tgt: p("embed.tgt"),
            encoder,
            enc_norm: norm("enc.ln".into()),
            decoder,
            dec_norm: norm("dec.ln".into()),
            out: lin("out.w".into(), "out.b".into()),
        })
    }

    fn embed(&self, table: &[f32], tokens: &[u32]) -> Vec<Vec<f32>> {
        let d = self.cfg.d_model;
        tokens
            .iter()
            .enumerate()
            .map(|(pos, &t)| {
                let e = &table[t as usize * d..(t as usize + 1) * d];
                e.iter().zip(position_encoding(pos, d)).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    /// Multi-head attention. Returns the projected output and the per-head
    /// probabilities `[head][query][key]`.
    fn attend(
        &self,
        attn: &Attention<'_>,
        queries: &[Vec<f32>],
        keys: &[Vec<f32>],
        causal: bool,
        site: &str,
        hooks: &Hooks<'_>,
    ) -> (Vec<Vec<f32>>, Vec<Vec<Vec<f64>>>) {
        let (h, dh) = (self.cfg.n_heads, self.cfg.d_head());
        let q = attn.q.apply_rows(queries);
        let k = attn.k.apply_rows(keys);
        let v = attn.v.apply_rows(keys);
        let scale = 1.0 / (dh as f32).sqrt();
        let mut ctx = vec![vec![0.0f32; self.cfg.d_model]; queries.len()];
        let mut probs = vec![vec![Vec::new(); queries.len()]; h];
        for head in 0..h {
            let span = head * dh..(head + 1) * dh;
            for (i, qi) in q.iter().enumerate() {
                let visible = if causal { i + 1 } else { keys.len() };
                let scores: Vec<f32> = k[..visible]
                    .iter()
                    .map(|kj| qi[span.clone()].iter().zip(&kj[span.clone()]).map(|(a, b)| a * b).sum::<f32>() * scale)
                    .collect();
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let exps: Vec<f64> = scores.iter().map(|s| ((s - max) as f64).exp()).collect();
                let z: f64 = exps.iter().sum();
                let mut p: Vec<f64> = exps.iter().map(|e| e / z).collect();
                for (j, pj) in p.iter().enumerate() {
                    for (c, val) in ctx[i][span.clone()].iter_mut().zip(&v[j][span.clone()]) {
                        *c += *pj as f32 * val;
                    }
                }
                p.resize(keys.len(), 0.0);
                probs[head][i] = p;
            }
        }
        hooks.site(site, &mut ctx);
        (attn.o.apply_rows(&ctx), probs)
    }

    fn feed_forward(&self, ffn: &FeedForward<'_>, xs: &mut Vec<Vec<f32>>, prefix: &str, hooks: &Hooks<'_>) {
        hooks.site(&format!("{prefix}.ffn.in"), xs);
        let mut hidden: Vec<Vec<f32>> =
            ffn.up.apply_rows(xs).into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect();
        hooks.site(&format!("{prefix}.ffn.hidden"), &mut hidden);
        *xs = ffn.down.apply_rows(&hidden);
    }

    pub fn encode(&self, src: &[u32], hooks: &Hooks<'_>) -> Vec<Vec<f32>> {
        let mut x = self.embed(self.embed_src, src);
        for layer in &self.encoder {
            let mut h = layer.ln1.apply_rows(&x);
            hooks.site(&format!("{}.self.in", layer.name), &mut h);
            let (a, _) = self.attend(&layer.attn, &h, &h, false, &format!("{}.self.ctx", layer.name), hooks);
            add_rows(&mut x, &a);
            let mut h = layer.ln2.apply_rows(&x);
            self.feed_forward(&layer.ffn, &mut h, &layer.name, hooks);
            add_rows(&mut x, &h);
        }
        self.enc_norm.apply_rows(&x)
    }

    /// Logits for every decoder position and the per-layer cross-attention
    /// probabilities `[layer][head][query][key]`.
    pub fn decode_pass(
        &self,
        memory: &[Vec<f32>],
        prefix: &[u32],
        hooks: &Hooks<'_>,
    ) -> (Vec<Vec<f32>>, Vec<Vec<Vec<Vec<f64>>>>) {
        let mut y = self.embed(self.embed_tgt, prefix);
        let mut cross_probs = Vec::with_capacity(self.decoder.len());
        for layer in &self.decoder {
            let n = &layer.name;
            let mut h = layer.ln1.apply_rows(&y);
            hooks.site(&format!("{n}.self.in"), &mut h);
            let (a, _) = self.attend(&layer.self_attn, &h, &h, true, &format!("{n}.self.ctx"), hooks);
            add_rows(&mut y, &a);

            let mut q = layer.ln2.apply_rows(&y);
            hooks.site(&format!("{n}.cross.q_in"), &mut q);
            let mut kv = memory.to_vec();
            hooks.site(&format!("{n}.cross.kv_in"), &mut kv);
            let (a, probs) = self.attend(&layer.cross, &q, &kv, false, &format!("{n}.cross.ctx"), hooks);
            add_rows(&mut y, &a);
            cross_probs.push(probs);

            let mut h = layer.ln3.apply_rows(&y);
            self.feed_forward(&layer.ffn, &mut h, n, hooks);
            add_rows(&mut y, &h);
        }
        let mut z = self.dec_norm.apply_rows(&y);
        hooks.site("out.in", &mut z);
        (self.out.apply_rows(&z), cross_probs)
    }

    fn check_source(&self, src: &[u32]) -> Result<()> {
        if src.is_empty() {
            return Err(Error::Empty("source sequence".into()));
        }
        if src.len() > self.cfg.max_len {
            return Err(Error::InvalidArgument(format!(
                "source length {} exceeds max_len {}",
                src.len(),
                self.cfg.max_len
            )));
        }
        if let Some(t) = src.iter().find(|&&t| t as usize >= self.cfg.vocab_size) {
            return Err(Error::InvalidArgument(format!("token id {t} outside vocabulary")));
        }
        Ok(())
    }

    pub fn decode(&self, src: &[u32], hooks: &Hooks<'_>) -> Result<DecodeResult> {
        self.check_source(src)?;
        let memory = self.encode(src, hooks);
        let mut prefix = vec![self.cfg.bos];
        let mut tokens = Vec::new();
        let mut last_cross = Vec::new();
        while tokens.len() < self.cfg.max_len {
            let (logits, cross) = self.decode_pass(&memory, &prefix, hooks);
            last_cross = cross;
            let next = argmax(logits.last().expect("non-empty prefix")) as u32;
            tokens.push(next);
            if next == self.cfg.eos {
                break;
            }
            prefix.push(next);
        }
        // The final pass saw exactly one query row per generated token.
        let cross_attention = average_heads(&last_cross, tokens.len(), src.len())?;
        Ok(DecodeResult { tokens, cross_attention })
    }
}

fn add_rows(x: &mut [Vec<f32>], delta: &[Vec<f32>]) {
    for (r, d) in x.iter_mut().zip(delta) {
        for (a, b) in r.iter_mut().zip(d) {
            *a += b;
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Arithmetic mean over layers and heads, rows renormalized to sum to one.
fn average_heads(probs: &[Vec<Vec<Vec<f64>>>], rows: usize, cols: usize) -> Result<AttentionMatrix> {
    let mut acc = vec![0.0f64; rows * cols];
    let mut count = 0usize;
    for layer in probs {
        for head in layer {
            for (i, row) in head.iter().take(rows).enumerate() {
                for (j, p) in row.iter().enumerate() {
                    acc[i * cols + j] += p;
                }
            }
            count += 1;
        }
    }
    for row in acc.chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v = if s > 0.0 { *v / s } else { 1.0 / cols as f64 };
        }
    }
    debug_assert!(count > 0);
    AttentionMatrix::new(rows, cols, acc)
}

/// Activations seen at every site while decoding `sources`, as a calibration
/// weight set: tensor `<site>.<i>` holds sentence `i`'s values and is tagged
/// with layer `<site>`.
pub fn record_calibration(cfg: &ModelConfig, ws: &WeightSet, sources: &[Vec<u32>]) -> Result<WeightSet> {
    if sources.is_empty() {
        return Err(Error::Empty("calibration sources".into()));
    }
    let model = Seq2Seq::new(cfg, ws)?;
    let mut out = WeightSet::new();
    for (i, src) in sources.iter().enumerate() {
        let hooks = Hooks::recording();
        model.decode(src, &hooks)?;
        for (site, values) in hooks.take_recorded() {
            let t = Tensor::new(vec![values.len()], values)?;
            out.insert(format!("{site}.{i:05}"), t, site, Group::Other);
        }
    }
    Ok(out)
}

/// Greedy decode of one source sequence.
pub fn forward_decode(cfg: &ModelConfig, ws: &WeightSet, src: &[u32]) -> Result<DecodeResult> {
    Seq2Seq::new(cfg, ws)?.decode(src, &Hooks::default())
}

/// Weights that make the model copy its input. Needs `d_model >= 64`,
/// `n_heads == 1` and `vocab_size <= 7`; every source must end with `eos` and
/// be at most five tokens long (the position match aliases at distance six).
///
/// Layer sublayers are zeroed apart from decoder cross-attention, which matches
/// query and key positions through the fastest sinusoid pair (dims 0 and 1)
/// and copies the attended source token from dims `32 + 2t` into `48 + 2t`,
/// where the output projection reads it. Dim 62 carries no signal and serves
/// as a reference that cancels the layer-norm mean.
pub fn copy_task_weights(cfg: &ModelConfig) -> Result<WeightSet> {
    cfg.validate()?;
    if cfg.d_model < 64 || cfg.n_heads != 1 || cfg.vocab_size > 7 {
        return Err(Error::InvalidArgument("copy weights need d_model >= 64, one head, vocab <= 7".into()));
    }
    const TOKEN_SCALE: f32 = 4.0;
    const MATCH_GAIN: f32 = 12.0;
    const COPY_GAIN: f32 = 8.0;
    let d = cfg.d_model;
    let (tok_in, tok_out, reference) = (|t: usize| 32 + 2 * t, |t: usize| 48 + 2 * t, 62usize);
    let mut ws = WeightSet::new();
    for (name, spec) in param_specs(cfg) {
        let mut t = Tensor::zeros(spec.shape.clone());
        let data = t.data_mut();
        let set = |data: &mut [f32], r: usize, c: usize, v: f32| data[r * d + c] = v;
        match name.as_str() {
            "embed.src" | "embed.tgt" => {
                for tok in 0..cfg.vocab_size {
                    set(data, tok, tok_in(tok), TOKEN_SCALE);
                }
            }
            n if is_norm(n) && n.ends_with(".g") => data.fill(1.0),
            n if n.ends_with(".cross.wq") || n.ends_with(".cross.wk") => {
                for (row, dim) in [(0, 0), (1, 1)] {
                    set(data, row, dim, MATCH_GAIN);
                    set(data, row, reference, -MATCH_GAIN);
                }
            }
            n if n.ends_with(".cross.wv") => {
                for tok in 0..cfg.vocab_size {
                    set(data, tok_in(tok), tok_in(tok), 1.0);
                    set(data, tok_in(tok), reference, -1.0);
                }
            }
            n if n.ends_with(".cross.wo") => {
                for tok in 0..cfg.vocab_size {
                    set(data, tok_out(tok), tok_in(tok), COPY_GAIN);
                }
            }
            "out.w" => {
                for tok in 0..cfg.vocab_size {
                    set(data, tok, tok_out(tok), 1.0);
                    set(data, tok, reference, -1.0);
                }
            }
            _ => {}
        }
        ws.insert(name, t, spec.layer, spec.group);
    }
    Ok(ws)
}
