//! Single-tower text encoder with exact analytic gradients.
//!
//! Architecture: token embedding lookup, one single-head self-attention layer
//! with a residual connection, masked pooling, then `tanh(W_o p + b_o)`.
//! There are no positional encodings, so the encoder is invariant to any
//! reordering of the non-CLS tokens. `[PAD]` positions are dropped before
//! attention and pooling.
//!
//! Matrices are stored row-major and applied as `y = W x`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textproc::{PackedInput, PAD, RESERVED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean of the attention outputs over non-PAD positions.
    #[default]
    Mean,
    /// Attention output at the first (CLS) position.
    ClsSlot,
}

impl Pooling {
    pub(crate) fn code(self) -> u32 {
        match self {
            Pooling::Mean => 0,
            Pooling::ClsSlot => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Pooling::Mean),
            1 => Ok(Pooling::ClsSlot),
            c => Err(Error::Format(format!("unknown pooling code {c}"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::ClsSlot => "cls_slot",
        })
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "cls_slot" | "cls" => Ok(Pooling::ClsSlot),
            other => Err(Error::InvalidArgument(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub vocab_size: usize,
    pub width: usize,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < RESERVED.len() {
            return Err(Error::InvalidDims(format!(
                "vocab_size {} < {} reserved tokens",
                self.vocab_size,
                RESERVED.len()
            )));
        }
        if self.width < 2 {
            return Err(Error::InvalidDims(format!("width {} < 2", self.width)));
        }
        Ok(())
    }
}

/// Encoder output: a `width`-dimensional vector with components in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn dot(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    pub pooling: Pooling,
    /// `vocab_size × width`
    pub token_embeddings: Vec<f64>,
    /// `width × width` each
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub out_proj: Vec<f64>,
    /// `width`
    pub out_bias: Vec<f64>,
}

impl EncoderParams {
    /// Seeded uniform initialization in `[-1/√d, 1/√d]`; bias starts at zero.
    pub fn init(seed: u64, dims: EncoderDims) -> Result<Self> {
        dims.validate()?;
        let d = dims.width;
        let scale = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-scale..scale)).collect() };
        Ok(EncoderParams {
            dims,
            pooling: Pooling::Mean,
            token_embeddings: draw(dims.vocab_size * d),
            query: draw(d * d),
            key: draw(d * d),
            value: draw(d * d),
            out_proj: draw(d * d),
            out_bias: vec![0.0; d],
        })
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn param_count(&self) -> usize {
        let d = self.dims.width;
        self.dims.vocab_size * d + 4 * d * d + d
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.dims.validate()?;
        let d = self.dims.width;
        let expect = [
            (
                "token_embeddings",
                self.token_embeddings.len(),
                self.dims.vocab_size * d,
            ),
            ("query", self.query.len(), d * d),
            ("key", self.key.len(), d * d),
            ("value", self.value.len(), d * d),
            ("out_proj", self.out_proj.len(), d * d),
            ("out_bias", self.out_bias.len(), d),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::ShapeMismatch(format!("{name}: {got} != {want}")));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Parameter tensors in declaration order.
    pub fn tensors(&self) -> [&Vec<f64>; 6] {
        [
            &self.token_embeddings,
            &self.query,
            &self.key,
            &self.value,
            &self.out_proj,
            &self.out_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.token_embeddings,
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.out_proj,
            &mut self.out_bias,
        ]
    }

    pub fn encode(&self, input: &PackedInput) -> Result<Embedding> {
        Ok(Embedding(self.forward(input)?.out))
    }

    /// Gradient of `upstream · encode(input)` with respect to every parameter.
    pub fn encode_backward(&self, input: &PackedInput, upstream: &[f64]) -> Result<ParamGrads> {
        if upstream.len() != self.dims.width {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has length {}, expected {}",
                upstream.len(),
                self.dims.width
            )));
        }
        let trace = self.forward(input)?;
        let mut grads = ParamGrads::zeros(self.dims);
        self.backward(&trace, upstream, &mut grads);
        Ok(grads)
    }

    /// Attention weights per query position over non-PAD positions.
    pub fn attention_weights(&self, input: &PackedInput) -> Result<Vec<Vec<f64>>> {
        let t = self.forward(input)?;
        let n = t.tokens.len();
        Ok((0..n)
            .map(|i| t.attn[i * n..(i + 1) * n].to_vec())
            .collect())
    }

    pub(crate) fn forward(&self, input: &PackedInput) -> Result<Trace> {
        let d = self.dims.width;
        let vocab_size = self.dims.vocab_size;
        let mut tokens = Vec::with_capacity(input.ids.len());
        for &id in &input.ids {
            if id as usize >= vocab_size {
                return Err(Error::TokenOutOfRange { id, vocab_size });
            }
            if id != PAD {
                tokens.push(id);
            }
        }
        let n = tokens.len();
        let mut e = vec![0.0; n * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let row = tok as usize * d;
            e[i * d..(i + 1) * d].copy_from_slice(&self.token_embeddings[row..row + d]);
        }
        let q = project_rows(&self.query, &e, n, d);
        let k = project_rows(&self.key, &e, n, d);
        let v = project_rows(&self.value, &e, n, d);

        let scale = 1.0 / (d as f64).sqrt();
        let mut attn = vec![0.0; n * n];
        for i in 0..n {
            let qi = &q[i * d..(i + 1) * d];
            let row = &mut attn[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] = dot(qi, &k[j * d..(j + 1) * d]) * scale;
            }
            softmax_in_place(row);
        }

        let mut h = e.clone();
        for i in 0..n {
            let hi = &mut h[i * d..(i + 1) * d];
            for j in 0..n {
                let a = attn[i * n + j];
                for (x, vj) in hi.iter_mut().zip(&v[j * d..(j + 1) * d]) {
                    *x += a * vj;
                }
            }
        }

        let mut pooled = vec![0.0; d];
        if n > 0 {
            match self.pooling {
                Pooling::Mean => {
                    for i in 0..n {
                        for (p, x) in pooled.iter_mut().zip(&h[i * d..(i + 1) * d]) {
                            *p += x;
                        }
                    }
                    let inv = 1.0 / n as f64;
                    pooled.iter_mut().for_each(|p| *p *= inv);
                }
                Pooling::ClsSlot => pooled.copy_from_slice(&h[..d]),
            }
        }

        let mut out = self.out_bias.clone();
        for (a, o) in out.iter_mut().enumerate() {
            *o += dot(&self.out_proj[a * d..(a + 1) * d], &pooled);
            *o = o.tanh();
        }

        Ok(Trace {
            tokens,
            e,
            q,
            k,
            v,
            attn,
            pooled,
            out,
        })
    }

    /// Accumulates the gradient of `upstream · out` into `grads`.
    pub(crate) fn backward(&self, t: &Trace, upstream: &[f64], grads: &mut ParamGrads) {
        let d = self.dims.width;
        let n = t.tokens.len();

        let dz: Vec<f64> = upstream
            .iter()
            .zip(&t.out)
            .map(|(g, o)| g * (1.0 - o * o))
            .collect();
        let mut dp = vec![0.0; d];
        for a in 0..d {
            grads.out_bias[a] += dz[a];
            let row = &mut grads.out_proj[a * d..(a + 1) * d];
            for b in 0..d {
                row[b] += dz[a] * t.pooled[b];
                dp[b] += self.out_proj[a * d + b] * dz[a];
            }
        }
        if n == 0 {
            return;
        }

        // gradient w.r.t. each attention-layer output h_i
        let mut dh = vec![0.0; n * d];
        match self.pooling {
            Pooling::Mean => {
                let inv = 1.0 / n as f64;
                for i in 0..n {
                    for b in 0..d {
                        dh[i * d + b] = dp[b] * inv;
                    }
                }
            }
            Pooling::ClsSlot => dh[..d].copy_from_slice(&dp),
        }

        // residual path
        let mut de = dh.clone();
        let mut dv = vec![0.0; n * d];
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let scale = 1.0 / (d as f64).sqrt();
        let mut dattn = vec![0.0; n];
        for i in 0..n {
            let dhi = &dh[i * d..(i + 1) * d];
            if dhi.iter().all(|&x| x == 0.0) {
                continue;
            }
            let arow = &t.attn[i * n..(i + 1) * n];
            for j in 0..n {
                dattn[j] = dot(dhi, &t.v[j * d..(j + 1) * d]);
                let a = arow[j];
                for (x, g) in dv[j * d..(j + 1) * d].iter_mut().zip(dhi) {
                    *x += a * g;
                }
            }
            let mean: f64 = arow.iter().zip(&dattn).map(|(a, g)| a * g).sum();
            for j in 0..n {
                let ds = arow[j] * (dattn[j] - mean) * scale;
                if ds == 0.0 {
                    continue;
                }
                for b in 0..d {
                    dq[i * d + b] += ds * t.k[j * d + b];
                    dk[j * d + b] += ds * t.q[i * d + b];
                }
            }
        }

        for (w, gw, dy) in [
            (&self.query, &mut grads.query, &dq),
            (&self.key, &mut grads.key, &dk),
            (&self.value, &mut grads.value, &dv),
        ] {
            for i in 0..n {
                let ei = &t.e[i * d..(i + 1) * d];
                let dyi = &dy[i * d..(i + 1) * d];
                let dei = &mut de[i * d..(i + 1) * d];
                for a in 0..d {
                    let g = dyi[a];
                    if g == 0.0 {
                        continue;
                    }
                    let wrow = &w[a * d..(a + 1) * d];
                    let grow = &mut gw[a * d..(a + 1) * d];
                    for b in 0..d {
                        grow[b] += g * ei[b];
                        dei[b] += g * wrow[b];
                    }
                }
            }
        }

        for (i, &tok) in t.tokens.iter().enumerate() {
            let row = grads
                .token_embeddings
                .entry(tok)
                .or_insert_with(|| vec![0.0; d]);
            for (r, g) in row.iter_mut().zip(&de[i * d..(i + 1) * d]) {
                *r += g;
            }
        }
    }
}

/// Cached activations of one forward pass (PAD positions removed).
pub(crate) struct Trace {
    tokens: Vec<u32>,
    e: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    pooled: Vec<f64>,
    pub(crate) out: Vec<f64>,
}

/// Gradients with the same logical shapes as [`EncoderParams`]. Embedding
/// rows are stored sparsely; rows not present are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub dims: EncoderDims,
    pub token_embeddings: BTreeMap<u32, Vec<f64>>,
    pub query: Vec<f64>,
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub out_proj: Vec<f64>,
    pub out_bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(dims: EncoderDims) -> Self {
        let d = dims.width;
        ParamGrads {
            dims,
            token_embeddings: BTreeMap::new(),
            query: vec![0.0; d * d],
            key: vec![0.0; d * d],
            value: vec![0.0; d * d],
            out_proj: vec![0.0; d * d],
            out_bias: vec![0.0; d],
        }
    }

    /// Embedding gradient row for `token` (zeros when absent).
    pub fn embedding_row(&self, token: u32) -> Vec<f64> {
        self.token_embeddings
            .get(&token)
            .cloned()
            .unwrap_or_else(|| vec![0.0; self.dims.width])
    }

    /// Dense `vocab_size × width` embedding gradient.
    pub fn dense_embeddings(&self) -> Vec<f64> {
        let d = self.dims.width;
        let mut out = vec![0.0; self.dims.vocab_size * d];
        for (&tok, row) in &self.token_embeddings {
            out[tok as usize * d..(tok as usize + 1) * d].copy_from_slice(row);
        }
        out
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (&tok, row) in &other.token_embeddings {
            let dst = self
                .token_embeddings
                .entry(tok)
                .or_insert_with(|| vec![0.0; row.len()]);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (a, b) in [
            (&mut self.query, &other.query),
            (&mut self.key, &other.key),
            (&mut self.value, &other.value),
            (&mut self.out_proj, &other.out_proj),
            (&mut self.out_bias, &other.out_bias),
        ] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.token_embeddings
            .values()
            .flatten()
            .chain(&self.query)
            .chain(&self.key)
            .chain(&self.value)
            .chain(&self.out_proj)
            .chain(&self.out_bias)
            .all(|x| x.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.token_embeddings
            .values()
            .flatten()
            .chain(&self.query)
            .chain(&self.key)
            .chain(&self.value)
            .chain(&self.out_proj)
            .chain(&self.out_bias)
            .all(|&x| x == 0.0)
    }

    /// Gradient for flat coordinate `index` of tensor `tensor` (declaration
    /// order, see [`EncoderParams::tensors`]).
    pub fn get(&self, tensor: usize, index: usize) -> f64 {
        let d = self.dims.width;
        match tensor {
            0 => self
                .token_embeddings
                .get(&((index / d) as u32))
                .map_or(0.0, |row| row[index % d]),
            1 => self.query[index],
            2 => self.key[index],
            3 => self.value[index],
            4 => self.out_proj[index],
            5 => self.out_bias[index],
            _ => panic!("tensor index {tensor} out of range"),
        }
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub eps: f64,
    pub coordinates: usize,
    pub max_rel_error: f64,
    /// `(tensor, index, analytic, numeric)` at the worst coordinate.
    pub worst: (usize, usize, f64, f64),
}

/// Denominator floor for relative errors; below this both gradients are
/// compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

/// Number of coordinates sampled per [`grad_check`] run.
pub const GRAD_CHECK_COORDS: usize = 128;

/// Compares analytic gradients with central differences on random
/// parameters, inputs and upstream vectors for both pooling modes.
pub fn grad_check(seed: u64, eps: f64) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let dims = EncoderDims {
        vocab_size: 24,
        width: 8,
    };
    let mut worst = (0, 0, 0.0, 0.0);
    let mut max_rel = 0.0f64;
    let mut coords = 0;
    for pooling in [Pooling::Mean, Pooling::ClsSlot] {
        let mut params = EncoderParams::init(rng.gen(), dims)
            .expect("valid dims")
            .with_pooling(pooling);
        // non-zero bias so the tanh derivative varies across components
        for b in params.out_bias.iter_mut() {
            *b = rng.gen_range(-0.5..0.5);
        }
        let len = rng.gen_range(3..10);
        let mut ids: Vec<u32> = vec![crate::textproc::CLS];
        ids.extend((1..len).map(|_| rng.gen_range(1..dims.vocab_size as u32)));
        ids.extend([PAD, PAD]);
        let input = PackedInput {
            length: len,
            ids,
            separator_position: None,
            vocab: 0,
        };
        let upstream: Vec<f64> = (0..dims.width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads = params
            .encode_backward(&input, &upstream)
            .expect("valid input");
        let objective = |p: &EncoderParams| -> f64 {
            dot(&p.encode(&input).expect("valid input").0, &upstream)
        };
        let present: Vec<u32> = input.ids.iter().copied().filter(|&i| i != PAD).collect();
        for _ in 0..GRAD_CHECK_COORDS / 2 {
            let tensor = rng.gen_range(0..6);
            let len = params.tensors()[tensor].len();
            let index = if tensor == 0 && rng.gen_bool(0.8) {
                let tok = present[rng.gen_range(0..present.len())] as usize;
                tok * dims.width + rng.gen_range(0..dims.width)
            } else {
                rng.gen_range(0..len)
            };
            let orig = params.tensors()[tensor][index];
            params.tensors_mut()[tensor][index] = orig + eps;
            let plus = objective(&params);
            params.tensors_mut()[tensor][index] = orig - eps;
            let minus = objective(&params);
            params.tensors_mut()[tensor][index] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.get(tensor, index);
            let rel = relative_error(analytic, numeric);
            coords += 1;
            if rel > max_rel || coords == 1 {
                max_rel = max_rel.max(rel);
                worst = (tensor, index, analytic, numeric);
            }
        }
    }
    GradCheckReport {
        seed,
        eps,
        coordinates: coords,
        max_rel_error: max_rel,
        worst,
    }
}

/// `|a - b| / max(|a|, |b|, GRAD_CHECK_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_CHECK_FLOOR)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rows of `x` (`n × d`) mapped through `w` (`d × d`): `y_i = W x_i`.
fn project_rows(w: &[f64], x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut y = vec![0.0; n * d];
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        for a in 0..d {
            y[i * d + a] = dot(&w[a * d..(a + 1) * d], xi);
        }
    }
    y
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textproc::CLS;

    const DIMS: EncoderDims = EncoderDims {
        vocab_size: 40,
        width: 32,
    };

    fn input(ids: &[u32]) -> PackedInput {
        PackedInput {
            length: ids.iter().filter(|&&i| i != PAD).count(),
            ids: ids.to_vec(),
            separator_position: None,
            vocab: 0,
        }
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = EncoderParams::init(7, DIMS).unwrap();
        let b = EncoderParams::init(7, DIMS).unwrap();
        let c = EncoderParams::init(8, DIMS).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.token_embeddings, c.token_embeddings);
        a.check_shapes().unwrap();
        assert_eq!(a.token_embeddings.len(), 40 * 32);
        assert_eq!(a.query.len(), 32 * 32);
        assert_eq!(a.out_bias.len(), 32);
        let bound = 1.0 / 32f64.sqrt();
        assert!(a.query.iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(EncoderParams::init(
            1,
            EncoderDims {
                vocab_size: 3,
                width: 8
            }
        )
        .is_err());
        assert!(EncoderParams::init(
            1,
            EncoderDims {
                vocab_size: 8,
                width: 1
            }
        )
        .is_err());
    }

    #[test]
    fn encode_is_pure_and_bounded() {
        let p = EncoderParams::init(3, DIMS).unwrap();
        let x = input(&[CLS, 9, 9, 12]);
        let a = p.encode(&x).unwrap();
        assert_eq!(a, p.encode(&x).unwrap());
        assert!(a.0.iter().all(|v| v.abs() <= 1.0 && v.is_finite()));
        assert!(matches!(
            p.encode(&input(&[CLS, 40])),
            Err(Error::TokenOutOfRange { id: 40, .. })
        ));
    }

    #[test]
    fn pad_positions_are_ignored() {
        let p = EncoderParams::init(3, DIMS).unwrap();
        let cls_only = p.encode(&input(&[CLS])).unwrap();
        let padded = p.encode(&input(&[CLS, PAD, PAD, PAD])).unwrap();
        assert_eq!(cls_only, padded);
        // single position: attention output is v_cls, pooled = e + W_v e
        let d = DIMS.width;
        let e = &p.token_embeddings[CLS as usize * d..(CLS as usize + 1) * d];
        let mut pooled = e.to_vec();
        for a in 0..d {
            pooled[a] += dot(&p.value[a * d..(a + 1) * d], e);
        }
        for a in 0..d {
            let z = p.out_bias[a] + dot(&p.out_proj[a * d..(a + 1) * d], &pooled);
            assert!((z.tanh() - cls_only.0[a]).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_rows_are_distributions() {
        let p = EncoderParams::init(5, DIMS).unwrap();
        let w = p.attention_weights(&input(&[CLS, 4, 5, PAD, 6])).unwrap();
        assert_eq!(w.len(), 4);
        for row in w {
            assert_eq!(row.len(), 4);
            assert!(row.iter().all(|&a| a >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = EncoderParams::init(5, DIMS).unwrap();
        let g = p
            .encode_backward(&input(&[CLS, 4, 5]), &vec![0.0; DIMS.width])
            .unwrap();
        assert!(g.is_zero());
        assert!(p.encode_backward(&input(&[CLS]), &[1.0]).is_err());
    }

    #[test]
    fn absent_token_rows_have_zero_gradient() {
        let p = EncoderParams::init(5, DIMS).unwrap();
        let up: Vec<f64> = (0..DIMS.width).map(|i| (i as f64 * 0.37).sin()).collect();
        let g = p.encode_backward(&input(&[CLS, 4, 5]), &up).unwrap();
        assert!(g.embedding_row(17).iter().all(|&x| x == 0.0));
        assert!(g.embedding_row(4).iter().any(|&x| x != 0.0));
        assert_eq!(g.dense_embeddings().len(), 40 * 32);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            let report = grad_check(seed, 1e-5);
            assert!(report.coordinates >= 100);
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }

    #[test]
    fn coarse_step_is_reported() {
        let report = grad_check(1, 1e-1);
        assert!(report.max_rel_error > 1e-6, "{report:?}");
        assert_eq!(report, grad_check(1, 1e-1));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn permutation_of_non_cls_tokens_is_invisible(
                seed in 0u64..1000,
                ids in proptest::collection::vec(1u32..40, 1..12),
                rot in 0usize..12,
            ) {
                let p = EncoderParams::init(seed, DIMS).unwrap();
                let mut a = vec![CLS];
                a.extend(&ids);
                let mut shuffled = ids.clone();
                shuffled.reverse();
                let r = rot % shuffled.len();
                shuffled.rotate_left(r);
                let mut b = vec![CLS];
                b.extend(&shuffled);
                let ea = p.encode(&input(&a)).unwrap();
                let eb = p.encode(&input(&b)).unwrap();
                for (x, y) in ea.0.iter().zip(&eb.0) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
