//! Minimal f64 layers with hand-written backward passes.
//!
//! Parameters live in a [`ParamStore`]; layers only hold [`ParamId`]s. Each
//! `forward` returns its output plus whatever cache `backward` needs, and
//! `backward` accumulates into a [`Grads`] buffer shaped like the store.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Vision,
    Audio,
    Text,
    Decoder,
    Head,
    TokenHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Vision,
        ParamGroup::Audio,
        ParamGroup::Text,
        ParamGroup::Decoder,
        ParamGroup::Head,
        ParamGroup::TokenHead,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Vision => "vision",
            ParamGroup::Audio => "audio",
            ParamGroup::Text => "text",
            ParamGroup::Decoder => "decoder",
            ParamGroup::Head => "head",
            ParamGroup::TokenHead => "token_head",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown parameter group {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
    /// Whether decoupled weight decay applies (matrices yes; biases, norms no).
    pub decay: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Array2<f64>, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
        std: f64,
        rng: &mut R,
    ) -> ParamId {
        let value = Array2::from_shape_simple_fn(shape, || {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        });
        self.add(name, group, value, true)
    }

    pub fn constant(&mut self, name: impl Into<String>, group: ParamGroup, shape: (usize, usize), v: f64) -> ParamId {
        self.add(name, group, Array2::from_elem(shape, v), false)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        let mut g: Vec<_> = self.params.iter().map(|p| p.group).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            g: self
                .params
                .iter()
                .map(|p| Array2::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    /// Flat little-endian f64 dump in parameter order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.scalar_count() * 8);
        for p in &self.params {
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`ParamStore::to_bytes`] for a store of identical layout.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        if bytes.len() != self.scalar_count() * 8 {
            return Err(Error::Checkpoint(format!(
                "parameter blob has {} bytes, layout needs {}",
                bytes.len(),
                self.scalar_count() * 8
            )));
        }
        let mut chunks = bytes.chunks_exact(8);
        for p in &mut self.params {
            for v in p.value.iter_mut() {
                *v = f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub g: Vec<Array2<f64>>,
}

impl Grads {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.g[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.g[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.g.iter_mut().zip(&other.g) {
            *a += b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.g {
            a.mapv_inplace(|v| v * k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.g.iter().all(|a| a.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights `N(0, gain / sqrt(fan_in))`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.normal(format!("{name}.weight"), group, (fan_in, fan_out), gain / (fan_in as f64).sqrt(), rng);
        let b = store.constant(format!("{name}.bias"), group, (1, fan_out), 0.0);
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(store.get(self.w));
        y += store.get(self.b);
        y
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.accumulate(grads, x, dy);
        dy.dot(&store.get(self.w).t())
    }

    /// Parameter gradients only, when the input gradient is not needed.
    pub fn accumulate(&self, grads: &mut Grads, x: ArrayView2<f64>, dy: ArrayView2<f64>) {
        *grads.get_mut(self.w) += &x.t().dot(&dy);
        *grads.get_mut(self.b) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize) -> Self {
        LayerNorm {
            gamma: store.constant(format!("{name}.gamma"), group, (1, dim), 1.0),
            beta: store.constant(format!("{name}.beta"), group, (1, dim), 0.0),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let mut y = &xhat * store.get(self.gamma);
        y += store.get(self.beta);
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &LayerNormCache, dy: ArrayView2<f64>) -> Array2<f64> {
        *grads.get_mut(self.gamma) += &(&dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
        *grads.get_mut(self.beta) += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dxhat = &dy * store.get(self.gamma);
        let d = dy.ncols() as f64;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, (mut out, g)) in dx.rows_mut().into_iter().zip(dxhat.rows()).enumerate() {
            let xh = cache.xhat.row(i);
            let mean_g = g.sum() / d;
            let mean_gx = g.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
            let is = cache.inv_std[i];
            for ((o, &gj), &xj) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
                *o = is * (gj - mean_g - xj * mean_gx);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Scaled, causally masked row softmax in place: row `i` keeps columns `0..=i`.
fn causal_softmax(m: &mut Array2<f64>, scale: f64) {
    for (i, mut row) in m.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        let (live, dead) = row.split_at_mut(i + 1);
        let max = live.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) * scale;
        let mut sum = 0.0;
        for v in live.iter_mut() {
            *v = (*v * scale - max).exp();
            sum += *v;
        }
        live.iter_mut().for_each(|v| *v /= sum);
        dead.fill(0.0);
    }
}

/// Causal multi-head self-attention with a fused QKV projection.
#[derive(Debug, Clone, Copy)]
pub struct CausalSelfAttention {
    pub qkv: Linear,
    pub out: Linear,
    pub heads: usize,
    pub dim: usize,
}

pub struct AttentionCache {
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    merged: Array2<f64>,
}

impl CausalSelfAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, group: ParamGroup, dim: usize, heads: usize, rng: &mut R) -> Self {
        CausalSelfAttention {
            qkv: Linear::new(store, &format!("{name}.qkv"), group, dim, 3 * dim, 1.0, rng),
            out: Linear::new(store, &format!("{name}.out"), group, dim, dim, 0.5, rng),
            heads,
            dim,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> (Array2<f64>, AttentionCache) {
        let t = x.nrows();
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = self.qkv.forward(store, x);
        let mut merged = Array2::zeros((t, self.dim));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., self.dim + h * dh..self.dim + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * self.dim + h * dh..2 * self.dim + (h + 1) * dh]);
            let mut scores = q.dot(&k.t());
            causal_softmax(&mut scores, scale);
            merged.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&scores.dot(&v));
            probs.push(scores);
        }
        let y = self.out.forward(store, merged.view());
        (y, AttentionCache { qkv, probs, merged })
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, x: ArrayView2<f64>, cache: &AttentionCache, dy: ArrayView2<f64>) -> Array2<f64> {
        let t = dy.nrows();
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let dmerged = self.out.backward(store, grads, cache.merged.view(), dy);
        let mut dqkv = Array2::zeros((t, 3 * self.dim));
        for h in 0..self.heads {
            let (qs, ks, vs) = (h * dh, self.dim + h * dh, 2 * self.dim + h * dh);
            let q = cache.qkv.slice(s![.., qs..qs + dh]);
            let k = cache.qkv.slice(s![.., ks..ks + dh]);
            let v = cache.qkv.slice(s![.., vs..vs + dh]);
            let p = &cache.probs[h];
            let dout = dmerged.slice(s![.., h * dh..(h + 1) * dh]);
            let dp = dout.dot(&v.t());
            dqkv.slice_mut(s![.., vs..vs + dh]).assign(&p.t().dot(&dout));
            let mut ds = Array2::zeros((t, t));
            for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
                let (pr, dpr) = (&p.row(i).to_slice().expect("standard layout")[..=i], &dp.row(i).to_slice().expect("standard layout")[..=i]);
                let dot: f64 = pr.iter().zip(dpr).map(|(a, b)| a * b).sum();
                for ((d, &pv), &g) in row.as_slice_mut().expect("standard layout")[..=i].iter_mut().zip(pr).zip(dpr) {
                    *d = pv * (g - dot) * scale;
                }
            }
            dqkv.slice_mut(s![.., qs..qs + dh]).assign(&ds.dot(&k));
            dqkv.slice_mut(s![.., ks..ks + dh]).assign(&ds.t().dot(&q));
        }
        self.qkv.backward(store, grads, x, dqkv.view())
    }
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `+ ffn(ln2(x))` with GELU.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: CausalSelfAttention,
    pub ln2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct BlockCache {
    ln1: LayerNormCache,
    ln1_out: Array2<f64>,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ln2_out: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn: usize, rng: &mut R) -> Self {
        let g = ParamGroup::Decoder;
        Block {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), g, dim),
            attn: CausalSelfAttention::new(store, &format!("{name}.attn"), g, dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), g, dim),
            fc1: Linear::new(store, &format!("{name}.fc1"), g, dim, ffn, 1.0, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), g, ffn, dim, 0.5, rng),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: ArrayView2<f64>) -> (Array2<f64>, BlockCache) {
        let (ln1_out, ln1) = self.ln1.forward(store, x);
        let (a, attn) = self.attn.forward(store, ln1_out.view());
        let mid = &x + &a;
        let (ln2_out, ln2) = self.ln2.forward(store, mid.view());
        let pre_act = self.fc1.forward(store, ln2_out.view());
        let act = pre_act.mapv(gelu);
        let f = self.fc2.forward(store, act.view());
        let y = &mid + &f;
        (
            y,
            BlockCache {
                ln1,
                ln1_out,
                attn,
                ln2,
                ln2_out,
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&self, store: &ParamStore, grads: &mut Grads, cache: &BlockCache, dy: ArrayView2<f64>) -> Array2<f64> {
        let dact = self.fc2.backward(store, grads, cache.act.view(), dy);
        let dpre = &dact * &cache.pre_act.mapv(gelu_grad);
        let dln2 = self.fc1.backward(store, grads, cache.ln2_out.view(), dpre.view());
        let mut dmid = self.ln2.backward(store, grads, &cache.ln2, dln2.view());
        dmid += &dy;
        let da = self
            .attn
            .backward(store, grads, cache.ln1_out.view(), &cache.attn, dmid.view());
        let mut dx = self.ln1.backward(store, grads, &cache.ln1, da.view());
        dx += &dmid;
        dx
    }
}

/// Fixed sinusoidal positions, `rows × dim`.
pub fn sinusoidal_positions(rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |(p, i)| {
        let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
        let a = p as f64 * rate;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}
