//! Encoder-decoder transformer with hand-written backward pass.
//!
//! Pre-norm residual blocks with scale-only RMS normalization, a learned
//! relative-position bias per stack (bucketed, shared by all layers of the
//! stack, none on cross-attention), gated-GELU feed-forward, no bias
//! vectors, a shared input embedding and a separate output projection.
//! Attention logits are not divided by sqrt(d_kv); the query init is
//! scaled down instead. Masks are additive -1e9 so a fully masked row
//! still yields a finite (uniform) softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::TransformerConfig;
use super::linalg::{add_a_bt, add_at_b, gemm, matmul, View};
use super::tokenizer::PAD_ID;
use super::ModelError;

const NEG_INF: f64 = -1e9;
const NORM_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone)]
struct AttnIdx {
    q: usize,
    k: usize,
    v: usize,
    o: usize,
}

#[derive(Debug, Clone)]
struct FfnIdx {
    wi0: usize,
    wi1: usize,
    wo: usize,
}

#[derive(Debug, Clone)]
struct EncLayerIdx {
    attn_norm: usize,
    attn: AttnIdx,
    ffn_norm: usize,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct DecLayerIdx {
    self_norm: usize,
    self_attn: AttnIdx,
    cross_norm: usize,
    cross_attn: AttnIdx,
    ffn_norm: usize,
    ffn: FfnIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    enc_bias: usize,
    enc: Vec<EncLayerIdx>,
    enc_norm: usize,
    dec_bias: usize,
    dec: Vec<DecLayerIdx>,
    dec_norm: usize,
    lm_head: usize,
}

/// Names, shapes and init scales of every parameter, in storage order.
fn build_layout(c: &TransformerConfig) -> (Layout, Vec<(String, Vec<usize>, f64)>) {
    let (d, f, hk, v) = (c.d_model, c.d_ff, c.inner_dim(), c.vocab_size);
    let mut specs: Vec<(String, Vec<usize>, f64)> = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, std: f64| {
        specs.push((name, shape, std));
        specs.len() - 1
    };
    let df = d as f64;
    let norm_init = -1.0; // marker: constant ones
    let attn = |add: &mut dyn FnMut(String, Vec<usize>, f64) -> usize, p: &str| AttnIdx {
        q: add(format!("{p}.q"), vec![d, hk], (df * c.d_kv as f64).powf(-0.5)),
        k: add(format!("{p}.k"), vec![d, hk], df.powf(-0.5)),
        v: add(format!("{p}.v"), vec![d, hk], df.powf(-0.5)),
        o: add(format!("{p}.o"), vec![hk, d], (hk as f64).powf(-0.5)),
    };
    let ffn = |add: &mut dyn FnMut(String, Vec<usize>, f64) -> usize, p: &str| FfnIdx {
        wi0: add(format!("{p}.wi0"), vec![d, f], df.powf(-0.5)),
        wi1: add(format!("{p}.wi1"), vec![d, f], df.powf(-0.5)),
        wo: add(format!("{p}.wo"), vec![f, d], (f as f64).powf(-0.5)),
    };
    let embed = add("shared.embedding".into(), vec![v, d], 1.0);
    let enc_bias = add("encoder.relative_bias".into(), vec![c.relative_buckets, c.num_heads], df.powf(-0.5));
    let mut enc = Vec::new();
    for l in 0..c.num_layers {
        let p = format!("encoder.layer.{l}");
        enc.push(EncLayerIdx {
            attn_norm: add(format!("{p}.attn_norm"), vec![d], norm_init),
            attn: attn(&mut add, &format!("{p}.attn")),
            ffn_norm: add(format!("{p}.ffn_norm"), vec![d], norm_init),
            ffn: ffn(&mut add, &format!("{p}.ffn")),
        });
    }
    let enc_norm = add("encoder.final_norm".into(), vec![d], norm_init);
    let dec_bias = add("decoder.relative_bias".into(), vec![c.relative_buckets, c.num_heads], df.powf(-0.5));
    let mut dec = Vec::new();
    for l in 0..c.num_layers {
        let p = format!("decoder.layer.{l}");
        dec.push(DecLayerIdx {
            self_norm: add(format!("{p}.self_norm"), vec![d], norm_init),
            self_attn: attn(&mut add, &format!("{p}.self_attn")),
            cross_norm: add(format!("{p}.cross_norm"), vec![d], norm_init),
            cross_attn: attn(&mut add, &format!("{p}.cross_attn")),
            ffn_norm: add(format!("{p}.ffn_norm"), vec![d], norm_init),
            ffn: ffn(&mut add, &format!("{p}.ffn")),
        });
    }
    let dec_norm = add("decoder.final_norm".into(), vec![d], norm_init);
    let lm_head = add("lm_head".into(), vec![d, v], df.powf(-0.5));
    let layout = Layout {
        embed,
        enc_bias,
        enc,
        enc_norm,
        dec_bias,
        dec,
        dec_norm,
        lm_head,
    };
    (layout, specs)
}

/// Whether a parameter takes weight decay (norm gains and position biases do not).
pub fn decays(name: &str) -> bool {
    !(name.ends_with("norm") || name.ends_with("relative_bias"))
}

/// Relative-position bucket of `memory - query`: exact for small offsets,
/// log-spaced up to `max_distance`, sign-split when bidirectional.
pub fn relative_bucket(relative: i64, bidirectional: bool, buckets: usize, max_distance: usize) -> usize {
    let mut nb = buckets as i64;
    let mut ret = 0;
    let n = if bidirectional {
        nb /= 2;
        if relative > 0 {
            ret += nb;
        }
        relative.abs()
    } else {
        (-relative).max(0)
    };
    let max_exact = nb / 2;
    let bucket = if n < max_exact {
        n
    } else {
        let scaled = ((n as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
            * (nb - max_exact) as f64) as i64;
        (max_exact + scaled).min(nb - 1)
    };
    (ret + bucket) as usize
}

/// Logits for a padded batch, `[batch][position][vocab]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub batch: usize,
    pub len: usize,
    pub vocab: usize,
    pub data: Vec<f64>,
}

impl Logits {
    pub fn at(&self, b: usize, t: usize) -> &[f64] {
        let o = (b * self.len + t) * self.vocab;
        &self.data[o..o + self.vocab]
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    x: Vec<f64>,
    inv: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AttnCache {
    xq: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    sq: usize,
    sk: usize,
}

#[derive(Debug, Clone)]
struct FfnCache {
    x: Vec<f64>,
    h0: Vec<f64>,
    h1: Vec<f64>,
    act: Vec<f64>,
    gated: Vec<f64>,
}

#[derive(Debug, Clone)]
struct EncLayerCache {
    n1: NormCache,
    attn: AttnCache,
    d1: Option<Vec<f64>>,
    n2: NormCache,
    ffn: FfnCache,
    d2: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct DecLayerCache {
    n1: NormCache,
    self_attn: AttnCache,
    d1: Option<Vec<f64>>,
    n2: NormCache,
    cross: AttnCache,
    d2: Option<Vec<f64>>,
    n3: NormCache,
    ffn: FfnCache,
    d3: Option<Vec<f64>>,
}

/// Everything the backward pass needs from one example's forward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    src: Vec<u32>,
    dec_in: Vec<u32>,
    enc_emb_drop: Option<Vec<f64>>,
    enc_layers: Vec<EncLayerCache>,
    enc_final: NormCache,
    enc_out_drop: Option<Vec<f64>>,
    enc_out: Vec<f64>,
    dec_emb_drop: Option<Vec<f64>>,
    dec_layers: Vec<DecLayerCache>,
    dec_final: NormCache,
    dec_out_drop: Option<Vec<f64>>,
    dec_out: Vec<f64>,
}

/// Encoder output for one source, reused across decoding steps.
#[derive(Debug, Clone)]
pub struct Encoded {
    out: Vec<f64>,
    valid: Vec<bool>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
}

fn softmax_rows(s: &mut [f64], cols: usize) {
    for row in s.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn add_into(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn apply(&mut self, x: &mut [f64]) -> Option<Vec<f64>> {
        let rng = self.rng.as_deref_mut()?;
        if self.p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| if rng.random::<f64>() < self.p { 0.0 } else { keep })
            .collect();
        for (v, m) in x.iter_mut().zip(&mask) {
            *v *= m;
        }
        Some(mask)
    }
}

fn undrop(mask: &Option<Vec<f64>>, dx: &mut [f64]) {
    if let Some(m) = mask {
        for (g, s) in dx.iter_mut().zip(m) {
            *g *= s;
        }
    }
}

pub struct Transformer {
    config: TransformerConfig,
    params: Vec<Tensor>,
    layout: Layout,
}

impl std::fmt::Debug for Transformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Transformer")
            .field("config", &self.config)
            .field("parameters", &self.parameter_count())
            .finish()
    }
}

impl Clone for Transformer {
    fn clone(&self) -> Self {
        Transformer {
            config: self.config.clone(),
            params: self.params.clone(),
            layout: self.layout.clone(),
        }
    }
}

impl Transformer {
    /// Random init: normal with width-scaled deviations, norm gains at 1.
    pub fn new(config: &TransformerConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|(name, shape, std)| {
                let n: usize = shape.iter().product();
                let data = if std < 0.0 {
                    vec![1.0; n]
                } else {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                };
                Tensor { name, shape, data }
            })
            .collect();
        Ok(Transformer {
            config: config.clone(),
            params,
            layout,
        })
    }

    /// Builds a model from named tensors; names and shapes must match the
    /// layout implied by `config`.
    pub fn from_tensors(config: &TransformerConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = build_layout(config);
        if tensors.len() != specs.len() {
            return Err(ModelError::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (t, (name, shape, _)) in tensors.iter().zip(&specs) {
            if &t.name != name {
                return Err(ModelError::Shape(format!("expected tensor {name}, found {}", t.name)));
            }
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(ModelError::Shape(format!(
                    "tensor {name}: shape {:?} does not match expected {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(Transformer {
            config: config.clone(),
            params: tensors,
            layout,
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|t| vec![0.0; t.len()]).collect()
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.params[i].data
    }

    fn check_ids(&self, ids: &[u32]) -> Result<(), ModelError> {
        match ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            Some(&id) => Err(ModelError::TokenOutOfRange {
                id,
                vocab: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn embed(&self, ids: &[u32]) -> Vec<f64> {
        let d = self.config.d_model;
        let e = self.p(self.layout.embed);
        let mut x = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let o = id as usize * d;
            x.extend_from_slice(&e[o..o + d]);
        }
        x
    }

    /// `[heads][sq][sk]` position bias plus additive mask.
    fn bias_mask(&self, rel: Option<usize>, sq: usize, sk: usize, bidirectional: bool, allowed: impl Fn(usize, usize) -> bool) -> Vec<f64> {
        let c = &self.config;
        let h = c.num_heads;
        let mut out = vec![0.0; h * sq * sk];
        for i in 0..sq {
            for j in 0..sk {
                let masked = if allowed(i, j) { 0.0 } else { NEG_INF };
                let bucket = rel.map(|_| relative_bucket(j as i64 - i as i64, bidirectional, c.relative_buckets, c.relative_max_distance));
                for hh in 0..h {
                    let b = match (rel, bucket) {
                        (Some(r), Some(bk)) => self.p(r)[bk * h + hh],
                        _ => 0.0,
                    };
                    out[(hh * sq + i) * sk + j] = b + masked;
                }
            }
        }
        out
    }

    fn rms(&self, x: &[f64], g: usize) -> (Vec<f64>, NormCache) {
        let d = self.config.d_model;
        let gain = self.p(g);
        let mut y = vec![0.0; x.len()];
        let mut inv = Vec::with_capacity(x.len() / d);
        for (row, out) in x.chunks(d).zip(y.chunks_mut(d)) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + NORM_EPS).sqrt();
            for k in 0..d {
                out[k] = row[k] * r * gain[k];
            }
            inv.push(r);
        }
        (y, NormCache { x: x.to_vec(), inv })
    }

    fn rms_back(&self, cache: &NormCache, g: usize, dy: &[f64], dx: &mut [f64], grads: &mut [Vec<f64>]) {
        let d = self.config.d_model;
        let gain = self.p(g);
        for (r, ((x, dyr), dxr)) in cache.x.chunks(d).zip(dy.chunks(d)).zip(dx.chunks_mut(d)).enumerate() {
            let inv = cache.inv[r];
            let mut dot = 0.0;
            for k in 0..d {
                grads[g][k] += dyr[k] * x[k] * inv;
                dot += gain[k] * dyr[k] * x[k];
            }
            let coef = inv * inv * inv * dot / d as f64;
            for k in 0..d {
                dxr[k] += inv * gain[k] * dyr[k] - coef * x[k];
            }
        }
    }

    fn attn(&self, w: &AttnIdx, xq: &[f64], xkv: &[f64], bias: &[f64]) -> (Vec<f64>, AttnCache) {
        let c = &self.config;
        let (d, hk, dk, h) = (c.d_model, c.inner_dim(), c.d_kv, c.num_heads);
        let (sq, sk) = (xq.len() / d, xkv.len() / d);
        let q = matmul(xq, sq, d, self.p(w.q), hk);
        let k = matmul(xkv, sk, d, self.p(w.k), hk);
        let v = matmul(xkv, sk, d, self.p(w.v), hk);
        let mut probs = bias.to_vec();
        let mut ctx = vec![0.0; sq * hk];
        for hh in 0..h {
            let s = &mut probs[hh * sq * sk..(hh + 1) * sq * sk];
            gemm(sq, dk, sk, 1.0, &q, View::cols(hk, hh * dk), &k, View::cols_t(hk, hh * dk), 1.0, s, View::rows(sk));
            softmax_rows(s, sk);
            gemm(sq, sk, dk, 1.0, s, View::rows(sk), &v, View::cols(hk, hh * dk), 0.0, &mut ctx, View::cols(hk, hh * dk));
        }
        let out = matmul(&ctx, sq, hk, self.p(w.o), d);
        (
            out,
            AttnCache {
                xq: xq.to_vec(),
                q,
                k,
                v,
                probs,
                ctx,
                sq,
                sk,
            },
        )
    }

    /// Backward through attention. `dxkv` may alias the query side for
    /// self-attention; the caller adds it where it belongs.
    #[allow(clippy::too_many_arguments)]
    fn attn_back(
        &self,
        w: &AttnIdx,
        a: &AttnCache,
        xkv: &[f64],
        dout: &[f64],
        dxq: &mut [f64],
        dxkv: &mut [f64],
        dbias: Option<&mut [f64]>,
        grads: &mut [Vec<f64>],
    ) {
        let c = &self.config;
        let (d, hk, dk, h) = (c.d_model, c.inner_dim(), c.d_kv, c.num_heads);
        let (sq, sk) = (a.sq, a.sk);
        add_at_b(&a.ctx, sq, hk, dout, d, &mut grads[w.o]);
        let mut dctx = vec![0.0; sq * hk];
        add_a_bt(dout, sq, d, self.p(w.o), hk, &mut dctx);
        let mut dq = vec![0.0; sq * hk];
        let mut dkm = vec![0.0; sk * hk];
        let mut dv = vec![0.0; sk * hk];
        let mut ds = vec![0.0; sq * sk];
        let mut dbias = dbias;
        for hh in 0..h {
            let p = &a.probs[hh * sq * sk..(hh + 1) * sq * sk];
            let col = hh * dk;
            // dP = dctx_h · v_hᵀ
            gemm(sq, dk, sk, 1.0, &dctx, View::cols(hk, col), &a.v, View::cols_t(hk, col), 0.0, &mut ds, View::rows(sk));
            // dv_h += Pᵀ · dctx_h
            gemm(sk, sq, dk, 1.0, p, View::trans(sk), &dctx, View::cols(hk, col), 1.0, &mut dv, View::cols(hk, col));
            for i in 0..sq {
                let row = i * sk;
                let dot: f64 = (0..sk).map(|j| ds[row + j] * p[row + j]).sum();
                for j in 0..sk {
                    ds[row + j] = p[row + j] * (ds[row + j] - dot);
                }
            }
            if let Some(db) = dbias.as_deref_mut() {
                add_into(&mut db[hh * sq * sk..(hh + 1) * sq * sk], &ds);
            }
            // dq_h = dS · k_h ; dk_h = dSᵀ · q_h
            gemm(sq, sk, dk, 1.0, &ds, View::rows(sk), &a.k, View::cols(hk, col), 1.0, &mut dq, View::cols(hk, col));
            gemm(sk, sq, dk, 1.0, &ds, View::trans(sk), &a.q, View::cols(hk, col), 1.0, &mut dkm, View::cols(hk, col));
        }
        add_at_b(&a.xq, sq, d, &dq, hk, &mut grads[w.q]);
        add_a_bt(&dq, sq, hk, self.p(w.q), d, dxq);
        add_at_b(xkv, sk, d, &dkm, hk, &mut grads[w.k]);
        add_a_bt(&dkm, sk, hk, self.p(w.k), d, dxkv);
        add_at_b(xkv, sk, d, &dv, hk, &mut grads[w.v]);
        add_a_bt(&dv, sk, hk, self.p(w.v), d, dxkv);
    }

    fn ffn(&self, w: &FfnIdx, x: &[f64]) -> (Vec<f64>, FfnCache) {
        let (d, f) = (self.config.d_model, self.config.d_ff);
        let s = x.len() / d;
        let h0 = matmul(x, s, d, self.p(w.wi0), f);
        let h1 = matmul(x, s, d, self.p(w.wi1), f);
        let act: Vec<f64> = h0.iter().map(|&v| gelu(v).0).collect();
        let gated: Vec<f64> = act.iter().zip(&h1).map(|(a, b)| a * b).collect();
        let out = matmul(&gated, s, f, self.p(w.wo), d);
        (
            out,
            FfnCache {
                x: x.to_vec(),
                h0,
                h1,
                act,
                gated,
            },
        )
    }

    fn ffn_back(&self, w: &FfnIdx, cch: &FfnCache, dout: &[f64], dx: &mut [f64], grads: &mut [Vec<f64>]) {
        let (d, f) = (self.config.d_model, self.config.d_ff);
        let s = cch.x.len() / d;
        add_at_b(&cch.gated, s, f, dout, d, &mut grads[w.wo]);
        let mut dg = vec![0.0; s * f];
        add_a_bt(dout, s, d, self.p(w.wo), f, &mut dg);
        let mut dh0 = vec![0.0; s * f];
        let mut dh1 = vec![0.0; s * f];
        for i in 0..s * f {
            dh1[i] = dg[i] * cch.act[i];
            dh0[i] = dg[i] * cch.h1[i] * gelu(cch.h0[i]).1;
        }
        add_at_b(&cch.x, s, d, &dh0, f, &mut grads[w.wi0]);
        add_at_b(&cch.x, s, d, &dh1, f, &mut grads[w.wi1]);
        add_a_bt(&dh0, s, f, self.p(w.wi0), d, dx);
        add_a_bt(&dh1, s, f, self.p(w.wi1), d, dx);
    }

    fn encode_inner(&self, src: &[u32], valid: &[bool], drop: &mut Dropout) -> (Vec<f64>, Vec<EncLayerCache>, NormCache, Option<Vec<f64>>, Option<Vec<f64>>) {
        let s = src.len();
        let mut h = self.embed(src);
        let emb_drop = drop.apply(&mut h);
        let bias = self.bias_mask(Some(self.layout.enc_bias), s, s, true, |_, j| valid[j]);
        let mut caches = Vec::with_capacity(self.layout.enc.len());
        for l in &self.layout.enc {
            let (n1, nc1) = self.rms(&h, l.attn_norm);
            let (mut a, ac) = self.attn(&l.attn, &n1, &n1, &bias);
            let d1 = drop.apply(&mut a);
            add_into(&mut h, &a);
            let (n2, nc2) = self.rms(&h, l.ffn_norm);
            let (mut f, fc) = self.ffn(&l.ffn, &n2);
            let d2 = drop.apply(&mut f);
            add_into(&mut h, &f);
            caches.push(EncLayerCache {
                n1: nc1,
                attn: ac,
                d1,
                n2: nc2,
                ffn: fc,
                d2,
            });
        }
        let (mut out, fin) = self.rms(&h, self.layout.enc_norm);
        let out_drop = drop.apply(&mut out);
        (out, caches, fin, emb_drop, out_drop)
    }

    fn decode_inner(&self, dec_in: &[u32], enc_out: &[f64], valid: &[bool], drop: &mut Dropout) -> (Vec<f64>, Vec<DecLayerCache>, NormCache, Option<Vec<f64>>, Option<Vec<f64>>) {
        let t = dec_in.len();
        let s = valid.len();
        let mut h = self.embed(dec_in);
        let emb_drop = drop.apply(&mut h);
        let self_bias = self.bias_mask(Some(self.layout.dec_bias), t, t, false, |i, j| j <= i);
        let cross_mask = self.bias_mask(None, t, s, true, |_, j| valid[j]);
        let mut caches = Vec::with_capacity(self.layout.dec.len());
        for l in &self.layout.dec {
            let (n1, nc1) = self.rms(&h, l.self_norm);
            let (mut a, ac) = self.attn(&l.self_attn, &n1, &n1, &self_bias);
            let d1 = drop.apply(&mut a);
            add_into(&mut h, &a);
            let (n2, nc2) = self.rms(&h, l.cross_norm);
            let (mut x, xc) = self.attn(&l.cross_attn, &n2, enc_out, &cross_mask);
            let d2 = drop.apply(&mut x);
            add_into(&mut h, &x);
            let (n3, nc3) = self.rms(&h, l.ffn_norm);
            let (mut f, fc) = self.ffn(&l.ffn, &n3);
            let d3 = drop.apply(&mut f);
            add_into(&mut h, &f);
            caches.push(DecLayerCache {
                n1: nc1,
                self_attn: ac,
                d1,
                n2: nc2,
                cross: xc,
                d2,
                n3: nc3,
                ffn: fc,
                d3,
            });
        }
        let (mut out, fin) = self.rms(&h, self.layout.dec_norm);
        let out_drop = drop.apply(&mut out);
        (out, caches, fin, emb_drop, out_drop)
    }

    /// Logits `[dec_in.len()][vocab]` for one example, plus the cache for
    /// [`Transformer::backward`]. Dropout is active only when `rng` is given.
    pub fn forward_example(
        &self,
        src: &[u32],
        valid: &[bool],
        dec_in: &[u32],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Vec<f64>, Cache), ModelError> {
        self.check_ids(src)?;
        self.check_ids(dec_in)?;
        assert_eq!(src.len(), valid.len());
        let mut drop = Dropout {
            p: self.config.dropout,
            rng,
        };
        let (enc_out, enc_layers, enc_final, enc_emb_drop, enc_out_drop) = self.encode_inner(src, valid, &mut drop);
        let (dec_out, dec_layers, dec_final, dec_emb_drop, dec_out_drop) = self.decode_inner(dec_in, &enc_out, valid, &mut drop);
        let logits = matmul(&dec_out, dec_in.len(), self.config.d_model, self.p(self.layout.lm_head), self.config.vocab_size);
        Ok((
            logits,
            Cache {
                src: src.to_vec(),
                dec_in: dec_in.to_vec(),
                enc_emb_drop,
                enc_layers,
                enc_final,
                enc_out_drop,
                enc_out,
                dec_emb_drop,
                dec_layers,
                dec_final,
                dec_out_drop,
                dec_out,
            },
        ))
    }

    /// Accumulates parameter gradients for one example given the gradient
    /// of the loss with respect to its logits.
    pub fn backward(&self, cache: &Cache, dlogits: &[f64], grads: &mut [Vec<f64>]) {
        let c = &self.config;
        let (d, v, h) = (c.d_model, c.vocab_size, c.num_heads);
        let (t, s) = (cache.dec_in.len(), cache.src.len());
        let ly = &self.layout;

        add_at_b(&cache.dec_out, t, d, dlogits, v, &mut grads[ly.lm_head]);
        let mut dh_out = vec![0.0; t * d];
        add_a_bt(dlogits, t, v, self.p(ly.lm_head), d, &mut dh_out);
        undrop(&cache.dec_out_drop, &mut dh_out);
        let mut dh = vec![0.0; t * d];
        self.rms_back(&cache.dec_final, ly.dec_norm, &dh_out, &mut dh, grads);

        let mut denc = vec![0.0; s * d];
        let mut dself_bias = vec![0.0; h * t * t];
        for (l, lc) in ly.dec.iter().zip(&cache.dec_layers).rev() {
            let mut df = dh.clone();
            undrop(&lc.d3, &mut df);
            let mut dn = vec![0.0; t * d];
            self.ffn_back(&l.ffn, &lc.ffn, &df, &mut dn, grads);
            self.rms_back(&lc.n3, l.ffn_norm, &dn, &mut dh, grads);

            let mut dx = dh.clone();
            undrop(&lc.d2, &mut dx);
            let mut dn = vec![0.0; t * d];
            self.attn_back(&l.cross_attn, &lc.cross, &cache.enc_out, &dx, &mut dn, &mut denc, None, grads);
            self.rms_back(&lc.n2, l.cross_norm, &dn, &mut dh, grads);

            let mut da = dh.clone();
            undrop(&lc.d1, &mut da);
            let mut dn = vec![0.0; t * d];
            let mut dkv = vec![0.0; t * d];
            let xkv = lc.self_attn.xq.clone();
            self.attn_back(&l.self_attn, &lc.self_attn, &xkv, &da, &mut dn, &mut dkv, Some(&mut dself_bias), grads);
            add_into(&mut dn, &dkv);
            self.rms_back(&lc.n1, l.self_norm, &dn, &mut dh, grads);
        }
        undrop(&cache.dec_emb_drop, &mut dh);
        self.scatter_bias(&dself_bias, t, t, false, ly.dec_bias, grads);
        self.scatter_embed(&cache.dec_in, &dh, grads);

        undrop(&cache.enc_out_drop, &mut denc);
        let mut dh = vec![0.0; s * d];
        self.rms_back(&cache.enc_final, ly.enc_norm, &denc, &mut dh, grads);
        let mut denc_bias = vec![0.0; h * s * s];
        for (l, lc) in ly.enc.iter().zip(&cache.enc_layers).rev() {
            let mut df = dh.clone();
            undrop(&lc.d2, &mut df);
            let mut dn = vec![0.0; s * d];
            self.ffn_back(&l.ffn, &lc.ffn, &df, &mut dn, grads);
            self.rms_back(&lc.n2, l.ffn_norm, &dn, &mut dh, grads);

            let mut da = dh.clone();
            undrop(&lc.d1, &mut da);
            let mut dn = vec![0.0; s * d];
            let mut dkv = vec![0.0; s * d];
            let xkv = lc.attn.xq.clone();
            self.attn_back(&l.attn, &lc.attn, &xkv, &da, &mut dn, &mut dkv, Some(&mut denc_bias), grads);
            add_into(&mut dn, &dkv);
            self.rms_back(&lc.n1, l.attn_norm, &dn, &mut dh, grads);
        }
        undrop(&cache.enc_emb_drop, &mut dh);
        self.scatter_bias(&denc_bias, s, s, true, ly.enc_bias, grads);
        self.scatter_embed(&cache.src, &dh, grads);
    }

    fn scatter_embed(&self, ids: &[u32], dx: &[f64], grads: &mut [Vec<f64>]) {
        let d = self.config.d_model;
        let g = &mut grads[self.layout.embed];
        for (row, &id) in dx.chunks(d).zip(ids) {
            add_into(&mut g[id as usize * d..(id as usize + 1) * d], row);
        }
    }

    fn scatter_bias(&self, dfull: &[f64], sq: usize, sk: usize, bidirectional: bool, idx: usize, grads: &mut [Vec<f64>]) {
        let c = &self.config;
        let h = c.num_heads;
        for i in 0..sq {
            for j in 0..sk {
                let b = relative_bucket(j as i64 - i as i64, bidirectional, c.relative_buckets, c.relative_max_distance);
                for hh in 0..h {
                    grads[idx][b * h + hh] += dfull[(hh * sq + i) * sk + j];
                }
            }
        }
    }

    /// Batched forward pass without dropout. Sources and decoder inputs are
    /// right-padded with the pad id; padded source positions are masked.
    pub fn forward(&self, src: &[Vec<u32>], dec_in: &[Vec<u32>]) -> Result<Logits, ModelError> {
        if src.len() != dec_in.len() {
            return Err(ModelError::Shape(format!(
                "{} sources but {} targets",
                src.len(),
                dec_in.len()
            )));
        }
        let s_max = src.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let t_max = dec_in.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let v = self.config.vocab_size;
        let mut data = Vec::with_capacity(src.len() * t_max * v);
        for (s, t) in src.iter().zip(dec_in) {
            let mut sp = s.clone();
            sp.resize(s_max, PAD_ID);
            let valid: Vec<bool> = (0..s_max).map(|i| i < s.len() && s[i] != PAD_ID).collect();
            let mut tp = t.clone();
            tp.resize(t_max, PAD_ID);
            let (logits, _) = self.forward_example(&sp, &valid, &tp, None)?;
            data.extend(logits);
        }
        Ok(Logits {
            batch: src.len(),
            len: t_max,
            vocab: v,
            data,
        })
    }

    /// Runs the encoder once for decoding.
    pub fn encode(&self, src: &[u32]) -> Result<Encoded, ModelError> {
        self.check_ids(src)?;
        let valid: Vec<bool> = src.iter().map(|&id| id != PAD_ID).collect();
        let mut drop = Dropout { p: 0.0, rng: None };
        let (out, ..) = self.encode_inner(src, &valid, &mut drop);
        Ok(Encoded { out, valid })
    }

    /// Logits of the last decoder position for the given decoder input.
    pub fn next_logits(&self, enc: &Encoded, dec_in: &[u32]) -> Result<Vec<f64>, ModelError> {
        self.check_ids(dec_in)?;
        let mut drop = Dropout { p: 0.0, rng: None };
        let (out, ..) = self.decode_inner(dec_in, &enc.out, &enc.valid, &mut drop);
        let d = self.config.d_model;
        let last = &out[(dec_in.len() - 1) * d..];
        Ok(matmul(last, 1, d, self.p(self.layout.lm_head), self.config.vocab_size))
    }
}
