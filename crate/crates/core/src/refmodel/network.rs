//! Post-layer-norm transformer encoder with a tied masked-LM head.
//!
//! All base parameters live in one flat buffer described by [`Layout`]. Novel
//! tokens live outside it in [`NovelRows`]: one vector per token that is both
//! its input embedding and its output-projection row, plus one output bias.

use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::{
    add_row_bias, axpy, col_sum_acc, dot, gelu, gelu_grad, matmul, matmul_a_bt, matmul_at_b_acc,
};
use super::ModelConfig;

const LN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub off: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(self) -> Range<usize> {
        self.off..self.off + self.len
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub wq: Slot,
    pub bq: Slot,
    pub wk: Slot,
    pub bk: Slot,
    pub wv: Slot,
    pub bv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln1_g: Slot,
    pub ln1_b: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
    pub ln2_g: Slot,
    pub ln2_b: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub d: usize,
    pub ffn: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_len: usize,
    pub tok_emb: Slot,
    pub pos_emb: Slot,
    pub emb_ln_g: Slot,
    pub emb_ln_b: Slot,
    pub layers: Vec<LayerLayout>,
    pub head_w: Slot,
    pub head_b: Slot,
    pub head_ln_g: Slot,
    pub head_ln_b: Slot,
    pub out_bias: Slot,
    pub total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, len: usize) -> Slot {
        let s = Slot { off: self.0, len };
        self.0 += len;
        s
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f, v, l) = (cfg.model_dim, cfg.ffn_dim, cfg.vocabulary.len(), cfg.max_sequence_length);
        let mut a = Alloc(0);
        let tok_emb = a.take(v * d);
        let pos_emb = a.take(l * d);
        let emb_ln_g = a.take(d);
        let emb_ln_b = a.take(d);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerLayout {
                wq: a.take(d * d),
                bq: a.take(d),
                wk: a.take(d * d),
                bk: a.take(d),
                wv: a.take(d * d),
                bv: a.take(d),
                wo: a.take(d * d),
                bo: a.take(d),
                ln1_g: a.take(d),
                ln1_b: a.take(d),
                w1: a.take(d * f),
                b1: a.take(f),
                w2: a.take(f * d),
                b2: a.take(d),
                ln2_g: a.take(d),
                ln2_b: a.take(d),
            })
            .collect();
        let head_w = a.take(d * d);
        let head_b = a.take(d);
        let head_ln_g = a.take(d);
        let head_ln_b = a.take(d);
        let out_bias = a.take(v);
        Layout {
            d,
            ffn: f,
            heads: cfg.n_heads,
            vocab: v,
            max_len: l,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
            head_w,
            head_b,
            head_ln_g,
            head_ln_b,
            out_bias,
            total: a.0,
        }
    }

    fn gains(&self) -> Vec<Slot> {
        let mut g = vec![self.emb_ln_g, self.head_ln_g];
        for l in &self.layers {
            g.push(l.ln1_g);
            g.push(l.ln2_g);
        }
        g
    }

    /// Weight matrices and embeddings: the parameters subject to weight decay.
    pub fn matrices(&self) -> Vec<Slot> {
        let mut m = vec![self.tok_emb, self.pos_emb, self.head_w];
        for l in &self.layers {
            m.extend([l.wq, l.wk, l.wv, l.wo, l.w1, l.w2]);
        }
        m
    }

    /// Normal(0, embedding_std) embeddings, scaled-normal dense weights, unit
    /// layer-norm gains, zero biases.
    pub fn init<R: Rng>(&self, embedding_std: f64, rng: &mut R) -> Vec<f64> {
        let mut p = vec![0.0; self.total];
        let emb = Normal::new(0.0, embedding_std).expect("finite std");
        for s in [self.tok_emb, self.pos_emb] {
            for x in &mut p[s.range()] {
                *x = emb.sample(rng);
            }
        }
        let mut dense = |slot: Slot, fan_in: usize, p: &mut [f64]| {
            let n = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("finite std");
            for x in &mut p[slot.range()] {
                *x = n.sample(rng);
            }
        };
        for l in &self.layers {
            for w in [l.wq, l.wk, l.wv, l.wo] {
                dense(w, self.d, &mut p);
            }
            dense(l.w1, self.d, &mut p);
            dense(l.w2, self.ffn, &mut p);
        }
        dense(self.head_w, self.d, &mut p);
        for g in self.gains() {
            p[g.range()].fill(1.0);
        }
        p
    }
}

/// A token as the network sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tok {
    Base(usize),
    Novel(usize),
}

/// Trainable rows of added tokens.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NovelRows {
    pub d: usize,
    pub names: Vec<String>,
    /// `[n, d]`, tied input embedding and output row.
    pub vectors: Vec<f64>,
    pub bias: Vec<f64>,
}

impl NovelRows {
    pub fn new(d: usize) -> Self {
        NovelRows {
            d,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.d..(i + 1) * self.d]
    }
}

/// Gradient buffers shaped like [`NovelRows`].
#[derive(Debug, Clone, PartialEq)]
pub struct NovelGrads {
    pub vectors: Vec<f64>,
    pub bias: Vec<f64>,
}

impl NovelGrads {
    pub fn zeros(rows: &NovelRows) -> Self {
        NovelGrads {
            vectors: vec![0.0; rows.vectors.len()],
            bias: vec![0.0; rows.bias.len()],
        }
    }
}

/// Where backward passes accumulate gradients.
pub struct GradSink<'a> {
    /// Base-parameter gradients; `None` skips all base weight gradients.
    pub base: Option<&'a mut [f64]>,
    pub novel: Option<&'a mut NovelGrads>,
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn ln_forward(x: &[f64], g: &[f64], b: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let h = (xr[c] - mean) * rs;
            xhat[r * d + c] = h;
            y[r * d + c] = g[c] * h + b[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates gain and shift gradients when buffers are given.
fn ln_backward(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    d: usize,
    dgb: Option<(&mut [f64], &mut [f64])>,
) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        for c in 0..d {
            dxhat[c] = dyr[c] * g[c];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, xh) / d as f64;
        for c in 0..d {
            dx[r * d + c] = cache.rstd[r] * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    if let Some((dg, db)) = dgb {
        for r in 0..rows {
            for c in 0..d {
                dg[c] += dy[r * d + c] * cache.xhat[r * d + c];
                db[c] += dy[r * d + c];
            }
        }
    }
    dx
}

#[derive(Debug, Clone)]
struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[heads, L, L]` attention weights.
    att: Vec<f64>,
    o: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    ln2: LnCache,
}

/// Activations of one encoder pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    toks: Vec<Tok>,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    /// Final hidden states `[L, d]`.
    pub hidden: Vec<f64>,
}

impl EncoderCache {
    pub fn len(&self) -> usize {
        self.toks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.toks.is_empty()
    }
}

/// Head activations at one position.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pre: Vec<f64>,
    ln: LnCache,
    t: Vec<f64>,
    /// Base logits followed by novel logits.
    pub logits: Vec<f64>,
}

pub struct Network<'a> {
    pub layout: &'a Layout,
    pub params: &'a [f64],
    pub novel: &'a NovelRows,
}

impl<'a> Network<'a> {
    fn p(&self, s: Slot) -> &'a [f64] {
        &self.params[s.range()]
    }

    fn tok_row(&self, t: Tok) -> &'a [f64] {
        let d = self.layout.d;
        match t {
            Tok::Base(i) => &self.params[self.layout.tok_emb.off + i * d..][..d],
            Tok::Novel(i) => &self.novel.vectors[i * d..(i + 1) * d],
        }
    }

    pub fn encode(&self, toks: &[Tok]) -> EncoderCache {
        let lay = self.layout;
        let (d, n) = (lay.d, toks.len());
        assert!(n <= lay.max_len, "sequence longer than the positional table");
        let mut e = vec![0.0; n * d];
        let pos = self.p(lay.pos_emb);
        for (i, t) in toks.iter().enumerate() {
            let row = &mut e[i * d..(i + 1) * d];
            for ((r, a), b) in row.iter_mut().zip(self.tok_row(*t)).zip(&pos[i * d..(i + 1) * d]) {
                *r = a + b;
            }
        }
        let (mut x, emb_ln) = ln_forward(&e, self.p(lay.emb_ln_g), self.p(lay.emb_ln_b), d);
        let mut layers = Vec::with_capacity(lay.layers.len());
        for ll in &lay.layers {
            let (out, cache) = self.layer_forward(ll, x, n);
            layers.push(cache);
            x = out;
        }
        EncoderCache {
            toks: toks.to_vec(),
            emb_ln,
            layers,
            hidden: x,
        }
    }

    fn layer_forward(&self, ll: &LayerLayout, x: Vec<f64>, n: usize) -> (Vec<f64>, LayerCache) {
        let lay = self.layout;
        let (d, f, h) = (lay.d, lay.ffn, lay.heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let proj = |w: Slot, b: Slot| {
            let mut out = vec![0.0; n * d];
            matmul(&x, self.p(w), n, d, d, &mut out);
            add_row_bias(&mut out, self.p(b));
            out
        };
        let q = proj(ll.wq, ll.bq);
        let k = proj(ll.wk, ll.bk);
        let v = proj(ll.wv, ll.bv);
        let mut att = vec![0.0; h * n * n];
        let mut o = vec![0.0; n * d];
        for head in 0..h {
            let c0 = head * dh;
            for i in 0..n {
                let row = &mut att[(head * n + i) * n..(head * n + i + 1) * n];
                let qi = &q[i * d + c0..i * d + c0 + dh];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * dot(qi, &k[j * d + c0..j * d + c0 + dh]);
                }
                super::linalg::softmax_in_place(row);
                let oi = &mut o[i * d + c0..i * d + c0 + dh];
                for (j, a) in row.iter().enumerate() {
                    axpy(*a, &v[j * d + c0..j * d + c0 + dh], oi);
                }
            }
        }
        let mut z1 = vec![0.0; n * d];
        matmul(&o, self.p(ll.wo), n, d, d, &mut z1);
        add_row_bias(&mut z1, self.p(ll.bo));
        for (z, xi) in z1.iter_mut().zip(&x) {
            *z += xi;
        }
        let (h1, ln1) = ln_forward(&z1, self.p(ll.ln1_g), self.p(ll.ln1_b), d);
        let mut pre = vec![0.0; n * f];
        matmul(&h1, self.p(ll.w1), n, d, f, &mut pre);
        add_row_bias(&mut pre, self.p(ll.b1));
        let act: Vec<f64> = pre.iter().map(|v| gelu(*v)).collect();
        let mut z2 = vec![0.0; n * d];
        matmul(&act, self.p(ll.w2), n, f, d, &mut z2);
        add_row_bias(&mut z2, self.p(ll.b2));
        for (z, hi) in z2.iter_mut().zip(&h1) {
            *z += hi;
        }
        let (out, ln2) = ln_forward(&z2, self.p(ll.ln2_g), self.p(ll.ln2_b), d);
        (
            out,
            LayerCache {
                x,
                q,
                k,
                v,
                att,
                o,
                ln1,
                h1,
                pre,
                act,
                ln2,
            },
        )
    }

    /// Head transform and logits over base plus novel tokens at one position.
    pub fn head(&self, hidden: &[f64]) -> HeadCache {
        let lay = self.layout;
        let d = lay.d;
        let mut pre = vec![0.0; d];
        matmul(hidden, self.p(lay.head_w), 1, d, d, &mut pre);
        add_row_bias(&mut pre, self.p(lay.head_b));
        let act: Vec<f64> = pre.iter().map(|v| gelu(*v)).collect();
        let (t, ln) = ln_forward(&act, self.p(lay.head_ln_g), self.p(lay.head_ln_b), d);
        let n_novel = self.novel.len();
        let mut logits = vec![0.0; lay.vocab + n_novel];
        let emb = self.p(lay.tok_emb);
        let bias = self.p(lay.out_bias);
        for j in 0..lay.vocab {
            logits[j] = dot(&t, &emb[j * d..(j + 1) * d]) + bias[j];
        }
        for j in 0..n_novel {
            logits[lay.vocab + j] = dot(&t, self.novel.row(j)) + self.novel.bias[j];
        }
        HeadCache {
            pre,
            ln,
            t,
            logits,
        }
    }

    /// Backpropagates `dlogits` through the head; returns the hidden-state gradient.
    pub fn head_backward(&self, hc: &HeadCache, hidden: &[f64], dlogits: &[f64], sink: &mut GradSink) -> Vec<f64> {
        let lay = self.layout;
        let d = lay.d;
        let emb = self.p(lay.tok_emb);
        let mut dt = vec![0.0; d];
        for j in 0..lay.vocab {
            if dlogits[j] != 0.0 {
                axpy(dlogits[j], &emb[j * d..(j + 1) * d], &mut dt);
            }
        }
        for j in 0..self.novel.len() {
            axpy(dlogits[lay.vocab + j], self.novel.row(j), &mut dt);
        }
        if let Some(ng) = sink.novel.as_deref_mut() {
            for j in 0..self.novel.len() {
                let g = dlogits[lay.vocab + j];
                axpy(g, &hc.t, &mut ng.vectors[j * d..(j + 1) * d]);
                ng.bias[j] += g;
            }
        }
        let dact = match sink.base.as_deref_mut() {
            Some(base) => {
                {
                    let (e, rest) = base.split_at_mut(lay.tok_emb.off + lay.tok_emb.len);
                    let demb = &mut e[lay.tok_emb.range()];
                    for j in 0..lay.vocab {
                        if dlogits[j] != 0.0 {
                            axpy(dlogits[j], &hc.t, &mut demb[j * d..(j + 1) * d]);
                        }
                    }
                    let off = lay.tok_emb.off + lay.tok_emb.len;
                    let ob = &mut rest[lay.out_bias.off - off..][..lay.vocab];
                    for (o, g) in ob.iter_mut().zip(&dlogits[..lay.vocab]) {
                        *o += g;
                    }
                }
                let (g, b) = two_slots(base, lay.head_ln_g, lay.head_ln_b);
                ln_backward(&dt, &hc.ln, self.p(lay.head_ln_g), d, Some((g, b)))
            }
            None => ln_backward(&dt, &hc.ln, self.p(lay.head_ln_g), d, None),
        };
        let dpre: Vec<f64> = dact.iter().zip(&hc.pre).map(|(g, x)| g * gelu_grad(*x)).collect();
        if let Some(base) = sink.base.as_deref_mut() {
            matmul_at_b_acc(hidden, &dpre, 1, d, d, &mut base[lay.head_w.range()]);
            col_sum_acc(&dpre, d, &mut base[lay.head_b.range()]);
        }
        let mut dh = vec![0.0; d];
        matmul_a_bt(&dpre, self.p(lay.head_w), 1, d, d, &mut dh);
        dh
    }

    /// Backpropagates `dhidden: [L, d]` through the encoder to parameters and input rows.
    pub fn encoder_backward(&self, cache: &EncoderCache, dhidden: Vec<f64>, sink: &mut GradSink) {
        let lay = self.layout;
        let d = lay.d;
        let n = cache.len();
        let mut dx = dhidden;
        for (ll, lc) in lay.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(ll, lc, dx, n, sink);
        }
        let de = match sink.base.as_deref_mut() {
            Some(base) => {
                let (g, b) = two_slots(base, lay.emb_ln_g, lay.emb_ln_b);
                ln_backward(&dx, &cache.emb_ln, self.p(lay.emb_ln_g), d, Some((g, b)))
            }
            None => ln_backward(&dx, &cache.emb_ln, self.p(lay.emb_ln_g), d, None),
        };
        for (i, t) in cache.toks.iter().enumerate() {
            let g = &de[i * d..(i + 1) * d];
            match *t {
                Tok::Base(id) => {
                    if let Some(base) = sink.base.as_deref_mut() {
                        axpy(1.0, g, &mut base[lay.tok_emb.off + id * d..][..d]);
                    }
                }
                Tok::Novel(id) => {
                    if let Some(ng) = sink.novel.as_deref_mut() {
                        axpy(1.0, g, &mut ng.vectors[id * d..(id + 1) * d]);
                    }
                }
            }
            if let Some(base) = sink.base.as_deref_mut() {
                axpy(1.0, g, &mut base[lay.pos_emb.off + i * d..][..d]);
            }
        }
    }

    fn layer_backward(&self, ll: &LayerLayout, lc: &LayerCache, dout: Vec<f64>, n: usize, sink: &mut GradSink) -> Vec<f64> {
        let lay = self.layout;
        let (d, f, h) = (lay.d, lay.ffn, lay.heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();

        let dz2 = match sink.base.as_deref_mut() {
            Some(base) => {
                let (g, b) = two_slots(base, ll.ln2_g, ll.ln2_b);
                ln_backward(&dout, &lc.ln2, self.p(ll.ln2_g), d, Some((g, b)))
            }
            None => ln_backward(&dout, &lc.ln2, self.p(ll.ln2_g), d, None),
        };
        if let Some(base) = sink.base.as_deref_mut() {
            matmul_at_b_acc(&lc.act, &dz2, n, f, d, &mut base[ll.w2.range()]);
            col_sum_acc(&dz2, d, &mut base[ll.b2.range()]);
        }
        let mut dact = vec![0.0; n * f];
        matmul_a_bt(&dz2, self.p(ll.w2), n, d, f, &mut dact);
        let dpre: Vec<f64> = dact.iter().zip(&lc.pre).map(|(g, x)| g * gelu_grad(*x)).collect();
        if let Some(base) = sink.base.as_deref_mut() {
            matmul_at_b_acc(&lc.h1, &dpre, n, d, f, &mut base[ll.w1.range()]);
            col_sum_acc(&dpre, f, &mut base[ll.b1.range()]);
        }
        let mut dh1 = vec![0.0; n * d];
        matmul_a_bt(&dpre, self.p(ll.w1), n, f, d, &mut dh1);
        for (a, b) in dh1.iter_mut().zip(&dz2) {
            *a += b;
        }
        let dz1 = match sink.base.as_deref_mut() {
            Some(base) => {
                let (g, b) = two_slots(base, ll.ln1_g, ll.ln1_b);
                ln_backward(&dh1, &lc.ln1, self.p(ll.ln1_g), d, Some((g, b)))
            }
            None => ln_backward(&dh1, &lc.ln1, self.p(ll.ln1_g), d, None),
        };

        // Attention output projection.
        if let Some(base) = sink.base.as_deref_mut() {
            matmul_at_b_acc(&lc.o, &dz1, n, d, d, &mut base[ll.wo.range()]);
            col_sum_acc(&dz1, d, &mut base[ll.bo.range()]);
        }
        let mut d_o = vec![0.0; n * d];
        matmul_a_bt(&dz1, self.p(ll.wo), n, d, d, &mut d_o);

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for head in 0..h {
            let c0 = head * dh;
            for i in 0..n {
                let a = &lc.att[(head * n + i) * n..(head * n + i + 1) * n];
                let doi = &d_o[i * d + c0..i * d + c0 + dh];
                for j in 0..n {
                    da[j] = dot(doi, &lc.v[j * d + c0..j * d + c0 + dh]);
                    axpy(a[j], doi, &mut dv[j * d + c0..j * d + c0 + dh]);
                }
                let weighted = dot(a, &da);
                for j in 0..n {
                    let ds = a[j] * (da[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(ds, &lc.k[j * d + c0..j * d + c0 + dh], &mut dq[i * d + c0..i * d + c0 + dh]);
                    axpy(ds, &lc.q[i * d + c0..i * d + c0 + dh], &mut dk[j * d + c0..j * d + c0 + dh]);
                }
            }
        }
        let mut dx = dz1;
        let mut tmp = vec![0.0; n * d];
        for (g, w, b) in [(&dq, ll.wq, ll.bq), (&dk, ll.wk, ll.bk), (&dv, ll.wv, ll.bv)] {
            if let Some(base) = sink.base.as_deref_mut() {
                matmul_at_b_acc(&lc.x, g, n, d, d, &mut base[w.range()]);
                col_sum_acc(g, d, &mut base[b.range()]);
            }
            matmul_a_bt(g, self.p(w), n, d, d, &mut tmp);
            for (a, t) in dx.iter_mut().zip(&tmp) {
                *a += t;
            }
        }
        dx
    }
}

/// Disjoint mutable views of two slots of one buffer.
fn two_slots(buf: &mut [f64], a: Slot, b: Slot) -> (&mut [f64], &mut [f64]) {
    assert!(a.off + a.len <= b.off, "slots must be ordered and disjoint");
    let (lo, hi) = buf.split_at_mut(b.off);
    (&mut lo[a.range()], &mut hi[..b.len])
}
