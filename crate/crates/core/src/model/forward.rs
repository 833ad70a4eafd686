//! Batched forward pass and its exact vector-Jacobian product.
//!
//! A batch is packed row-wise: every stream (a token sequence fed to the
//! encoder) owns a contiguous block of rows, so the position-wise parts of the
//! network run as one matrix product over all tokens and only attention is
//! computed per stream.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;

use super::params::{LayerParams, Parameters};
use super::rope::{inverse_frequencies, rope_rotate_pair};
use super::{ModelConfig, Pooling, Real, TimeMode};
use crate::error::{Error, Result};
use crate::seed;
use crate::textizer::{Segment, TokenSequence, CLS, PAD};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off, fully deterministic.
    Eval,
    /// Dropout masks drawn from a stream keyed by `seed`.
    Train { seed: u64 },
}

#[derive(Debug, Clone)]
struct Stream {
    ids: Vec<u32>,
    segments: Vec<Segment>,
    positions: Vec<f64>,
    offset: usize,
}

#[derive(Debug, Clone)]
struct ExampleRows {
    cls: usize,
    first: Vec<usize>,
    second: Vec<usize>,
}

#[derive(Debug, Clone)]
struct LnCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

#[derive(Debug, Clone)]
struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Attention probabilities, index `stream * heads + head`.
    probs: Vec<Array2<T>>,
    attn: Array2<T>,
    drop1: Option<Array2<T>>,
    ln2: LnCache<T>,
    b: Array2<T>,
    h1: Array2<T>,
    g: Array2<T>,
    drop2: Option<Array2<T>>,
}

/// Everything the backward pass needs, plus the outputs.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// `[batch, 3]` classification logits.
    pub logits: Array2<T>,
    /// `[batch, d]` final state at `[CLS]`.
    pub h_cls: Array2<T>,
    /// `[batch, d]` pooled embedding of the earlier window.
    pub u_first: Array2<T>,
    /// `[batch, d]` pooled embedding of the later window.
    pub u_second: Array2<T>,
    streams: Vec<Stream>,
    examples: Vec<ExampleRows>,
    cos: Array2<T>,
    sin: Array2<T>,
    layers: Vec<LayerCache<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }

    pub fn probabilities(&self, e: usize) -> [T; 3] {
        softmax3(self.logits.row(e))
    }

    /// Attention probabilities for `(layer, stream, head)` (test introspection).
    pub fn attention(&self, layer: usize, stream: usize, head: usize) -> &Array2<T> {
        let heads = self.layers[layer].probs.len() / self.streams.len();
        &self.layers[layer].probs[stream * heads + head]
    }

    pub fn n_streams(&self) -> usize {
        self.streams.len()
    }
}

pub(crate) fn softmax3<T: Real>(l: ArrayView1<'_, T>) -> [T; 3] {
    let m = l.iter().copied().fold(T::neg_infinity(), T::max);
    let e = [(l[0] - m).exp(), (l[1] - m).exp(), (l[2] - m).exp()];
    let z = e[0] + e[1] + e[2];
    [e[0] / z, e[1] / z, e[2] / z]
}

fn positions_for(seq: &TokenSequence, cfg: &ModelConfig) -> Vec<f64> {
    let offset = match cfg.time_mode {
        TimeMode::TokenPosition => 0.0,
        TimeMode::TimeBucket => seq.gap_days.max(0.0).floor(),
    };
    seq.segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if *s == Segment::Second {
                i as f64 + offset
            } else {
                i as f64
            }
        })
        .collect()
}

/// `[CLS]` followed by the tokens of one segment.
fn window_only(seq: &TokenSequence, which: Segment) -> TokenSequence {
    let mut ids = vec![CLS];
    let mut segments = vec![Segment::Special];
    for (&id, &s) in seq.ids.iter().zip(&seq.segments) {
        if s == which {
            ids.push(id);
            segments.push(s);
        }
    }
    TokenSequence {
        ids,
        segments,
        gap_days: seq.gap_days,
    }
}

fn plan(seqs: &[TokenSequence], cfg: &ModelConfig) -> (Vec<Stream>, Vec<ExampleRows>) {
    let mut streams: Vec<Stream> = Vec::new();
    let mut rows = 0usize;
    let mut push = |seq: &TokenSequence| -> usize {
        let offset = rows;
        rows += seq.ids.len();
        streams.push(Stream {
            ids: seq.ids.clone(),
            segments: seq.segments.clone(),
            positions: positions_for(seq, cfg),
            offset,
        });
        streams.len() - 1
    };
    let mut examples = Vec::with_capacity(seqs.len());
    let mut joint_ix = Vec::with_capacity(seqs.len());
    for seq in seqs {
        joint_ix.push(push(seq));
    }
    let mut side_ix = Vec::new();
    if cfg.pooling == Pooling::Siamese {
        for seq in seqs {
            let a = push(&window_only(seq, Segment::First));
            let b = push(&window_only(seq, Segment::Second));
            side_ix.push((a, b));
        }
    }
    let rows_of = |st: &Stream, which: Segment| -> Vec<usize> {
        st.segments
            .iter()
            .enumerate()
            .filter(|(i, &s)| s == which && st.ids[*i] != PAD)
            .map(|(i, _)| st.offset + i)
            .collect()
    };
    for (e, &j) in joint_ix.iter().enumerate() {
        let joint = &streams[j];
        let (first, second) = match cfg.pooling {
            Pooling::Joint => (
                rows_of(joint, Segment::First),
                rows_of(joint, Segment::Second),
            ),
            Pooling::Siamese => {
                let (a, b) = side_ix[e];
                (
                    rows_of(&streams[a], Segment::First),
                    rows_of(&streams[b], Segment::Second),
                )
            }
        };
        examples.push(ExampleRows {
            cls: joint.offset,
            first,
            second,
        });
    }
    (streams, examples)
}

fn layer_norm<T: Real>(
    x: &Array2<T>,
    gain: &Array1<T>,
    bias: &Array1<T>,
) -> (Array2<T>, LnCache<T>) {
    let (n, d) = x.dim();
    let dn = T::lit(d as f64);
    let eps = T::lit(LN_EPS);
    let mut xhat = Array2::<T>::zeros((n, d));
    let mut rstd = Array1::<T>::zeros(n);
    for (r, row) in x.outer_iter().enumerate() {
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for (o, &v) in xhat.row_mut(r).iter_mut().zip(row.iter()) {
            *o = (v - mean) * rs;
        }
    }
    let mut y = xhat.clone();
    Zip::from(y.rows_mut()).for_each(|mut row| {
        Zip::from(&mut row)
            .and(gain)
            .and(bias)
            .for_each(|o, &g, &b| *o = *o * g + b);
    });
    (y, LnCache { xhat, rstd })
}

/// Returns `dx` and accumulates the gain and bias gradients.
fn layer_norm_back<T: Real>(
    dy: &Array2<T>,
    cache: &LnCache<T>,
    gain: &Array1<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    let (n, d) = dy.dim();
    let dn = T::lit(d as f64);
    let mut dx = Array2::<T>::zeros((n, d));
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut mean_g = T::zero();
        let mut mean_gx = T::zero();
        for c in 0..d {
            let g = dyr[c] * gain[c];
            mean_g += g;
            mean_gx += g * xh[c];
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
        }
        mean_g /= dn;
        mean_gx /= dn;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx[[r, c]] = rs * (dyr[c] * gain[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}

fn dropout_mask<T: Real>(rows: usize, cols: usize, p: f64, seed_: u64, stream: u64) -> Array2<T> {
    let mut rng = seed::rng(seed_, "dropout", stream);
    let keep = T::lit(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.gen::<f64>() < p {
            T::zero()
        } else {
            keep
        }
    })
}

fn add_row_bias<T: Real>(x: &mut Array2<T>, b: &Array1<T>) {
    for mut row in x.rows_mut() {
        row += b;
    }
}

/// Rotates every head slice of every row; `inverse` rotates back.
fn rotate_rows<T: Real>(
    x: &mut Array2<T>,
    cos: &Array2<T>,
    sin: &Array2<T>,
    heads: usize,
    inverse: bool,
) {
    let hd = x.ncols() / heads;
    let half = hd / 2;
    for (r, mut row) in x.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        for h in 0..heads {
            for i in 0..half {
                let c = cos[[r, i]];
                let s = if inverse { -sin[[r, i]] } else { sin[[r, i]] };
                let at = h * hd + 2 * i;
                rope_rotate_pair(&mut row[at..at + 2], c, s);
            }
        }
    }
}

fn check_inputs(cfg: &ModelConfig, seqs: &[TokenSequence]) -> Result<()> {
    for seq in seqs {
        if seq.ids.len() > cfg.max_len {
            return Err(Error::Validation(format!(
                "sequence length {} exceeds max_len {}",
                seq.ids.len(),
                cfg.max_len
            )));
        }
        seq.validate(cfg.max_len)?;
        if let Some(&bad) = seq.ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
            return Err(Error::Validation(format!(
                "token id {bad} outside vocabulary of {}",
                cfg.vocab_size
            )));
        }
    }
    Ok(())
}

/// Runs the encoder over a batch of sequences.
pub fn forward<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    seqs: &[TokenSequence],
    mode: Mode,
) -> Result<ForwardTrace<T>> {
    check_inputs(cfg, seqs)?;
    let (streams, examples) = plan(seqs, cfg);
    let d = cfg.hidden;
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let n: usize = streams.iter().map(|s| s.ids.len()).sum();

    let inv_freq = inverse_frequencies(hd, cfg.rope_base);
    let mut cos = Array2::<T>::ones((n, hd / 2));
    let mut sin = Array2::<T>::zeros((n, hd / 2));
    if cfg.rotary {
        for st in &streams {
            for (i, &p) in st.positions.iter().enumerate() {
                for (j, f) in inv_freq.iter().enumerate() {
                    let (s, c) = (p * f).sin_cos();
                    cos[[st.offset + i, j]] = T::lit(c);
                    sin[[st.offset + i, j]] = T::lit(s);
                }
            }
        }
    }

    let mut x = Array2::<T>::zeros((n, d));
    for st in &streams {
        for (i, (&id, &seg)) in st.ids.iter().zip(&st.segments).enumerate() {
            let mut row = x.row_mut(st.offset + i);
            row.assign(&params.token_embed.row(id as usize));
            row += &params.segment_embed.row(seg as usize);
        }
    }

    let scale = T::lit(1.0 / (hd as f64).sqrt());
    let mut caches = Vec::with_capacity(cfg.layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let (a, ln1) = layer_norm(&x, &lp.ln1_gain, &lp.ln1_bias);
        let mut q = a.dot(&lp.wq);
        let mut k = a.dot(&lp.wk);
        let v = a.dot(&lp.wv);
        if cfg.rotary {
            rotate_rows(&mut q, &cos, &sin, heads, false);
            rotate_rows(&mut k, &cos, &sin, heads, false);
        }
        let mut attn = Array2::<T>::zeros((n, d));
        let mut probs = Vec::with_capacity(streams.len() * heads);
        for st in &streams {
            let rows = st.offset..st.offset + st.ids.len();
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                let qh = q.slice(s![rows.clone(), cols.clone()]);
                let kh = k.slice(s![rows.clone(), cols.clone()]);
                let vh = v.slice(s![rows.clone(), cols.clone()]);
                let mut p = qh.dot(&kh.t());
                for mut row in p.rows_mut() {
                    let mut m = T::neg_infinity();
                    for (j, val) in row.iter_mut().enumerate() {
                        if st.ids[j] == PAD {
                            *val = T::neg_infinity();
                        } else {
                            *val *= scale;
                            m = m.max(*val);
                        }
                    }
                    let mut z = T::zero();
                    for val in row.iter_mut() {
                        *val = (*val - m).exp();
                        z += *val;
                    }
                    row /= z;
                }
                attn.slice_mut(s![rows.clone(), cols]).assign(&p.dot(&vh));
                probs.push(p);
            }
        }
        let mut y = attn.dot(&lp.wo);
        let drop1 = match mode {
            Mode::Train { seed } if cfg.dropout > 0.0 => {
                let m = dropout_mask::<T>(n, d, cfg.dropout, seed, 2 * l as u64);
                y *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &y;

        let (b, ln2) = layer_norm(&x, &lp.ln2_gain, &lp.ln2_bias);
        let mut h1 = b.dot(&lp.w1);
        add_row_bias(&mut h1, &lp.b1);
        let g = h1.mapv(gelu);
        let mut f = g.dot(&lp.w2);
        add_row_bias(&mut f, &lp.b2);
        let drop2 = match mode {
            Mode::Train { seed } if cfg.dropout > 0.0 => {
                let m = dropout_mask::<T>(n, d, cfg.dropout, seed, 2 * l as u64 + 1);
                f *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &f;

        caches.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            attn,
            drop1,
            ln2,
            b,
            h1,
            g,
            drop2,
        });
    }

    let bsz = examples.len();
    let mut h_cls = Array2::<T>::zeros((bsz, d));
    let mut u_first = Array2::<T>::zeros((bsz, d));
    let mut u_second = Array2::<T>::zeros((bsz, d));
    for (e, ex) in examples.iter().enumerate() {
        h_cls.row_mut(e).assign(&x.row(ex.cls));
        for (dst, rows) in [(&mut u_first, &ex.first), (&mut u_second, &ex.second)] {
            if rows.is_empty() {
                continue;
            }
            let inv = T::lit(1.0 / rows.len() as f64);
            let mut acc = dst.row_mut(e);
            for &r in rows {
                acc += &x.row(r);
            }
            acc *= inv;
        }
    }
    let mut logits = h_cls.dot(&params.head_w);
    add_row_bias(&mut logits, &params.head_b);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite logits in forward pass".into()));
    }

    Ok(ForwardTrace {
        logits,
        h_cls,
        u_first,
        u_second,
        streams,
        examples,
        cos,
        sin,
        layers: caches,
    })
}

pub fn forward_one<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    mode: Mode,
) -> Result<ForwardTrace<T>> {
    forward(params, cfg, std::slice::from_ref(seq), mode)
}

/// Pulls output gradients back to every parameter.
///
/// `d_logits`, `d_first`, `d_second` are gradients of the scalar objective
/// with respect to [`ForwardTrace::logits`], `u_first` and `u_second`.
pub fn vjp<T: Real>(
    params: &Parameters<T>,
    cfg: &ModelConfig,
    trace: &ForwardTrace<T>,
    d_logits: &Array2<T>,
    d_first: &Array2<T>,
    d_second: &Array2<T>,
) -> Parameters<T> {
    let mut grads = Parameters::<T>::zeros(cfg);
    let heads = cfg.heads;
    let hd = cfg.head_dim();
    let n: usize = trace.streams.iter().map(|s| s.ids.len()).sum();
    let d = cfg.hidden;
    let scale = T::lit(1.0 / (hd as f64).sqrt());

    grads.head_w = trace.h_cls.t().dot(d_logits);
    grads.head_b = d_logits.sum_axis(Axis(0));
    let d_hcls = d_logits.dot(&params.head_w.t());

    let mut dx = Array2::<T>::zeros((n, d));
    for (e, ex) in trace.examples.iter().enumerate() {
        let mut row = dx.row_mut(ex.cls);
        row += &d_hcls.row(e);
        for (src, rows) in [(d_first, &ex.first), (d_second, &ex.second)] {
            if rows.is_empty() {
                continue;
            }
            let share = src.row(e).mapv(|v| v / T::lit(rows.len() as f64));
            for &r in rows {
                let mut row = dx.row_mut(r);
                row += &share;
            }
        }
    }

    for (l, lp) in params.layers.iter().enumerate().rev() {
        let c = &trace.layers[l];
        let gl: &mut LayerParams<T> = &mut grads.layers[l];

        // x_out = x_mid + drop(FFN(LN2(x_mid)))
        let mut df = dx.clone();
        if let Some(m) = &c.drop2 {
            df *= m;
        }
        gl.w2 = c.g.t().dot(&df);
        gl.b2 = df.sum_axis(Axis(0));
        let mut dh1 = df.dot(&lp.w2.t());
        Zip::from(&mut dh1)
            .and(&c.h1)
            .for_each(|g, &h| *g *= gelu_grad(h));
        gl.w1 = c.b.t().dot(&dh1);
        gl.b1 = dh1.sum_axis(Axis(0));
        let db = dh1.dot(&lp.w1.t());
        dx += &layer_norm_back(
            &db,
            &c.ln2,
            &lp.ln2_gain,
            &mut gl.ln2_gain,
            &mut gl.ln2_bias,
        );

        // x_mid = x_in + drop(Attn(LN1(x_in)) Wo)
        let mut dy = dx.clone();
        if let Some(m) = &c.drop1 {
            dy *= m;
        }
        gl.wo = c.attn.t().dot(&dy);
        let dattn = dy.dot(&lp.wo.t());

        let mut dq = Array2::<T>::zeros((n, d));
        let mut dk = Array2::<T>::zeros((n, d));
        let mut dv = Array2::<T>::zeros((n, d));
        for (si, st) in trace.streams.iter().enumerate() {
            let rows = st.offset..st.offset + st.ids.len();
            for h in 0..heads {
                let cols = h * hd..(h + 1) * hd;
                let p = &c.probs[si * heads + h];
                let d_o = dattn.slice(s![rows.clone(), cols.clone()]);
                let vh = c.v.slice(s![rows.clone(), cols.clone()]);
                let qh = c.q.slice(s![rows.clone(), cols.clone()]);
                let kh = c.k.slice(s![rows.clone(), cols.clone()]);
                dv.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&p.t().dot(&d_o));
                let mut ds = d_o.dot(&vh.t());
                for (mut dsr, pr) in ds.rows_mut().into_iter().zip(p.rows()) {
                    let dot: T = dsr.iter().zip(pr.iter()).map(|(&a, &b)| a * b).sum();
                    Zip::from(&mut dsr)
                        .and(&pr)
                        .for_each(|g, &pv| *g = pv * (*g - dot) * scale);
                }
                dq.slice_mut(s![rows.clone(), cols.clone()])
                    .assign(&ds.dot(&kh));
                dk.slice_mut(s![rows.clone(), cols])
                    .assign(&ds.t().dot(&qh));
            }
        }
        if cfg.rotary {
            rotate_rows(&mut dq, &trace.cos, &trace.sin, heads, true);
            rotate_rows(&mut dk, &trace.cos, &trace.sin, heads, true);
        }
        gl.wq = c.a.t().dot(&dq);
        gl.wk = c.a.t().dot(&dk);
        gl.wv = c.a.t().dot(&dv);
        let mut da = dq.dot(&lp.wq.t());
        da += &dk.dot(&lp.wk.t());
        da += &dv.dot(&lp.wv.t());
        dx += &layer_norm_back(
            &da,
            &c.ln1,
            &lp.ln1_gain,
            &mut gl.ln1_gain,
            &mut gl.ln1_bias,
        );
    }

    for st in &trace.streams {
        for (i, (&id, &seg)) in st.ids.iter().zip(&st.segments).enumerate() {
            let g = dx.row(st.offset + i);
            let mut te = grads.token_embed.row_mut(id as usize);
            te += &g;
            let mut se = grads.segment_embed.row_mut(seg as usize);
            se += &g;
        }
    }
    grads
}
