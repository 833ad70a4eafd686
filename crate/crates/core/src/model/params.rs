use ndarray::{Array1, Array2};
use rand::Rng;

use super::{ModelConfig, Real};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub wq: Array2<T>,
    pub wk: Array2<T>,
    pub wv: Array2<T>,
    pub wo: Array2<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

/// All trainable tensors. Matrices are `[in, out]` so a row of activations
/// multiplies on the left.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub token_embed: Array2<T>,
    /// Rows: special, first window, second window.
    pub segment_embed: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

#[derive(Debug)]
pub struct TensorView<'a, T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

const LAYER_FIELDS: [&str; 12] = [
    "ln1.gain", "ln1.bias", "attn.q", "attn.k", "attn.v", "attn.o", "ln2.gain", "ln2.bias",
    "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

impl<T: Real> Parameters<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden;
        let z1 = |n| Array1::<T>::zeros(n);
        let z2 = |r, c| Array2::<T>::zeros((r, c));
        Parameters {
            token_embed: z2(cfg.vocab_size, d),
            segment_embed: z2(3, d),
            layers: (0..cfg.layers)
                .map(|_| LayerParams {
                    ln1_gain: z1(d),
                    ln1_bias: z1(d),
                    wq: z2(d, d),
                    wk: z2(d, d),
                    wv: z2(d, d),
                    wo: z2(d, d),
                    ln2_gain: z1(d),
                    ln2_bias: z1(d),
                    w1: z2(d, cfg.ffn),
                    b1: z1(cfg.ffn),
                    w2: z2(cfg.ffn, d),
                    b2: z1(d),
                })
                .collect(),
            head_w: z2(d, 3),
            head_b: z1(3),
        }
    }

    /// Seeded initialization.
    ///
    /// * projections (attention, FFN, head): `U(-a, a)` with
    ///   `a = sqrt(6 / (fan_in + fan_out))`
    /// * token and segment embeddings: `U(-a, a)` with `a = sqrt(3 / d)`
    /// * biases zero, layer-norm gains one
    ///
    /// Tensor `i` in [`Parameters::tensors`] order draws from its own stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut p = Self::zeros(cfg);
        let d = cfg.hidden as f64;
        for (i, (name, data)) in p.tensors_mut().into_iter().enumerate() {
            let bound = init_bound(&name, cfg, d);
            match bound {
                Some(a) => {
                    let mut rng = seed::rng(seed, "init", i as u64);
                    for v in data.iter_mut() {
                        *v = T::lit(rng.gen_range(-a..a));
                    }
                }
                None if name.ends_with(".gain") => data.fill(T::one()),
                None => data.fill(T::zero()),
            }
        }
        Ok(p)
    }

    pub fn tensors(&self) -> Vec<TensorView<'_, T>> {
        let mut out = Vec::new();
        fn view<'a, T, D: ndarray::Dimension>(
            name: String,
            a: &'a ndarray::Array<T, D>,
        ) -> TensorView<'a, T> {
            TensorView {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        out.push(view("embed.token".into(), &self.token_embed));
        out.push(view("embed.segment".into(), &self.segment_embed));
        for (l, lp) in self.layers.iter().enumerate() {
            let n = |f: &str| format!("layers.{l}.{f}");
            out.push(view(n(LAYER_FIELDS[0]), &lp.ln1_gain));
            out.push(view(n(LAYER_FIELDS[1]), &lp.ln1_bias));
            out.push(view(n(LAYER_FIELDS[2]), &lp.wq));
            out.push(view(n(LAYER_FIELDS[3]), &lp.wk));
            out.push(view(n(LAYER_FIELDS[4]), &lp.wv));
            out.push(view(n(LAYER_FIELDS[5]), &lp.wo));
            out.push(view(n(LAYER_FIELDS[6]), &lp.ln2_gain));
            out.push(view(n(LAYER_FIELDS[7]), &lp.ln2_bias));
            out.push(view(n(LAYER_FIELDS[8]), &lp.w1));
            out.push(view(n(LAYER_FIELDS[9]), &lp.b1));
            out.push(view(n(LAYER_FIELDS[10]), &lp.w2));
            out.push(view(n(LAYER_FIELDS[11]), &lp.b2));
        }
        out.push(view("head.weight".into(), &self.head_w));
        out.push(view("head.bias".into(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        fn s2<T>(a: &mut Array2<T>) -> &mut [T] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s1<T>(a: &mut Array1<T>) -> &mut [T] {
            a.as_slice_mut().expect("standard layout")
        }
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        out.push(("embed.token".into(), s2(&mut self.token_embed)));
        out.push(("embed.segment".into(), s2(&mut self.segment_embed)));
        for (l, lp) in self.layers.iter_mut().enumerate() {
            let n = |f: &str| format!("layers.{l}.{f}");
            let LayerParams {
                ln1_gain,
                ln1_bias,
                wq,
                wk,
                wv,
                wo,
                ln2_gain,
                ln2_bias,
                w1,
                b1,
                w2,
                b2,
            } = lp;
            out.push((n(LAYER_FIELDS[0]), s1(ln1_gain)));
            out.push((n(LAYER_FIELDS[1]), s1(ln1_bias)));
            out.push((n(LAYER_FIELDS[2]), s2(wq)));
            out.push((n(LAYER_FIELDS[3]), s2(wk)));
            out.push((n(LAYER_FIELDS[4]), s2(wv)));
            out.push((n(LAYER_FIELDS[5]), s2(wo)));
            out.push((n(LAYER_FIELDS[6]), s1(ln2_gain)));
            out.push((n(LAYER_FIELDS[7]), s1(ln2_bias)));
            out.push((n(LAYER_FIELDS[8]), s2(w1)));
            out.push((n(LAYER_FIELDS[9]), s1(b1)));
            out.push((n(LAYER_FIELDS[10]), s2(w2)));
            out.push((n(LAYER_FIELDS[11]), s1(b2)));
        }
        out.push(("head.weight".into(), s2(&mut self.head_w)));
        out.push(("head.bias".into(), s1(&mut self.head_b)));
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name)
    }

    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::zeros(cfg);
        let a = self.tensors();
        let b = want.tensors();
        if a.len() != b.len() {
            return Err(Error::Validation(format!(
                "expected {} tensors, found {}",
                b.len(),
                a.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if x.name != y.name || x.shape != y.shape {
                return Err(Error::Validation(format!(
                    "tensor {} has shape {:?}, expected {} {:?}",
                    x.name, x.shape, y.name, y.shape
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Parameters<U> {
        let c2 = |a: &Array2<T>| a.mapv(|v| U::lit(v.as_f64()));
        let c1 = |a: &Array1<T>| a.mapv(|v| U::lit(v.as_f64()));
        Parameters {
            token_embed: c2(&self.token_embed),
            segment_embed: c2(&self.segment_embed),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: c1(&l.ln1_gain),
                    ln1_bias: c1(&l.ln1_bias),
                    wq: c2(&l.wq),
                    wk: c2(&l.wk),
                    wv: c2(&l.wv),
                    wo: c2(&l.wo),
                    ln2_gain: c1(&l.ln2_gain),
                    ln2_bias: c1(&l.ln2_bias),
                    w1: c2(&l.w1),
                    b1: c1(&l.b1),
                    w2: c2(&l.w2),
                    b2: c1(&l.b2),
                })
                .collect(),
            head_w: c2(&self.head_w),
            head_b: c1(&self.head_b),
        }
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Parameters<T>, scale: T) {
        for ((_, dst), src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.data) {
                *d += *s * scale;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }
}

/// Uniform init bound for a tensor, `None` for biases and gains.
pub(crate) fn init_bound(name: &str, cfg: &ModelConfig, d: f64) -> Option<f64> {
    let glorot = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
    if name.starts_with("embed.") {
        return Some((3.0 / d).sqrt());
    }
    if name.ends_with(".gain")
        || name.ends_with(".bias")
        || name.ends_with(".b1")
        || name.ends_with(".b2")
    {
        return None;
    }
    if name == "head.weight" {
        return Some(glorot(cfg.hidden, 3));
    }
    if name.ends_with(".w1") {
        return Some(glorot(cfg.hidden, cfg.ffn));
    }
    if name.ends_with(".w2") {
        return Some(glorot(cfg.ffn, cfg.hidden));
    }
    Some(glorot(cfg.hidden, cfg.hidden))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            hidden: 16,
            heads: 2,
            ffn: 24,
            ..Default::default()
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = cfg();
        let a = Parameters::<f32>::init(&c, 11).unwrap();
        assert_eq!(a, Parameters::<f32>::init(&c, 11).unwrap());
        assert_ne!(a, Parameters::<f32>::init(&c, 12).unwrap());
        for t in a.tensors() {
            match init_bound(&t.name, &c, 16.0) {
                Some(bound) => {
                    assert!(
                        t.data.iter().all(|v| (v.abs() as f64) < bound),
                        "{}",
                        t.name
                    );
                    assert!(t.data.iter().any(|v| *v != 0.0), "{}", t.name);
                }
                None if t.name.ends_with(".gain") => assert!(t.data.iter().all(|v| *v == 1.0)),
                None => assert!(t.data.iter().all(|v| *v == 0.0), "{}", t.name),
            }
        }
        // Glorot bound for a 16x16 projection.
        assert!(
            (init_bound("layers.0.attn.q", &c, 16.0).unwrap() - (6.0f64 / 32.0).sqrt()).abs()
                < 1e-15
        );
    }

    #[test]
    fn odd_hidden_rejected() {
        let c = ModelConfig {
            hidden: 15,
            ..cfg()
        };
        assert!(matches!(
            Parameters::<f32>::init(&c, 1),
            Err(Error::Config(_))
        ));
        let c = ModelConfig {
            hidden: 12,
            heads: 4,
            ..cfg()
        };
        assert!(Parameters::<f32>::init(&c, 1).is_err());
    }

    #[test]
    fn names_unique_and_shapes_match() {
        let c = cfg();
        let p = Parameters::<f64>::init(&c, 1).unwrap();
        let names: std::collections::BTreeSet<String> =
            p.tensors().into_iter().map(|t| t.name).collect();
        assert_eq!(names.len(), p.tensors().len());
        p.check_shapes(&c).unwrap();
        let mut q = p.clone();
        let back: Parameters<f64> = q.cast::<f32>().cast();
        q.add_scaled(&back, -1.0);
        assert!(q.squared_norm() < 1e-10);
    }
}
