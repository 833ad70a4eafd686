//! Transformer encoder with rotary positions.
//!
//! Pre-norm residual blocks (`x + Attn(LN(x))`, `x + FFN(LN(x))`) with a
//! tanh-approximated GeLU. Rotary embeddings rotate each head's query and key
//! coordinate pairs; there are no absolute position embeddings. Token and
//! segment embeddings are summed at the input. The classification head reads
//! the final state at `[CLS]`, and the order-loss embeddings are segment means
//! of the final states.

mod checkpoint;
mod forward;
mod params;
mod rope;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{forward, forward_one, vjp, ForwardTrace, Mode};
pub use params::{LayerParams, Parameters, TensorView};
pub use rope::{inverse_frequencies, rope_rotate, rope_rotate_pair};

/// Floating point type the model runs in: `f32` for training, `f64` for
/// gradient checks.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Sum
        + AddAssign
        + SubAssign
        + MulAssign
        + DivAssign
        + 'static
{
}

/// What the rotary position of a token is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeMode {
    /// Token index in the joint sequence.
    TokenPosition,
    /// Token index, plus `floor(gap_days)` for second-window tokens.
    TimeBucket,
}

/// Where the order-loss embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Segment means inside the joint `[CLS] a [SEP] b` pass.
    Joint,
    /// Each window encoded alone as `[CLS] w`, then mean-pooled.
    Siamese,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub rope_base: f64,
    pub dropout: f64,
    pub time_mode: TimeMode,
    /// Rotary embeddings on; off means attention sees no position at all.
    pub rotary: bool,
    pub pooling: Pooling,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn: 128,
            max_len: 256,
            vocab_size: 0,
            rope_base: 10000.0,
            dropout: 0.0,
            time_mode: TimeMode::TokenPosition,
            rotary: true,
            pooling: Pooling::Joint,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 {
            return fail("layers must be positive".into());
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return fail(format!(
                "hidden dim {} must be even and positive",
                self.hidden
            ));
        }
        if !self.hidden.is_multiple_of(2 * self.heads) {
            return fail(format!(
                "hidden dim {} must be divisible by 2 * heads = {}",
                self.hidden,
                2 * self.heads
            ));
        }
        if self.ffn == 0 {
            return fail("ffn dim must be positive".into());
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} < 3", self.max_len));
        }
        if self.vocab_size < crate::textizer::N_SPECIAL as usize {
            return fail(format!(
                "vocab_size {} below the special token count",
                self.vocab_size
            ));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return fail("rope_base must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}
