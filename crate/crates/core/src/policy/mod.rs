//! Attention encoder-decoder policy that constructs routes node by node.
//!
//! The policy embeds node coordinates, runs a stack of multi-head
//! self-attention layers, and decodes autoregressively: at each step a
//! context vector (graph mean, last node, state of charge) is matched
//! against node keys to produce selection probabilities over the nodes that
//! the feasibility mask allows.
//!
//! Forward and backward passes are written directly against `ndarray`; the
//! same code runs in `f32` (training, checkpoints) and `f64` (gradient
//! verification).

mod checkpoint;
mod decoder;
mod encoder;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use decoder::{
    decode_step, encode_instance, feasible_mask, rollout, rollout_from_encoding, rollout_traced,
    route_log_prob, trace_backward, DecoderState, Encoded, RolloutTrace, Strategy,
};
pub use encoder::{encode, encode_with_cache, encoder_backward, EncoderCache, EncoderOut};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instance::Instance;

/// Float type the policy math is generic over.
pub trait Scalar:
    ndarray::LinalgScalar
    + num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Structural hyperparameters of the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelMeta {
    /// Feature dimension.
    pub d_h: usize,
    /// Attention heads per layer.
    pub n_heads: usize,
    /// Encoder layers.
    pub n_layers: usize,
    /// Feed-forward hidden dimension.
    pub d_ff: usize,
    /// Logit clip constant.
    pub clip: f64,
}

impl Default for ModelMeta {
    fn default() -> Self {
        ModelMeta {
            d_h: 128,
            n_heads: 8,
            n_layers: 3,
            d_ff: 512,
            clip: 10.0,
        }
    }
}

impl ModelMeta {
    /// Meta with the conventional 4x feed-forward width and default clip.
    pub fn new(d_h: usize, n_heads: usize, n_layers: usize) -> Self {
        ModelMeta {
            d_h,
            n_heads,
            n_layers,
            d_ff: 4 * d_h,
            clip: 10.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_h / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(Error::InvalidParameter("model dimensions must be positive".into()));
        }
        if self.d_h % self.n_heads != 0 {
            return Err(Error::InvalidParameter(format!(
                "d_h = {} not divisible by {} heads",
                self.d_h, self.n_heads
            )));
        }
        if !(self.clip > 0.0) {
            return Err(Error::InvalidParameter("clip constant must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable scale/shift of one layer normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams<S> {
    pub scale: Array1<S>,
    pub shift: Array1<S>,
}

/// Weights of one encoder layer. All matrices use the row-vector convention
/// `y = x W`, so shapes are (in, out).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams<S> {
    /// Head projections, stored concatenated: head m occupies columns
    /// `m*head_dim..(m+1)*head_dim`.
    pub w_q: Array2<S>,
    pub w_k: Array2<S>,
    pub w_v: Array2<S>,
    pub w_o: Array2<S>,
    pub ff_w1: Array2<S>,
    pub ff_b1: Array1<S>,
    pub ff_w2: Array2<S>,
    pub ff_b2: Array1<S>,
    pub norm1: LayerNormParams<S>,
    pub norm2: LayerNormParams<S>,
}

/// All learnable arrays of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub meta: ModelMeta,
    /// Coordinate embedding, (2, d_h).
    pub w_embed: Array2<S>,
    pub b_embed: Array1<S>,
    pub layers: Vec<EncoderLayerParams<S>>,
    /// Decoder context projection, (2*d_h + 1, d_h).
    pub w_ctx: Array2<S>,
    /// Decoder key projection, (d_h, d_h).
    pub w_key: Array2<S>,
}

/// Canonical (name, shape) list of every tensor, in serialization order.
pub fn tensor_layout(meta: &ModelMeta) -> Vec<(String, Vec<usize>)> {
    let d = meta.d_h;
    let f = meta.d_ff;
    let mut out = vec![
        ("embed.w".to_string(), vec![2, d]),
        ("embed.b".to_string(), vec![d]),
    ];
    for l in 0..meta.n_layers {
        out.push((format!("enc{l}.attn.wq"), vec![d, d]));
        out.push((format!("enc{l}.attn.wk"), vec![d, d]));
        out.push((format!("enc{l}.attn.wv"), vec![d, d]));
        out.push((format!("enc{l}.attn.wo"), vec![d, d]));
        out.push((format!("enc{l}.ff.w1"), vec![d, f]));
        out.push((format!("enc{l}.ff.b1"), vec![f]));
        out.push((format!("enc{l}.ff.w2"), vec![f, d]));
        out.push((format!("enc{l}.ff.b2"), vec![d]));
        out.push((format!("enc{l}.norm1.scale"), vec![d]));
        out.push((format!("enc{l}.norm1.shift"), vec![d]));
        out.push((format!("enc{l}.norm2.scale"), vec![d]));
        out.push((format!("enc{l}.norm2.shift"), vec![d]));
    }
    out.push(("dec.wq".to_string(), vec![2 * d + 1, d]));
    out.push(("dec.wk".to_string(), vec![d, d]));
    out
}

/// Initializes parameters: every weight matrix uniform in
/// `(-1/sqrt(d_in), 1/sqrt(d_in))`, biases and shifts zero, norm scales one.
/// Deterministic per seed.
pub fn init_params<S: Scalar>(seed: u64, meta: &ModelMeta) -> Result<ModelParams<S>> {
    meta.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |rows: usize, cols: usize| -> Array2<S> {
        let bound = 1.0 / (rows as f64).sqrt();
        Array2::from_shape_fn((rows, cols), |_| {
            S::of_f64(rng.random::<f64>() * 2.0 * bound - bound)
        })
    };
    let d = meta.d_h;
    let w_embed = uniform(2, d);
    let mut layers = Vec::with_capacity(meta.n_layers);
    for _ in 0..meta.n_layers {
        layers.push(EncoderLayerParams {
            w_q: uniform(d, d),
            w_k: uniform(d, d),
            w_v: uniform(d, d),
            w_o: uniform(d, d),
            ff_w1: uniform(d, meta.d_ff),
            ff_b1: Array1::zeros(meta.d_ff),
            ff_w2: uniform(meta.d_ff, d),
            ff_b2: Array1::zeros(d),
            norm1: LayerNormParams {
                scale: Array1::from_elem(d, S::one()),
                shift: Array1::zeros(d),
            },
            norm2: LayerNormParams {
                scale: Array1::from_elem(d, S::one()),
                shift: Array1::zeros(d),
            },
        });
    }
    let w_ctx = uniform(2 * d + 1, d);
    let w_key = uniform(d, d);
    Ok(ModelParams {
        meta: *meta,
        w_embed,
        b_embed: Array1::zeros(d),
        layers,
        w_ctx,
        w_key,
    })
}

impl<S: Scalar> ModelParams<S> {
    /// Same structure, all entries zero. Used as a gradient accumulator and
    /// as optimizer state.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.for_each_mut(|x| *x = S::zero());
        out
    }

    /// Views of every tensor in canonical order.
    pub fn tensors(&self) -> Vec<ArrayViewD<'_, S>> {
        let mut out: Vec<ArrayViewD<'_, S>> =
            vec![self.w_embed.view().into_dyn(), self.b_embed.view().into_dyn()];
        for l in &self.layers {
            out.push(l.w_q.view().into_dyn());
            out.push(l.w_k.view().into_dyn());
            out.push(l.w_v.view().into_dyn());
            out.push(l.w_o.view().into_dyn());
            out.push(l.ff_w1.view().into_dyn());
            out.push(l.ff_b1.view().into_dyn());
            out.push(l.ff_w2.view().into_dyn());
            out.push(l.ff_b2.view().into_dyn());
            out.push(l.norm1.scale.view().into_dyn());
            out.push(l.norm1.shift.view().into_dyn());
            out.push(l.norm2.scale.view().into_dyn());
            out.push(l.norm2.shift.view().into_dyn());
        }
        out.push(self.w_ctx.view().into_dyn());
        out.push(self.w_key.view().into_dyn());
        out
    }

    /// Mutable views of every tensor in canonical order.
    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, S>> {
        let mut out: Vec<ArrayViewMutD<'_, S>> = vec![
            self.w_embed.view_mut().into_dyn(),
            self.b_embed.view_mut().into_dyn(),
        ];
        for l in &mut self.layers {
            out.push(l.w_q.view_mut().into_dyn());
            out.push(l.w_k.view_mut().into_dyn());
            out.push(l.w_v.view_mut().into_dyn());
            out.push(l.w_o.view_mut().into_dyn());
            out.push(l.ff_w1.view_mut().into_dyn());
            out.push(l.ff_b1.view_mut().into_dyn());
            out.push(l.ff_w2.view_mut().into_dyn());
            out.push(l.ff_b2.view_mut().into_dyn());
            out.push(l.norm1.scale.view_mut().into_dyn());
            out.push(l.norm1.shift.view_mut().into_dyn());
            out.push(l.norm2.scale.view_mut().into_dyn());
            out.push(l.norm2.shift.view_mut().into_dyn());
        }
        out.push(self.w_ctx.view_mut().into_dyn());
        out.push(self.w_key.view_mut().into_dyn());
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut S)) {
        for mut t in self.tensors_mut() {
            for x in t.iter_mut() {
                f(x);
            }
        }
    }

    /// Applies `f(self_elem, other_elem)` over aligned tensor pairs.
    pub fn zip_mut_with(&mut self, other: &Self, mut f: impl FnMut(&mut S, S)) {
        let others = other.tensors();
        for (mut a, b) in self.tensors_mut().into_iter().zip(others) {
            ndarray::Zip::from(&mut a).and(&b).for_each(|x, &y| f(x, y));
        }
    }

    /// `self += a * other`.
    pub fn scaled_add(&mut self, a: S, other: &Self) {
        self.zip_mut_with(other, |x, y| *x = *x + a * y);
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Flattens every tensor in canonical order.
    pub fn to_flat(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for t in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    /// Overwrites every tensor from a canonical-order flat slice.
    pub fn load_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Format(format!(
                "flat parameter length {} does not match model size {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut offset = 0;
        for mut t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = flat[offset];
                offset += 1;
            }
        }
        Ok(())
    }

    /// Converts between float widths.
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let mut out: ModelParams<T> = init_params(0, &self.meta).expect("meta already validated");
        let flat: Vec<T> = self.to_flat().iter().map(|x| T::of_f64(x.as_f64())).collect();
        out.load_flat(&flat).expect("same layout");
        out
    }
}

/// Instance coordinates normalized to the unit square, as policy inputs.
pub fn normalized_coords<S: Scalar>(inst: &Instance) -> Array2<S> {
    let n = inst.n_nodes();
    Array2::from_shape_fn((n, 2), |(i, j)| S::of_f64(inst.coords[i][j] / inst.side_km))
}

/// Initial node embeddings: affine map of the (normalized) coordinates.
pub fn embed_nodes<S: Scalar>(coords: &Array2<S>, params: &ModelParams<S>) -> Array2<S> {
    coords.dot(&params.w_embed) + &params.b_embed
}
