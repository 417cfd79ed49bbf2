//! Multi-head self-attention encoder: forward pass with activation cache and
//! the matching backward pass.

use ndarray::{Array1, Array2, Axis, s};

use super::{EncoderLayerParams, ModelParams, Scalar};
use crate::error::{Error, Result};

/// Layer-normalization epsilon.
const LN_EPS: f64 = 1e-5;

/// Final node features and their mean.
#[derive(Debug, Clone)]
pub struct EncoderOut<S> {
    /// (n, d_h) node feature matrix; row 0 is the base station.
    pub h: Array2<S>,
    /// Arithmetic mean of the rows of `h`.
    pub h_bar: Array1<S>,
}

/// Activations of one layer normalization needed for its backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<S> {
    pub xhat: Array2<S>,
    pub inv_std: Array1<S>,
}

/// Activations of one encoder layer.
#[derive(Debug, Clone)]
pub struct LayerCache<S> {
    pub input: Array2<S>,
    pub q: Array2<S>,
    pub k: Array2<S>,
    pub v: Array2<S>,
    /// Softmax attention weights per head, each (n, n); rows sum to one.
    pub attn: Vec<Array2<S>>,
    /// Concatenated head outputs before the output projection.
    pub concat: Array2<S>,
    pub norm1: NormCache<S>,
    /// Output of the first sublayer (input to the feed-forward).
    pub h_tmp: Array2<S>,
    /// Feed-forward hidden pre-activation.
    pub ff_pre: Array2<S>,
    pub norm2: NormCache<S>,
}

/// Everything the backward pass needs from one encoder forward.
#[derive(Debug, Clone)]
pub struct EncoderCache<S> {
    pub layers: Vec<LayerCache<S>>,
}

fn layer_norm<S: Scalar>(
    x: &Array2<S>,
    scale: &Array1<S>,
    shift: &Array1<S>,
) -> (Array2<S>, NormCache<S>) {
    let n = x.nrows();
    let d = x.ncols();
    let d_s = S::of_f64(d as f64);
    let eps = S::of_f64(LN_EPS);
    let mut xhat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    let mut out = Array2::zeros((n, d));
    for r in 0..n {
        let row = x.row(r);
        let mean = row.sum() / d_s;
        let mut var = S::zero();
        for &v in row {
            let c = v - mean;
            var = var + c * c;
        }
        var = var / d_s;
        let istd = S::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        for c in 0..d {
            let xh = (x[[r, c]] - mean) * istd;
            xhat[[r, c]] = xh;
            out[[r, c]] = xh * scale[c] + shift[c];
        }
    }
    (out, NormCache { xhat, inv_std })
}

/// Backward of layer norm. Returns the input gradient and accumulates the
/// scale/shift gradients.
fn layer_norm_backward<S: Scalar>(
    d_out: &Array2<S>,
    cache: &NormCache<S>,
    scale: &Array1<S>,
    d_scale: &mut Array1<S>,
    d_shift: &mut Array1<S>,
) -> Array2<S> {
    let n = d_out.nrows();
    let d = d_out.ncols();
    let d_s = S::of_f64(d as f64);
    let mut dx = Array2::zeros((n, d));
    for r in 0..n {
        let mut g_mean = S::zero();
        let mut gx_mean = S::zero();
        for c in 0..d {
            let g = d_out[[r, c]] * scale[c];
            g_mean = g_mean + g;
            gx_mean = gx_mean + g * cache.xhat[[r, c]];
            d_scale[c] = d_scale[c] + d_out[[r, c]] * cache.xhat[[r, c]];
            d_shift[c] = d_shift[c] + d_out[[r, c]];
        }
        g_mean = g_mean / d_s;
        gx_mean = gx_mean / d_s;
        let istd = cache.inv_std[r];
        for c in 0..d {
            let g = d_out[[r, c]] * scale[c];
            dx[[r, c]] = istd * (g - g_mean - cache.xhat[[r, c]] * gx_mean);
        }
    }
    dx
}

/// Row-wise softmax of a dense score matrix.
fn softmax_rows<S: Scalar>(scores: &mut Array2<S>) {
    for mut row in scores.rows_mut() {
        let mut max = S::neg_infinity();
        for &v in row.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = S::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
}

fn layer_forward<S: Scalar>(
    input: &Array2<S>,
    lp: &EncoderLayerParams<S>,
    n_heads: usize,
) -> (Array2<S>, LayerCache<S>) {
    let n = input.nrows();
    let d_h = input.ncols();
    let dk = d_h / n_heads;
    let scale = S::of_f64(1.0 / (dk as f64).sqrt());

    let q = input.dot(&lp.w_q);
    let k = input.dot(&lp.w_k);
    let v = input.dot(&lp.w_v);

    let mut concat = Array2::zeros((n, d_h));
    let mut attn = Vec::with_capacity(n_heads);
    for m in 0..n_heads {
        let cols = s![.., m * dk..(m + 1) * dk];
        let qm = q.slice(cols);
        let km = k.slice(cols);
        let vm = v.slice(cols);
        let mut scores = qm.dot(&km.t());
        scores.mapv_inplace(|x| x * scale);
        softmax_rows(&mut scores);
        let head_out = scores.dot(&vm);
        concat.slice_mut(cols).assign(&head_out);
        attn.push(scores);
    }
    let mha_out = concat.dot(&lp.w_o);

    let sum1 = input + &mha_out;
    let (h_tmp, norm1) = layer_norm(&sum1, &lp.norm1.scale, &lp.norm1.shift);

    let ff_pre = h_tmp.dot(&lp.ff_w1) + &lp.ff_b1;
    let ff_act = ff_pre.mapv(|x| if x > S::zero() { x } else { S::zero() });
    let ff_out = ff_act.dot(&lp.ff_w2) + &lp.ff_b2;

    let sum2 = &h_tmp + &ff_out;
    let (output, norm2) = layer_norm(&sum2, &lp.norm2.scale, &lp.norm2.shift);

    let cache = LayerCache {
        input: input.clone(),
        q,
        k,
        v,
        attn,
        concat,
        norm1,
        h_tmp,
        ff_pre,
        norm2,
    };
    (output, cache)
}

/// Runs the full encoder stack, returning features plus the activation cache.
pub fn encode_with_cache<S: Scalar>(
    h0: &Array2<S>,
    params: &ModelParams<S>,
) -> Result<(EncoderOut<S>, EncoderCache<S>)> {
    if h0.ncols() != params.meta.d_h {
        return Err(Error::InvalidParameter(format!(
            "embedding width {} does not match d_h {}",
            h0.ncols(),
            params.meta.d_h
        )));
    }
    let mut h = h0.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (next, cache) = layer_forward(&h, lp, params.meta.n_heads);
        layers.push(cache);
        h = next;
    }
    if !h.iter().all(|x| x.is_finite()) {
        return Err(Error::NumericalFailure("non-finite encoder activations".into()));
    }
    let inv_n = S::of_f64(1.0 / h.nrows() as f64);
    let h_bar = h.sum_axis(Axis(0)).mapv(|x| x * inv_n);
    Ok((EncoderOut { h, h_bar }, EncoderCache { layers }))
}

/// Runs the full encoder stack.
pub fn encode<S: Scalar>(h0: &Array2<S>, params: &ModelParams<S>) -> Result<EncoderOut<S>> {
    encode_with_cache(h0, params).map(|(out, _)| out)
}

/// Backpropagates `d_h` (gradient w.r.t. the final node features) through the
/// encoder stack, accumulating parameter gradients into `grad` and returning
/// the gradient w.r.t. the initial embeddings.
pub fn encoder_backward<S: Scalar>(
    cache: &EncoderCache<S>,
    params: &ModelParams<S>,
    d_h: Array2<S>,
    grad: &mut ModelParams<S>,
) -> Array2<S> {
    let n_heads = params.meta.n_heads;
    let dk = params.meta.head_dim();
    let scale = S::of_f64(1.0 / (dk as f64).sqrt());
    let mut d_out = d_h;

    for (lc, (lp, lg)) in cache
        .layers
        .iter()
        .zip(params.layers.iter().zip(grad.layers.iter_mut()))
        .rev()
    {
        // Second sublayer: norm2(h_tmp + ff_out).
        let d_sum2 = layer_norm_backward(
            &d_out,
            &lc.norm2,
            &lp.norm2.scale,
            &mut lg.norm2.scale,
            &mut lg.norm2.shift,
        );

        // Feed-forward backward.
        let ff_act = lc.ff_pre.mapv(|x| if x > S::zero() { x } else { S::zero() });
        lg.ff_w2 = &lg.ff_w2 + &ff_act.t().dot(&d_sum2);
        lg.ff_b2 = &lg.ff_b2 + &d_sum2.sum_axis(Axis(0));
        let mut d_pre = d_sum2.dot(&lp.ff_w2.t());
        ndarray::Zip::from(&mut d_pre).and(&lc.ff_pre).for_each(|g, &pre| {
            if pre <= S::zero() {
                *g = S::zero();
            }
        });
        lg.ff_w1 = &lg.ff_w1 + &lc.h_tmp.t().dot(&d_pre);
        lg.ff_b1 = &lg.ff_b1 + &d_pre.sum_axis(Axis(0));
        // h_tmp feeds both the feed-forward and the residual.
        let d_h_tmp = &d_sum2 + &d_pre.dot(&lp.ff_w1.t());

        // First sublayer: norm1(input + mha_out).
        let d_sum1 = layer_norm_backward(
            &d_h_tmp,
            &lc.norm1,
            &lp.norm1.scale,
            &mut lg.norm1.scale,
            &mut lg.norm1.shift,
        );

        // Output projection.
        lg.w_o = &lg.w_o + &lc.concat.t().dot(&d_sum1);
        let d_concat = d_sum1.dot(&lp.w_o.t());

        // Heads.
        let n = lc.input.nrows();
        let d_full = lc.input.ncols();
        let mut d_q = Array2::<S>::zeros((n, d_full));
        let mut d_k = Array2::<S>::zeros((n, d_full));
        let mut d_v = Array2::<S>::zeros((n, d_full));
        for m in 0..n_heads {
            let cols = s![.., m * dk..(m + 1) * dk];
            let attn = &lc.attn[m];
            let vm = lc.v.slice(cols);
            let d_head = d_concat.slice(cols);

            let d_attn = d_head.dot(&vm.t());
            // Head column blocks are disjoint, so plain assignment suffices.
            d_v.slice_mut(cols).assign(&attn.t().dot(&d_head));

            // Softmax backward, row-wise.
            let mut d_scores = Array2::<S>::zeros((n, n));
            for r in 0..n {
                let mut dot = S::zero();
                for c in 0..n {
                    dot = dot + d_attn[[r, c]] * attn[[r, c]];
                }
                for c in 0..n {
                    d_scores[[r, c]] = attn[[r, c]] * (d_attn[[r, c]] - dot);
                }
            }
            d_scores.mapv_inplace(|x| x * scale);

            let qm = lc.q.slice(cols);
            let km = lc.k.slice(cols);
            d_q.slice_mut(cols).assign(&d_scores.dot(&km));
            d_k.slice_mut(cols).assign(&d_scores.t().dot(&qm));
        }

        lg.w_q = &lg.w_q + &lc.input.t().dot(&d_q);
        lg.w_k = &lg.w_k + &lc.input.t().dot(&d_k);
        lg.w_v = &lg.w_v + &lc.input.t().dot(&d_v);

        // Gradient into the layer input: residual plus the three projections.
        d_out = &d_sum1
            + &(d_q.dot(&lp.w_q.t()) + d_k.dot(&lp.w_k.t()) + d_v.dot(&lp.w_v.t()));
    }
    d_out
}
