//! Layer forward/backward rules and the recorded-forward tape.
//!
//! There is no general autodiff graph here. The classifier is a fixed
//! sequence of layers (valid 2-D convolutions with ReLU, a flatten, dense
//! layers), so the forward pass records exactly the activations each layer
//! needs for its hand-written backward rule. Every rule is checked against
//! central finite differences in the tests.

use crate::error::{Error, Result};
use crate::nn::params::{GradientSet, ParameterSet};
use crate::nn::tensor::Tensor;

/// One layer in a model's forward sequence.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    /// Valid (no padding) 2-D convolution with the given stride.
    Conv2d {
        weights: String,
        bias: String,
        stride: usize,
    },
    Relu,
    /// Collapse all trailing axes into one feature axis.
    Flatten,
    /// Fully connected layer: `out = x · Wᵀ + b`.
    Dense { weights: String, bias: String },
}

enum TapeEntry {
    Conv2d {
        weights: String,
        bias: String,
        stride: usize,
        /// Batched input activation `[B, C, H, W]`.
        input: Tensor,
    },
    Relu {
        /// Pre-activation input.
        input: Tensor,
    },
    Flatten {
        input_shape: Vec<usize>,
    },
    Dense {
        weights: String,
        bias: String,
        /// Batched input `[B, F]`.
        input: Tensor,
    },
}

/// The recorded forward computation of one batch through one layer sequence.
pub struct Tape {
    entries: Vec<TapeEntry>,
    output_shape: Vec<usize>,
}

impl Tape {
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }
}

/// Valid convolution of a single `[C_in, H, W]` input with
/// `[C_out, C_in, kH, kW]` kernels and a `[C_out]` bias.
///
/// `H' = (H - kH)/stride + 1` (floor), analogously for `W'`.
pub fn conv2d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let (c_in, h, w) = match *input.shape() {
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("input must be [C,H,W], got {:?}", input.shape()),
            ))
        }
    };
    let geom = ConvGeometry::resolve(c_in, h, w, kernels.shape(), bias.shape(), stride)?;
    let mut out = vec![0.0; geom.c_out * geom.h_out * geom.w_out];
    conv2d_item_forward(input.data(), kernels.data(), bias.data(), &geom, &mut out);
    Tensor::new(vec![geom.c_out, geom.h_out, geom.w_out], out)
}

/// Shared geometry for the convolution forward and backward kernels.
struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeometry {
    fn resolve(
        c_in: usize,
        h: usize,
        w: usize,
        kernel_shape: &[usize],
        bias_shape: &[usize],
        stride: usize,
    ) -> Result<Self> {
        let (c_out, kc, kh, kw) = match *kernel_shape {
            [o, c, i, j] => (o, c, i, j),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernels must be [C_out,C_in,kH,kW], got {kernel_shape:?}"),
                ))
            }
        };
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {c_in}"),
            ));
        }
        if bias_shape != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias must be [{c_out}], got {bias_shape:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        if kh > h || kw > w {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than input {h}x{w}"),
            ));
        }
        Ok(ConvGeometry {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            h_out: (h - kh) / stride + 1,
            w_out: (w - kw) / stride + 1,
        })
    }
}

fn conv2d_item_forward(input: &[f64], kernels: &[f64], bias: &[f64], g: &ConvGeometry, out: &mut [f64]) {
    for o in 0..g.c_out {
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let mut acc = bias[o];
                for c in 0..g.c_in {
                    let in_base = c * g.h * g.w;
                    let k_base = ((o * g.c_in + c) * g.kh) * g.kw;
                    for i in 0..g.kh {
                        let row = in_base + (oy * g.stride + i) * g.w + ox * g.stride;
                        let krow = k_base + i * g.kw;
                        for j in 0..g.kw {
                            acc += input[row + j] * kernels[krow + j];
                        }
                    }
                }
                out[(o * g.h_out + oy) * g.w_out + ox] = acc;
            }
        }
    }
}

/// Accumulates dInput, dKernels, dBias for a single item.
fn conv2d_item_backward(
    input: &[f64],
    kernels: &[f64],
    dout: &[f64],
    g: &ConvGeometry,
    dinput: &mut [f64],
    dkernels: &mut [f64],
    dbias: &mut [f64],
) {
    for o in 0..g.c_out {
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let go = dout[(o * g.h_out + oy) * g.w_out + ox];
                if go == 0.0 {
                    continue;
                }
                dbias[o] += go;
                for c in 0..g.c_in {
                    let in_base = c * g.h * g.w;
                    let k_base = ((o * g.c_in + c) * g.kh) * g.kw;
                    for i in 0..g.kh {
                        let row = in_base + (oy * g.stride + i) * g.w + ox * g.stride;
                        let krow = k_base + i * g.kw;
                        for j in 0..g.kw {
                            dkernels[krow + j] += go * input[row + j];
                            dinput[row + j] += go * kernels[krow + j];
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_batch_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let (b, c_in, h, w) = match *input.shape() {
        [b, c, h, w] => (b, c, h, w),
        _ => {
            return Err(Error::shape(
                "conv2d",
                format!("batched input must be [B,C,H,W], got {:?}", input.shape()),
            ))
        }
    };
    let g = ConvGeometry::resolve(c_in, h, w, kernels.shape(), bias.shape(), stride)?;
    let in_item = c_in * h * w;
    let out_item = g.c_out * g.h_out * g.w_out;
    let mut out = vec![0.0; b * out_item];
    for bi in 0..b {
        conv2d_item_forward(
            &input.data()[bi * in_item..(bi + 1) * in_item],
            kernels.data(),
            bias.data(),
            &g,
            &mut out[bi * out_item..(bi + 1) * out_item],
        );
    }
    Tensor::new(vec![b, g.c_out, g.h_out, g.w_out], out)
}

fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, f) = match *input.shape() {
        [b, f] => (b, f),
        _ => {
            return Err(Error::shape(
                "dense",
                format!("input must be [B,F], got {:?}", input.shape()),
            ))
        }
    };
    let (c, wf) = match *weights.shape() {
        [c, wf] => (c, wf),
        _ => {
            return Err(Error::shape(
                "dense",
                format!("weights must be [C,F], got {:?}", weights.shape()),
            ))
        }
    };
    if wf != f {
        return Err(Error::shape(
            "dense",
            format!("weights expect {wf} features, input has {f}"),
        ));
    }
    if bias.shape() != [c] {
        return Err(Error::shape(
            "dense",
            format!("bias must be [{c}], got {:?}", bias.shape()),
        ));
    }
    let mut out = vec![0.0; b * c];
    for bi in 0..b {
        let x = &input.data()[bi * f..(bi + 1) * f];
        for ci in 0..c {
            let wrow = &weights.data()[ci * f..(ci + 1) * f];
            let mut acc = bias.data()[ci];
            for (xv, wv) in x.iter().zip(wrow) {
                acc += xv * wv;
            }
            out[bi * c + ci] = acc;
        }
    }
    Tensor::new(vec![b, c], out)
}

/// Run a layer sequence forward over a batched input, recording a [`Tape`].
///
/// The leading input axis is the batch.
pub fn forward_pass(
    layers: &[LayerSpec],
    params: &ParameterSet,
    input: &Tensor,
) -> Result<(Tensor, Tape)> {
    let mut entries = Vec::with_capacity(layers.len());
    let mut cur = input.clone();
    for layer in layers {
        match layer {
            LayerSpec::Conv2d {
                weights,
                bias,
                stride,
            } => {
                let k = params.expect(weights)?;
                let b = params.expect(bias)?;
                let out = conv2d_batch_forward(&cur, k, b, *stride)?;
                entries.push(TapeEntry::Conv2d {
                    weights: weights.clone(),
                    bias: bias.clone(),
                    stride: *stride,
                    input: cur,
                });
                cur = out;
            }
            LayerSpec::Relu => {
                let out = cur.map(|x| x.max(0.0));
                entries.push(TapeEntry::Relu { input: cur });
                cur = out;
            }
            LayerSpec::Flatten => {
                let shape = cur.shape().to_vec();
                if shape.len() < 2 {
                    return Err(Error::shape("flatten", "input must be batched"));
                }
                let b = shape[0];
                let f = cur.numel() / b;
                let out = cur.reshape(&[b, f])?;
                entries.push(TapeEntry::Flatten { input_shape: shape });
                cur = out;
            }
            LayerSpec::Dense { weights, bias } => {
                let w = params.expect(weights)?;
                let b = params.expect(bias)?;
                let out = dense_forward(&cur, w, b)?;
                entries.push(TapeEntry::Dense {
                    weights: weights.clone(),
                    bias: bias.clone(),
                    input: cur,
                });
                cur = out;
            }
        }
    }
    let output_shape = cur.shape().to_vec();
    Ok((
        cur,
        Tape {
            entries,
            output_shape,
        },
    ))
}

/// Backpropagate `dlogits` through a recorded forward pass.
///
/// Returns gradients mirroring `params` name-for-name; parameters the pass
/// never touched get exact zeros. `params` must be the set the tape was
/// recorded with.
pub fn model_backward(tape: &Tape, params: &ParameterSet, dlogits: &Tensor) -> Result<GradientSet> {
    if dlogits.shape() != tape.output_shape() {
        return Err(Error::shape(
            "model_backward",
            format!(
                "dlogits shape {:?} does not match recorded output {:?}",
                dlogits.shape(),
                tape.output_shape()
            ),
        ));
    }
    let mut grads = GradientSet::zeros_like(params);
    let mut dcur = dlogits.clone();
    for entry in tape.entries.iter().rev() {
        dcur = match entry {
            TapeEntry::Conv2d {
                weights,
                bias,
                stride,
                input,
            } => {
                let kernels = params.expect(weights)?;
                let (b, c_in, h, w) = match *input.shape() {
                    [b, c, h, w] => (b, c, h, w),
                    _ => unreachable!("tape recorded a batched conv input"),
                };
                let g = ConvGeometry::resolve(
                    c_in,
                    h,
                    w,
                    kernels.shape(),
                    &[kernels.shape()[0]],
                    *stride,
                )?;
                let in_item = c_in * h * w;
                let out_item = g.c_out * g.h_out * g.w_out;
                if dcur.numel() != b * out_item {
                    return Err(Error::shape(
                        "model_backward",
                        format!("tape/parameter mismatch at conv '{weights}'"),
                    ));
                }
                let mut dinput = vec![0.0; input.numel()];
                let mut dk_buf = vec![0.0; kernels.numel()];
                let mut db_buf = vec![0.0; g.c_out];
                for bi in 0..b {
                    conv2d_item_backward(
                        &input.data()[bi * in_item..(bi + 1) * in_item],
                        kernels.data(),
                        &dcur.data()[bi * out_item..(bi + 1) * out_item],
                        &g,
                        &mut dinput[bi * in_item..(bi + 1) * in_item],
                        &mut dk_buf,
                        &mut db_buf,
                    );
                }
                let dk = grads
                    .get_mut(weights)
                    .ok_or_else(|| Error::UnknownParameter(weights.clone()))?;
                for (acc, add) in dk.data_mut().iter_mut().zip(&dk_buf) {
                    *acc += add;
                }
                let db = grads
                    .get_mut(bias)
                    .ok_or_else(|| Error::UnknownParameter(bias.clone()))?;
                for (acc, add) in db.data_mut().iter_mut().zip(&db_buf) {
                    *acc += add;
                }
                Tensor::new(input.shape().to_vec(), dinput)?
            }
            TapeEntry::Relu { input } => {
                if dcur.shape() != input.shape() {
                    return Err(Error::shape("model_backward", "relu tape mismatch"));
                }
                let data = input
                    .data()
                    .iter()
                    .zip(dcur.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Tensor::new(input.shape().to_vec(), data)?
            }
            TapeEntry::Flatten { input_shape } => dcur.reshape(input_shape)?,
            TapeEntry::Dense {
                weights,
                bias,
                input,
            } => {
                let w = params.expect(weights)?;
                let (b, f) = (input.shape()[0], input.shape()[1]);
                let c = w.shape()[0];
                if w.shape() != [c, f] || dcur.shape() != [b, c] {
                    return Err(Error::shape(
                        "model_backward",
                        format!("tape/parameter mismatch at dense '{weights}'"),
                    ));
                }
                let mut dinput = vec![0.0; b * f];
                {
                    let dw = grads
                        .get_mut(weights)
                        .ok_or_else(|| Error::UnknownParameter(weights.clone()))?;
                    let dw_data = dw.data_mut();
                    for bi in 0..b {
                        let x = &input.data()[bi * f..(bi + 1) * f];
                        for ci in 0..c {
                            let go = dcur.data()[bi * c + ci];
                            if go == 0.0 {
                                continue;
                            }
                            let wrow = &w.data()[ci * f..(ci + 1) * f];
                            let drow = &mut dw_data[ci * f..(ci + 1) * f];
                            let din = &mut dinput[bi * f..(bi + 1) * f];
                            for fi in 0..f {
                                drow[fi] += go * x[fi];
                                din[fi] += go * wrow[fi];
                            }
                        }
                    }
                }
                {
                    let db = grads
                        .get_mut(bias)
                        .ok_or_else(|| Error::UnknownParameter(bias.clone()))?;
                    let db_data = db.data_mut();
                    for bi in 0..b {
                        for ci in 0..c {
                            db_data[ci] += dcur.data()[bi * c + ci];
                        }
                    }
                }
                Tensor::new(vec![b, f], dinput)?
            }
        };
    }
    Ok(grads)
}

/// Mean cross-entropy over a batch with a class mask.
///
/// Masked-out columns are excluded from the softmax normalizer entirely, as
/// if their logits were −∞. Returns the scalar loss and its exact gradient
/// with respect to the logits; masked-out gradient columns are zero.
///
/// A label pointing at a masked-out class is an error: it signals a sampler
/// bug upstream, not a recoverable condition.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    mask: &[bool],
) -> Result<(f64, Tensor)> {
    let (b, c) = match *logits.shape() {
        [b, c] => (b, c),
        _ => {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits must be [B,C], got {:?}", logits.shape()),
            ))
        }
    };
    if mask.len() != c {
        return Err(Error::shape(
            "cross_entropy",
            format!("mask length {} vs {} classes", mask.len(), c),
        ));
    }
    if labels.len() != b {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} labels for batch of {}", labels.len(), b),
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Config("class mask excludes every class".into()));
    }
    let mut dlogits = vec![0.0; b * c];
    let mut total = 0.0;
    let inv_b = 1.0 / b as f64;
    for row in 0..b {
        let y = labels[row];
        if y >= c || !mask[y] {
            return Err(Error::MaskedLabel { label: y });
        }
        let lrow = &logits.data()[row * c..(row + 1) * c];
        let mut max = f64::NEG_INFINITY;
        for (j, &l) in lrow.iter().enumerate() {
            if mask[j] && l > max {
                max = l;
            }
        }
        let mut z = 0.0;
        for (j, &l) in lrow.iter().enumerate() {
            if mask[j] {
                z += (l - max).exp();
            }
        }
        let log_z = z.ln();
        total += -(lrow[y] - max - log_z);
        let drow = &mut dlogits[row * c..(row + 1) * c];
        for (j, &l) in lrow.iter().enumerate() {
            if mask[j] {
                drow[j] = (l - max).exp() / z * inv_b;
            }
        }
        drow[y] -= inv_b;
    }
    Ok((total * inv_b, Tensor::new(vec![b, c], dlogits)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::seeding::rng_from;

    /// Independent nested-loop convolution used as the test oracle.
    fn conv_oracle(input: &Tensor, kernels: &Tensor, bias: &Tensor, stride: usize) -> Tensor {
        let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (c_out, kh, kw) = (kernels.shape()[0], kernels.shape()[2], kernels.shape()[3]);
        let h_out = (h - kh) / stride + 1;
        let w_out = (w - kw) / stride + 1;
        let mut out = Tensor::zeros(&[c_out, h_out, w_out]);
        for o in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = bias.at(&[o]);
                    for c in 0..c_in {
                        for i in 0..kh {
                            for j in 0..kw {
                                acc += kernels.at(&[o, c, i, j])
                                    * input.at(&[c, oy * stride + i, ox * stride + j]);
                            }
                        }
                    }
                    let idx = (o * h_out + oy) * w_out + ox;
                    out.data_mut()[idx] = acc;
                }
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let mut rng = rng_from(1);
        let input = random_tensor(&[1, 4, 4], &mut rng);
        let kernels = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &kernels, &bias, 1).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_zero_kernels_give_zero_output() {
        let mut rng = rng_from(2);
        let input = random_tensor(&[3, 5, 6], &mut rng);
        let kernels = Tensor::zeros(&[2, 3, 2, 2]);
        let bias = Tensor::zeros(&[2]);
        let out = conv2d_forward(&input, &kernels, &bias, 1).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut rng = rng_from(3);
        let input = random_tensor(&[2, 5, 5], &mut rng);
        let kernels = random_tensor(&[3, 2, 3, 3], &mut rng);
        let bias = random_tensor(&[3], &mut rng);
        let got = conv2d_forward(&input, &kernels, &bias, 2).unwrap();
        let want = conv_oracle(&input, &kernels, &bias, 2);
        assert_eq!(got.shape(), &[3, 2, 2]);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
        }
    }

    #[test]
    fn conv_output_size_follows_floor_formula() {
        let input = Tensor::zeros(&[1, 10, 7]);
        let kernels = Tensor::zeros(&[1, 1, 3, 3]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &kernels, &bias, 2).unwrap();
        // (10-3)/2+1 = 4, (7-3)/2+1 = 3
        assert_eq!(out.shape(), &[1, 4, 3]);
    }

    #[test]
    fn conv_rejects_oversized_kernel() {
        let input = Tensor::zeros(&[1, 2, 2]);
        let kernels = Tensor::zeros(&[1, 1, 3, 3]);
        let bias = Tensor::zeros(&[1]);
        let err = conv2d_forward(&input, &kernels, &bias, 1).unwrap_err();
        assert!(err.to_string().contains("larger than input"));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::zeros(&[2, 4, 4]);
        let kernels = Tensor::zeros(&[1, 3, 2, 2]);
        let bias = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&input, &kernels, &bias, 1).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits_give_ln_c() {
        let logits = Tensor::zeros(&[3, 5]);
        let mask = vec![true; 5];
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 2, 4], &mask).unwrap();
        assert!((loss - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_logit_gives_tiny_loss() {
        let mut logits = Tensor::zeros(&[1, 5]);
        logits.data_mut()[2] = 1000.0;
        let mask = vec![true; 5];
        let (loss, _) = softmax_cross_entropy(&logits, &[2], &mask).unwrap();
        assert!(loss < 1e-6);
    }

    #[test]
    fn cross_entropy_mask_equals_dense_computation_on_selected_columns() {
        let mut rng = rng_from(4);
        let wide = random_tensor(&[4, 10], &mut rng);
        // Mask in columns 1, 3, 4, 7, 9.
        let keep = [1usize, 3, 4, 7, 9];
        let mut mask = vec![false; 10];
        for &k in &keep {
            mask[k] = true;
        }
        let labels_wide = [3usize, 9, 1, 4];

        let mut narrow_data = Vec::new();
        for row in 0..4 {
            for &k in &keep {
                narrow_data.push(wide.at(&[row, k]));
            }
        }
        let narrow = Tensor::new(vec![4, 5], narrow_data).unwrap();
        let labels_narrow: Vec<usize> = labels_wide
            .iter()
            .map(|l| keep.iter().position(|k| k == l).unwrap())
            .collect();

        let (loss_wide, d_wide) = softmax_cross_entropy(&wide, &labels_wide, &mask).unwrap();
        let (loss_narrow, d_narrow) =
            softmax_cross_entropy(&narrow, &labels_narrow, &vec![true; 5]).unwrap();
        assert!((loss_wide - loss_narrow).abs() < 1e-12);
        for row in 0..4 {
            for (ni, &k) in keep.iter().enumerate() {
                assert!((d_wide.at(&[row, k]) - d_narrow.at(&[row, ni])).abs() < 1e-12);
            }
        }
        // Masked-out gradient columns are exactly zero.
        for row in 0..4 {
            for j in 0..10 {
                if !mask[j] {
                    assert_eq!(d_wide.at(&[row, j]), 0.0);
                }
            }
        }
    }

    #[test]
    fn cross_entropy_rejects_masked_out_label() {
        let logits = Tensor::zeros(&[1, 3]);
        let mask = vec![true, false, true];
        let err = softmax_cross_entropy(&logits, &[1], &mask).unwrap_err();
        assert!(matches!(err, Error::MaskedLabel { label: 1 }));
    }

    #[test]
    fn cross_entropy_probabilities_and_gradient_rows_are_normalized() {
        let mut rng = rng_from(5);
        let logits = random_tensor(&[6, 8], &mut rng);
        let mut mask = vec![true; 8];
        mask[0] = false;
        mask[5] = false;
        let labels = [1usize, 2, 3, 4, 6, 7];
        let (_, d) = softmax_cross_entropy(&logits, &labels, &mask).unwrap();
        // Each gradient row sums to zero over masked-in columns: p sums to 1
        // and the one-hot subtracts exactly 1/B in total per row.
        for row in 0..6 {
            let sum: f64 = (0..8).filter(|&j| mask[j]).map(|j| d.at(&[row, j])).sum();
            assert!(sum.abs() < 1e-12, "row {row} sums to {sum}");
        }
    }

    #[test]
    fn backward_of_zero_dlogits_is_all_zero() {
        let mut rng = rng_from(6);
        let mut params = ParameterSet::new();
        params
            .insert("w", random_tensor(&[3, 4], &mut rng))
            .unwrap();
        params.insert("b", random_tensor(&[3], &mut rng)).unwrap();
        let layers = vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                weights: "w".into(),
                bias: "b".into(),
            },
        ];
        let input = random_tensor(&[2, 1, 2, 2], &mut rng);
        let (_, tape) = forward_pass(&layers, &params, &input).unwrap();
        let grads = model_backward(&tape, &params, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(grads.iter().all(|(_, t)| t.data().iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn backward_rejects_mismatched_dlogits() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::zeros(&[3, 4])).unwrap();
        params.insert("b", Tensor::zeros(&[3])).unwrap();
        let layers = vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                weights: "w".into(),
                bias: "b".into(),
            },
        ];
        let input = Tensor::zeros(&[2, 1, 2, 2]);
        let (_, tape) = forward_pass(&layers, &params, &input).unwrap();
        assert!(model_backward(&tape, &params, &Tensor::zeros(&[2, 4])).is_err());
    }
}
