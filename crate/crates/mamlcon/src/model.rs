//! The word classifier: a small feature extractor feeding a single dense
//! head, with a growing class mask over a fixed-size head.
//!
//! The head is sized to the scenario's final class count from the start and
//! a [`ClassMask`] tracks which rows are live. Keeping every parameter shape
//! constant lets a meta-learned initialization copy cleanly into any episode,
//! and the between-epoch label shuffling makes all head rows exchangeable
//! anyway. The feature-extractor/head split (`fe`/`pn`) is what the OML
//! baseline freezes in its inner loop.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{forward_pass, LayerSpec, ParameterSet, Tape, Tensor};

/// Feature-extractor architecture ahead of the dense head.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureExtractor {
    /// Three valid 2-D convolutions with ReLU, then flatten.
    Conv {
        channels: [usize; 3],
        kernel: (usize, usize),
        stride: usize,
    },
    /// Two ReLU hidden layers on the flattened input; for synthetic
    /// vector tasks where a 2-D convolution makes no sense.
    Mlp { hidden: [usize; 2] },
}

impl FeatureExtractor {
    pub fn conv_default() -> Self {
        FeatureExtractor::Conv {
            channels: [16, 32, 64],
            kernel: (3, 3),
            stride: 2,
        }
    }

    pub fn mlp_default() -> Self {
        FeatureExtractor::Mlp { hidden: [64, 64] }
    }
}

/// Classifier shape: input geometry, extractor, and head width.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// (channels, frames, coefficients).
    pub input_shape: (usize, usize, usize),
    pub extractor: FeatureExtractor,
    /// Number of head rows; the scenario's final class count.
    pub head_classes: usize,
}

impl ModelConfig {
    /// Convolutional model over `[frames, coeffs]` feature maps.
    pub fn conv(frames: usize, coeffs: usize, head_classes: usize) -> Self {
        ModelConfig {
            input_shape: (1, frames, coeffs),
            extractor: FeatureExtractor::conv_default(),
            head_classes,
        }
    }

    /// MLP model over flat `dim`-vectors.
    pub fn mlp(dim: usize, head_classes: usize) -> Self {
        ModelConfig {
            input_shape: (1, 1, dim),
            extractor: FeatureExtractor::mlp_default(),
            head_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.param_shapes().map(|_| ())
    }

    /// The forward layer sequence with its parameter names.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        match &self.extractor {
            FeatureExtractor::Conv { stride, .. } => {
                for i in 1..=3 {
                    layers.push(LayerSpec::Conv2d {
                        weights: format!("conv{i}.weight"),
                        bias: format!("conv{i}.bias"),
                        stride: *stride,
                    });
                    layers.push(LayerSpec::Relu);
                }
                layers.push(LayerSpec::Flatten);
            }
            FeatureExtractor::Mlp { .. } => {
                layers.push(LayerSpec::Flatten);
                for i in 1..=2 {
                    layers.push(LayerSpec::Dense {
                        weights: format!("fc{i}.weight"),
                        bias: format!("fc{i}.bias"),
                    });
                    layers.push(LayerSpec::Relu);
                }
            }
        }
        layers.push(LayerSpec::Dense {
            weights: "head.weight".into(),
            bias: "head.bias".into(),
        });
        layers
    }

    /// Closed-form parameter names and shapes, in deterministic order.
    ///
    /// Fails when the input is too small to survive the three valid strided
    /// convolutions.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        let (c0, h0, w0) = self.input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 || self.head_classes == 0 {
            return Err(Error::Config(format!(
                "degenerate model config: input {:?}, head {}",
                self.input_shape, self.head_classes
            )));
        }
        let mut shapes = Vec::new();
        let feature_dim = match &self.extractor {
            FeatureExtractor::Conv {
                channels,
                kernel,
                stride,
            } => {
                let (kh, kw) = *kernel;
                if kh == 0 || kw == 0 || *stride == 0 || channels.contains(&0) {
                    return Err(Error::Config("conv extractor has a zero dimension".into()));
                }
                let (mut c, mut h, mut w) = (c0, h0, w0);
                for (i, &out_c) in channels.iter().enumerate() {
                    if h < kh || w < kw {
                        return Err(Error::Config(format!(
                            "input {h0}x{w0} too small: {h}x{w} left before conv{} with {kh}x{kw} kernel",
                            i + 1
                        )));
                    }
                    shapes.push((format!("conv{}.weight", i + 1), vec![out_c, c, kh, kw]));
                    shapes.push((format!("conv{}.bias", i + 1), vec![out_c]));
                    h = (h - kh) / stride + 1;
                    w = (w - kw) / stride + 1;
                    c = out_c;
                }
                c * h * w
            }
            FeatureExtractor::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::Config("mlp extractor has a zero width".into()));
                }
                let mut in_dim = c0 * h0 * w0;
                for (i, &width) in hidden.iter().enumerate() {
                    shapes.push((format!("fc{}.weight", i + 1), vec![width, in_dim]));
                    shapes.push((format!("fc{}.bias", i + 1), vec![width]));
                    in_dim = width;
                }
                in_dim
            }
        };
        shapes.push(("head.weight".into(), vec![self.head_classes, feature_dim]));
        shapes.push(("head.bias".into(), vec![self.head_classes]));
        Ok(shapes)
    }

    /// Feature-extractor parameter names (everything except the head).
    pub fn fe_param_names(&self) -> Result<Vec<String>> {
        Ok(self
            .param_shapes()?
            .into_iter()
            .map(|(n, _)| n)
            .filter(|n| !n.starts_with("head."))
            .collect())
    }

    /// Prediction-network parameter names: exactly the dense head.
    pub fn pn_param_names(&self) -> Vec<String> {
        vec!["head.weight".into(), "head.bias".into()]
    }

    /// Kaiming-uniform weights, zero biases; deterministic given the rng.
    pub fn init_params(&self, rng: &mut impl Rng) -> Result<ParameterSet> {
        let mut params = ParameterSet::new();
        for (name, shape) in self.param_shapes()? {
            let n: usize = shape.iter().product();
            let tensor = if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                // fan_in: all non-leading axes (C_in·kH·kW for conv, F for dense).
                let fan_in: usize = shape[1..].iter().product();
                let bound = (6.0 / fan_in as f64).sqrt();
                Tensor::new(
                    shape.clone(),
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
                )?
            };
            params.insert(name, tensor)?;
        }
        Ok(params)
    }

    /// Forward a `[B, channels, frames, coeffs]` batch.
    ///
    /// Logits of masked-out classes come back as −∞ so that no downstream
    /// argmax or softmax can select them; the returned tape supports
    /// [`model_backward`](crate::nn::model_backward).
    pub fn predict(
        &self,
        params: &ParameterSet,
        batch: &Tensor,
        mask: &ClassMask,
    ) -> Result<(Tensor, Tape)> {
        let (c, h, w) = self.input_shape;
        match *batch.shape() {
            [_, bc, bh, bw] if (bc, bh, bw) == (c, h, w) => {}
            _ => {
                return Err(Error::shape(
                    "predict",
                    format!(
                        "batch {:?} does not match input shape [B, {c}, {h}, {w}]",
                        batch.shape()
                    ),
                ))
            }
        }
        if mask.len() != self.head_classes {
            return Err(Error::shape(
                "predict",
                format!("mask has {} entries, head has {}", mask.len(), self.head_classes),
            ));
        }
        let (mut logits, tape) = forward_pass(&self.layers(), params, batch)?;
        let n = self.head_classes;
        let b = logits.shape()[0];
        for bi in 0..b {
            for j in 0..n {
                if !mask.is_marked(j) {
                    logits.data_mut()[bi * n + j] = f64::NEG_INFINITY;
                }
            }
        }
        Ok((logits, tape))
    }

    /// Partition into (feature extractor, prediction network).
    ///
    /// The partition is lossless: [`merge_params`](Self::merge_params) on the
    /// two halves reproduces the original set bitwise.
    pub fn split_params(&self, params: &ParameterSet) -> Result<(ParameterSet, ParameterSet)> {
        let expected = self.param_shapes()?;
        if params.len() != expected.len() {
            return Err(Error::Config(format!(
                "parameter set has {} entries, config defines {}",
                params.len(),
                expected.len()
            )));
        }
        let mut fe = ParameterSet::new();
        let mut pn = ParameterSet::new();
        for name in params.names() {
            if !expected.iter().any(|(n, _)| n == name) {
                return Err(Error::UnknownParameter(name.to_string()));
            }
        }
        for (name, _) in &expected {
            let tensor = params.expect(name)?.clone();
            if name.starts_with("head.") {
                pn.insert(name.clone(), tensor)?;
            } else {
                fe.insert(name.clone(), tensor)?;
            }
        }
        Ok((fe, pn))
    }

    /// Reassemble a full parameter set from its two halves, restoring the
    /// canonical ordering.
    pub fn merge_params(&self, fe: &ParameterSet, pn: &ParameterSet) -> Result<ParameterSet> {
        let expected = self.param_shapes()?;
        if fe.len() + pn.len() != expected.len() {
            return Err(Error::Config(format!(
                "split halves hold {} entries, config defines {}",
                fe.len() + pn.len(),
                expected.len()
            )));
        }
        let mut merged = ParameterSet::new();
        for (name, _) in &expected {
            let tensor = fe
                .get(name)
                .or_else(|| pn.get(name))
                .ok_or_else(|| Error::UnknownParameter(name.clone()))?;
            merged.insert(name.clone(), tensor.clone())?;
        }
        Ok(merged)
    }
}

/// Which head rows are live. Grows monotonically within an episode; there is
/// deliberately no way to unmark a class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassMask {
    flags: Vec<bool>,
}

impl ClassMask {
    /// All classes masked out.
    pub fn new(classes: usize) -> Self {
        ClassMask {
            flags: vec![false; classes],
        }
    }

    /// All classes masked in.
    pub fn all(classes: usize) -> Self {
        ClassMask {
            flags: vec![true; classes],
        }
    }

    pub fn mark(&mut self, index: usize) -> Result<()> {
        if index >= self.flags.len() {
            return Err(Error::Config(format!(
                "class index {index} out of range for {}-way head",
                self.flags.len()
            )));
        }
        self.flags[index] = true;
        Ok(())
    }

    pub fn is_marked(&self, index: usize) -> bool {
        self.flags.get(index).copied().unwrap_or(false)
    }

    pub fn true_count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.flags
    }
}

/// Per-item argmax over masked-in classes.
pub fn argmax_masked(logits: &Tensor, mask: &ClassMask) -> Vec<usize> {
    let c = mask.len();
    let b = logits.shape()[0];
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let row = &logits.data()[bi * c..(bi + 1) * c];
        let mut best = None;
        for (j, &l) in row.iter().enumerate() {
            if !mask.is_marked(j) {
                continue;
            }
            match best {
                None => best = Some((j, l)),
                Some((_, bl)) if l > bl => best = Some((j, l)),
                _ => {}
            }
        }
        out.push(best.map(|(j, _)| j).expect("mask has a live class"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;

    fn small_conv_config() -> ModelConfig {
        ModelConfig {
            input_shape: (1, 15, 15),
            extractor: FeatureExtractor::Conv {
                channels: [2, 3, 4],
                kernel: (3, 3),
                stride: 2,
            },
            head_classes: 5,
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_params() {
        let cfg = small_conv_config();
        let a = cfg.init_params(&mut rng_from(9)).unwrap();
        let b = cfg.init_params(&mut rng_from(9)).unwrap();
        for ((_, ta), (_, tb)) in a.iter().zip(b.iter()) {
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let cfg = small_conv_config();
        let a = cfg.init_params(&mut rng_from(9)).unwrap();
        let b = cfg.init_params(&mut rng_from(10)).unwrap();
        assert!(a.iter().zip(b.iter()).any(|((_, ta), (_, tb))| ta != tb));
    }

    #[test]
    fn default_conv_shapes_match_hand_computation() {
        // (1, 101, 39) through three stride-2 valid 3x3 convs:
        // 101→50→24→11 frames, 39→19→9→4 coeffs, so the head sees 64·11·4.
        let cfg = ModelConfig::conv(101, 39, 50);
        let shapes = cfg.param_shapes().unwrap();
        let lookup = |n: &str| {
            shapes
                .iter()
                .find(|(name, _)| name == n)
                .map(|(_, s)| s.clone())
                .unwrap()
        };
        assert_eq!(lookup("conv1.weight"), vec![16, 1, 3, 3]);
        assert_eq!(lookup("conv2.weight"), vec![32, 16, 3, 3]);
        assert_eq!(lookup("conv3.weight"), vec![64, 32, 3, 3]);
        assert_eq!(lookup("head.weight"), vec![50, 64 * 11 * 4]);
        assert_eq!(lookup("head.bias"), vec![50]);
        assert_eq!(shapes.len(), 8);
    }

    #[test]
    fn too_small_input_is_a_config_error() {
        let cfg = ModelConfig::conv(5, 5, 3);
        assert!(cfg.param_shapes().is_err());
    }

    #[test]
    fn single_live_class_forces_argmax() {
        let cfg = small_conv_config();
        let params = cfg.init_params(&mut rng_from(11)).unwrap();
        let mut mask = ClassMask::new(5);
        mask.mark(3).unwrap();
        let batch = Tensor::new(
            vec![4, 1, 15, 15],
            (0..4 * 15 * 15).map(|i| (i % 7) as f64 * 0.1).collect(),
        )
        .unwrap();
        let (logits, _) = cfg.predict(&params, &batch, &mask).unwrap();
        assert_eq!(argmax_masked(&logits, &mask), vec![3, 3, 3, 3]);
    }

    #[test]
    fn widening_the_mask_preserves_existing_logits() {
        let cfg = small_conv_config();
        let params = cfg.init_params(&mut rng_from(12)).unwrap();
        let batch = Tensor::new(
            vec![2, 1, 15, 15],
            (0..2 * 15 * 15).map(|i| (i % 5) as f64 - 2.0).collect(),
        )
        .unwrap();
        let mut narrow = ClassMask::new(5);
        narrow.mark(0).unwrap();
        narrow.mark(2).unwrap();
        let (l_narrow, _) = cfg.predict(&params, &batch, &narrow).unwrap();
        let mut wide = narrow.clone();
        wide.mark(4).unwrap();
        let (l_wide, _) = cfg.predict(&params, &batch, &wide).unwrap();
        for bi in 0..2 {
            for j in [0usize, 2] {
                assert_eq!(l_narrow.at(&[bi, j]).to_bits(), l_wide.at(&[bi, j]).to_bits());
            }
        }
    }

    #[test]
    fn batched_prediction_equals_concatenated_items() {
        let cfg = small_conv_config();
        let params = cfg.init_params(&mut rng_from(13)).unwrap();
        let mask = ClassMask::all(5);
        let a = Tensor::new(
            vec![1, 1, 15, 15],
            (0..225).map(|i| (i as f64).sin()).collect(),
        )
        .unwrap();
        let b = Tensor::new(
            vec![1, 1, 15, 15],
            (0..225).map(|i| (i as f64).cos()).collect(),
        )
        .unwrap();
        let mut joint_data = a.data().to_vec();
        joint_data.extend_from_slice(b.data());
        let joint = Tensor::new(vec![2, 1, 15, 15], joint_data).unwrap();

        let (la, _) = cfg.predict(&params, &a, &mask).unwrap();
        let (lb, _) = cfg.predict(&params, &b, &mask).unwrap();
        let (lj, _) = cfg.predict(&params, &joint, &mask).unwrap();
        for j in 0..5 {
            assert!((lj.at(&[0, j]) - la.at(&[0, j])).abs() < 1e-12);
            assert!((lj.at(&[1, j]) - lb.at(&[0, j])).abs() < 1e-12);
        }
    }

    #[test]
    fn split_then_merge_is_bitwise_identity() {
        let cfg = small_conv_config();
        let params = cfg.init_params(&mut rng_from(14)).unwrap();
        let (fe, pn) = cfg.split_params(&params).unwrap();
        let merged = cfg.merge_params(&fe, &pn).unwrap();
        assert!(merged.same_layout(&params));
        for ((na, ta), (nb, tb)) in merged.iter().zip(params.iter()) {
            assert_eq!(na, nb);
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn pn_is_exactly_the_head() {
        let cfg = small_conv_config();
        let params = cfg.init_params(&mut rng_from(15)).unwrap();
        let (fe, pn) = cfg.split_params(&params).unwrap();
        let mut pn_names: Vec<_> = pn.names().collect();
        pn_names.sort_unstable();
        assert_eq!(pn_names, vec!["head.bias", "head.weight"]);
        assert_eq!(fe.len(), params.len() - 2);
    }

    #[test]
    fn mlp_shapes() {
        let cfg = ModelConfig::mlp(16, 6);
        let shapes = cfg.param_shapes().unwrap();
        assert_eq!(shapes[0], ("fc1.weight".into(), vec![64, 16]));
        assert_eq!(shapes[2], ("fc2.weight".into(), vec![64, 64]));
        assert_eq!(shapes[4], ("head.weight".into(), vec![6, 64]));
    }
}
