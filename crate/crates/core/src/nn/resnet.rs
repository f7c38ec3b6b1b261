//! Residual networks: the 50-layer bottleneck variant, the 18-layer basic
//! variant, and a narrow three-stage network for desk-scale experiments.
//!
//! Parameter names follow the common `conv1 / bn1 / layerN.B.convK /
//! layerN.B.downsample.{0,1} / fc` layout so published weight files map
//! onto the network by name.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    global_avg_pool, global_avg_pool_backward, relu_backward, relu_inplace, BatchNorm2d, Conv2d,
    Linear, MaxPool,
};
use super::{Backbone, BackboneOutput, LayerError, Mode, NamedTensorMut, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// Two 3×3 convolutions.
    Basic,
    /// 1×1 reduce, 3×3, 1×1 expand (×4).
    Bottleneck,
}

impl BlockKind {
    fn expansion(self) -> usize {
        match self {
            BlockKind::Basic => 1,
            BlockKind::Bottleneck => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub block: BlockKind,
    /// `(blocks, width)` per stage; every stage after the first halves the
    /// spatial resolution.
    pub stages: Vec<(usize, usize)>,
    pub num_classes: usize,
}

impl ResNetConfig {
    pub fn resnet50(num_classes: usize) -> Self {
        ResNetConfig {
            in_channels: 3,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            block: BlockKind::Bottleneck,
            stages: vec![(3, 64), (4, 128), (6, 256), (3, 512)],
            num_classes,
        }
    }

    pub fn resnet18(num_classes: usize) -> Self {
        ResNetConfig {
            block: BlockKind::Basic,
            stages: vec![(2, 64), (2, 128), (2, 256), (2, 512)],
            ..Self::resnet50(num_classes)
        }
    }

    /// Three basic stages of widths `w, 2w, 4w` with a 3×3 stride-1 stem.
    pub fn tiny(width: usize, num_classes: usize) -> Self {
        ResNetConfig {
            in_channels: 3,
            stem_channels: width,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            block: BlockKind::Basic,
            stages: vec![(1, width), (1, 2 * width), (1, 4 * width)],
            num_classes,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |&(_, w)| w * self.block.expansion())
    }
}

struct Block {
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm2d>,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    /// Outputs of the inner ReLUs, for backward.
    inner: Vec<Tensor>,
    out: Option<Tensor>,
}

impl Block {
    fn new(kind: BlockKind, in_ch: usize, width: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let out_ch = width * kind.expansion();
        let convs = match kind {
            BlockKind::Basic => vec![
                Conv2d::new(in_ch, width, 3, stride, 1, rng),
                Conv2d::new(width, width, 3, 1, 1, rng),
            ],
            BlockKind::Bottleneck => vec![
                Conv2d::new(in_ch, width, 1, 1, 0, rng),
                Conv2d::new(width, width, 3, stride, 1, rng),
                Conv2d::new(width, out_ch, 1, 1, 0, rng),
            ],
        };
        let bns = convs.iter().map(|c| BatchNorm2d::new(c.out_channels)).collect();
        let downsample = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::new(in_ch, out_ch, 1, stride, 0, rng), BatchNorm2d::new(out_ch)));
        Block {
            convs,
            bns,
            downsample,
            inner: Vec::new(),
            out: None,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.inner.clear();
        let last = self.convs.len() - 1;
        let mut h = x.clone();
        for (i, (conv, bn)) in self.convs.iter_mut().zip(&mut self.bns).enumerate() {
            h = bn.forward(conv.forward(&h), mode);
            if i < last {
                relu_inplace(&mut h);
                self.inner.push(h.clone());
            }
        }
        match &mut self.downsample {
            Some((conv, bn)) => {
                let s = bn.forward(conv.forward(x), mode);
                add_assign(&mut h, &s);
            }
            None => add_assign(&mut h, x),
        }
        relu_inplace(&mut h);
        self.out = Some(h.clone());
        h
    }

    fn backward(&mut self, mut d: Tensor) -> Tensor {
        relu_backward(&mut d, self.out.as_ref().expect("forward before backward"));
        let shortcut = d.clone();
        let mut dh = d;
        for i in (0..self.convs.len()).rev() {
            dh = self.convs[i].backward(&self.bns[i].backward(dh));
            if i > 0 {
                relu_backward(&mut dh, &self.inner[i - 1]);
            }
        }
        let ds = match &mut self.downsample {
            Some((conv, bn)) => conv.backward(&bn.backward(shortcut)),
            None => shortcut,
        };
        add_assign(&mut dh, &ds);
        dh
    }

    fn visit(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for (conv, bn) in self.convs.iter_mut().zip(&mut self.bns) {
            f(&mut conv.weight);
            f(&mut bn.gamma);
            f(&mut bn.beta);
        }
        if let Some((conv, bn)) = &mut self.downsample {
            f(&mut conv.weight);
            f(&mut bn.gamma);
            f(&mut bn.beta);
        }
    }

    fn named<'a>(&'a mut self, prefix: &str, out: &mut Vec<NamedTensorMut<'a>>) {
        for (i, (conv, bn)) in self.convs.iter_mut().zip(&mut self.bns).enumerate() {
            push_conv(out, &format!("{prefix}.conv{}", i + 1), conv);
            push_bn(out, &format!("{prefix}.bn{}", i + 1), bn);
        }
        if let Some((conv, bn)) = &mut self.downsample {
            push_conv(out, &format!("{prefix}.downsample.0"), conv);
            push_bn(out, &format!("{prefix}.downsample.1"), bn);
        }
    }
}

fn push_conv<'a>(out: &mut Vec<NamedTensorMut<'a>>, name: &str, conv: &'a mut Conv2d) {
    out.push(NamedTensorMut {
        name: format!("{name}.weight"),
        shape: conv.weight.shape.clone(),
        data: &mut conv.weight.value,
    });
}

fn push_bn<'a>(out: &mut Vec<NamedTensorMut<'a>>, name: &str, bn: &'a mut BatchNorm2d) {
    let c = bn.channels;
    out.push(NamedTensorMut {
        name: format!("{name}.weight"),
        shape: vec![c],
        data: &mut bn.gamma.value,
    });
    out.push(NamedTensorMut {
        name: format!("{name}.bias"),
        shape: vec![c],
        data: &mut bn.beta.value,
    });
    out.push(NamedTensorMut {
        name: format!("{name}.running_mean"),
        shape: vec![c],
        data: &mut bn.running_mean,
    });
    out.push(NamedTensorMut {
        name: format!("{name}.running_var"),
        shape: vec![c],
        data: &mut bn.running_var,
    });
}

fn add_assign(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

/// Layers whose outputs can be captured, in forward order. Index 0 is the
/// stem, index `s` the output of stage `s`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct LayerIndex(usize);

pub struct ResNet {
    config: ResNetConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stem_out: Option<Tensor>,
    pool: Option<MaxPool>,
    stages: Vec<Vec<Block>>,
    fc: Linear,
    frozen: bool,
    features_shape: [usize; 4],
    capture: Option<LayerIndex>,
    captured_activation: Option<Tensor>,
    captured_gradient: Option<Tensor>,
}

impl ResNet {
    pub fn new(config: ResNetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stem_conv = Conv2d::new(
            config.in_channels,
            config.stem_channels,
            config.stem_kernel,
            config.stem_stride,
            config.stem_kernel / 2,
            &mut rng,
        );
        let stem_bn = BatchNorm2d::new(config.stem_channels);
        let mut in_ch = config.stem_channels;
        let mut stages = Vec::new();
        for (s, &(blocks, width)) in config.stages.iter().enumerate() {
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                stage.push(Block::new(config.block, in_ch, width, stride, &mut rng));
                in_ch = width * config.block.expansion();
            }
            stages.push(stage);
        }
        let fc = Linear::new(in_ch, config.num_classes, &mut rng);
        ResNet {
            pool: config.stem_pool.then(MaxPool::new),
            config,
            stem_conv,
            stem_bn,
            stem_out: None,
            stages,
            fc,
            frozen: false,
            features_shape: [0; 4],
            capture: None,
            captured_activation: None,
            captured_gradient: None,
        }
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    fn parse_layer(&self, id: &str) -> Result<LayerIndex, LayerError> {
        if id == "stem" {
            return Ok(LayerIndex(0));
        }
        if matches!(id, "embedding" | "avgpool" | "fc" | "logits") {
            return Err(LayerError::NotSpatial(id.to_string()));
        }
        let number = id.strip_prefix("stage").or_else(|| id.strip_prefix("layer"));
        match number.and_then(|n| n.parse::<usize>().ok()) {
            Some(s) if (1..=self.stages.len()).contains(&s) => Ok(LayerIndex(s)),
            _ => Err(LayerError::Unknown(id.to_string())),
        }
    }

    fn record(&mut self, layer: usize, t: &Tensor) {
        if self.capture == Some(LayerIndex(layer)) {
            self.captured_activation = Some(t.clone());
        }
    }

    fn record_grad(&mut self, layer: usize, t: &Tensor) {
        if self.capture == Some(LayerIndex(layer)) {
            self.captured_gradient = Some(t.clone());
        }
    }
}

impl core::fmt::Debug for ResNet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ResNet")
            .field("config", &self.config)
            .field("frozen", &self.frozen)
            .finish_non_exhaustive()
    }
}

impl Backbone for ResNet {
    fn embedding_dim(&self) -> usize {
        self.config.embedding_dim()
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn forward(&mut self, input: &Tensor, mode: Mode) -> BackboneOutput {
        let feature_mode = if self.frozen { Mode::Eval } else { mode };
        let mut h = self.stem_bn.forward(self.stem_conv.forward(input), feature_mode);
        relu_inplace(&mut h);
        self.record(0, &h);
        self.stem_out = Some(h.clone());
        if let Some(pool) = &mut self.pool {
            h = pool.forward(&h);
        }
        for s in 0..self.stages.len() {
            for block in &mut self.stages[s] {
                h = block.forward(&h, feature_mode);
            }
            self.record(s + 1, &h);
        }
        self.features_shape = h.shape();
        let embeddings = global_avg_pool(&h);
        let logits = self.fc.forward(&embeddings);
        BackboneOutput { embeddings, logits }
    }

    fn backward(&mut self, d_embeddings: &[f32], d_logits: &[f32]) {
        let mut d_emb = self.fc.backward(d_logits);
        for (a, b) in d_emb.iter_mut().zip(d_embeddings) {
            *a += b;
        }
        if self.frozen && self.capture.is_none() {
            return;
        }
        let mut d = global_avg_pool_backward(&d_emb, self.features_shape);
        for s in (0..self.stages.len()).rev() {
            self.record_grad(s + 1, &d);
            for block in self.stages[s].iter_mut().rev() {
                d = block.backward(d);
            }
        }
        if let Some(pool) = &self.pool {
            d = pool.backward(&d);
        }
        self.record_grad(0, &d);
        relu_backward(&mut d, self.stem_out.as_ref().expect("forward before backward"));
        let d = self.stem_bn.backward(d);
        self.stem_conv.backward(&d);
    }

    fn visit_trainable(&mut self, f: &mut dyn FnMut(&mut Param)) {
        if !self.frozen {
            f(&mut self.stem_conv.weight);
            f(&mut self.stem_bn.gamma);
            f(&mut self.stem_bn.beta);
            for block in self.stages.iter_mut().flatten() {
                block.visit(f);
            }
        }
        f(&mut self.fc.weight);
        f(&mut self.fc.bias);
    }

    fn zero_grad(&mut self) {
        // Frozen feature layers still accumulate gradients for captures.
        let frozen = core::mem::replace(&mut self.frozen, false);
        self.visit_trainable(&mut |p| p.zero_grad());
        self.frozen = frozen;
    }

    fn set_frozen_features(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    fn layer_ids(&self) -> Vec<String> {
        let mut ids = vec![String::from("stem")];
        ids.extend((1..=self.stages.len()).map(|s| format!("stage{s}")));
        ids
    }

    fn set_capture(&mut self, layer: Option<&str>) -> Result<(), LayerError> {
        self.capture = layer.map(|id| self.parse_layer(id)).transpose()?;
        self.captured_activation = None;
        self.captured_gradient = None;
        Ok(())
    }

    fn captured(&self) -> Option<(&Tensor, &Tensor)> {
        Some((self.captured_activation.as_ref()?, self.captured_gradient.as_ref()?))
    }

    fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        let mut out = Vec::new();
        push_conv(&mut out, "conv1", &mut self.stem_conv);
        push_bn(&mut out, "bn1", &mut self.stem_bn);
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (b, block) in stage.iter_mut().enumerate() {
                block.named(&format!("layer{}.{b}", s + 1), &mut out);
            }
        }
        out.push(NamedTensorMut {
            name: String::from("fc.weight"),
            shape: self.fc.weight.shape.clone(),
            data: &mut self.fc.weight.value,
        });
        out.push(NamedTensorMut {
            name: String::from("fc.bias"),
            shape: self.fc.bias.shape.clone(),
            data: &mut self.fc.bias.value,
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn input(n: usize, size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f32, 1.0).unwrap();
        let data = (0..n * 3 * size * size).map(|_| normal.sample(&mut rng)).collect();
        Tensor::from_vec(n, 3, size, size, data).unwrap()
    }

    #[test]
    fn shapes_and_names() {
        let mut net = ResNet::new(ResNetConfig::tiny(4, 2), 0);
        let out = net.forward(&input(2, 16, 1), Mode::Train);
        assert_eq!(out.embeddings.len(), 2 * 16);
        assert_eq!(out.logits.len(), 4);
        assert_eq!(net.layer_ids(), ["stem", "stage1", "stage2", "stage3"]);
        let names: Vec<String> = net.tensors_mut().into_iter().map(|t| t.name).collect();
        assert!(names.contains(&String::from("layer2.0.downsample.0.weight")));
        assert!(names.contains(&String::from("layer1.0.bn2.running_var")));
    }

    #[test]
    fn resnet50_layout() {
        let cfg = ResNetConfig::resnet50(2);
        assert_eq!(cfg.embedding_dim(), 2048);
        let mut net = ResNet::new(cfg, 0);
        let mut params = 0usize;
        net.visit_trainable(&mut |p| params += p.value.len());
        // 23.5M feature parameters plus a 2048×2 head.
        assert_eq!(params, 23_508_032 + 2048 * 2 + 2);
        let names: Vec<String> = net.tensors_mut().into_iter().map(|t| t.name).collect();
        assert!(names.contains(&String::from("layer3.5.conv3.weight")));
        assert!(names.contains(&String::from("layer4.0.downsample.1.running_mean")));
    }

    /// Full-network gradient vs finite differences in eval mode, through
    /// both the logits and a direct embedding gradient.
    #[test]
    fn network_input_gradient() {
        let mut net = ResNet::new(ResNetConfig::tiny(2, 2), 3);
        // Make running statistics non-trivial.
        net.forward(&input(4, 8, 9), Mode::Train);
        let x = input(1, 8, 5);
        net.set_capture(Some("stem")).unwrap();
        let out = net.forward(&x, Mode::Eval);
        let d_emb: Vec<f32> = (0..out.embeddings.len()).map(|i| 0.3 - 0.1 * i as f32).collect();
        let d_logits = [1.0, -0.5];
        net.zero_grad();
        net.backward(&d_emb, &d_logits);
        let objective = |net: &mut ResNet, x: &Tensor| {
            let o = net.forward(x, Mode::Eval);
            let a: f32 = o.embeddings.iter().zip(&d_emb).map(|(a, b)| a * b).sum();
            a + o.logits[0] - 0.5 * o.logits[1]
        };
        // The stem weight gradient is the deepest one; check a few entries.
        let analytic: Vec<f32> = net.stem_conv.weight.grad[..12].to_vec();
        let h = 1e-2;
        for (idx, a) in analytic.iter().enumerate() {
            net.stem_conv.weight.value[idx] += h;
            let fp = objective(&mut net, &x);
            net.stem_conv.weight.value[idx] -= 2.0 * h;
            let fm = objective(&mut net, &x);
            net.stem_conv.weight.value[idx] += h;
            let num = (fp - fm) / (2.0 * h);
            assert!((num - a).abs() < 3e-2 * (1.0 + num.abs()), "{idx}: {num} vs {a}");
        }
    }

    #[test]
    fn capture_rejects_bad_layers() {
        let mut net = ResNet::new(ResNetConfig::tiny(2, 2), 0);
        assert_eq!(net.set_capture(Some("stage9")), Err(LayerError::Unknown("stage9".into())));
        assert_eq!(
            net.set_capture(Some("embedding")),
            Err(LayerError::NotSpatial("embedding".into()))
        );
        assert!(net.set_capture(Some("layer3")).is_ok());
    }

    #[test]
    fn frozen_features_only_expose_head() {
        let mut net = ResNet::new(ResNetConfig::tiny(2, 2), 0);
        net.set_frozen_features(true);
        let mut count = 0;
        net.visit_trainable(&mut |_| count += 1);
        assert_eq!(count, 2);
    }
}
