use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BatchNorm2d, Conv1x1, Conv3x3, ConvTranspose2x2, MaxPool2x2, Param, Tensor};
use crate::error::{Error, Result};

/// Architecture of the encoder/decoder network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Number of 2x downsampling levels.
    pub depth: usize,
    /// Channels at the first level; doubled at every level below.
    pub base_width: usize,
}

impl UNetConfig {
    pub fn new(in_channels: usize) -> Self {
        UNetConfig {
            in_channels,
            depth: 4,
            base_width: 32,
        }
    }

    /// Input sides must be divisible by this.
    pub fn side_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.depth == 0 || self.depth > 8 {
            return Err(Error::InvalidParameter(format!("invalid UNet config {self:?}")));
        }
        Ok(())
    }
}

/// conv3x3 -> batch norm -> ReLU, twice.
#[derive(Debug, Clone)]
struct DoubleConv {
    conv1: Conv3x3,
    bn1: BatchNorm2d,
    conv2: Conv3x3,
    bn2: BatchNorm2d,
    act1: Option<Tensor>,
    act2: Option<Tensor>,
}

fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn relu_backward(dy: &mut Tensor, out: &Tensor) {
    dy.data.iter_mut().zip(&out.data).for_each(|(d, o)| {
        if *o <= 0.0 {
            *d = 0.0
        }
    });
}

impl DoubleConv {
    fn new(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        DoubleConv {
            conv1: Conv3x3::new(cin, cout, false, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv3x3::new(cout, cout, false, rng),
            bn2: BatchNorm2d::new(cout),
            act1: None,
            act2: None,
        }
    }

    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = self.bn1.forward(&self.conv1.forward(x, train), train);
        relu_inplace(&mut h);
        let mut y = self.bn2.forward(&self.conv2.forward(&h, train), train);
        relu_inplace(&mut y);
        if train {
            self.act1 = Some(h);
            self.act2 = Some(y.clone());
        }
        y
    }

    fn backward(&mut self, dy: &Tensor, need_dx: bool) -> Option<Tensor> {
        let mut d = dy.clone();
        relu_backward(&mut d, &self.act2.take().expect("DoubleConv::backward without forward"));
        let d = self.bn2.backward(&d);
        let mut d = self.conv2.backward(&d, true).expect("inner dx");
        relu_backward(&mut d, &self.act1.take().expect("DoubleConv::backward without forward"));
        let d = self.bn1.backward(&d);
        self.conv1.backward(&d, need_dx)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.conv1.weight,
            &mut self.bn1.gamma,
            &mut self.bn1.beta,
            &mut self.conv2.weight,
            &mut self.bn2.gamma,
            &mut self.bn2.beta,
        ]
    }

    fn tensors(&self, prefix: &str, out: &mut Vec<(String, Vec<f32>)>) {
        out.push((format!("{prefix}.conv1.weight"), self.conv1.weight.value.clone()));
        push_bn(&self.bn1, &format!("{prefix}.bn1"), out);
        out.push((format!("{prefix}.conv2.weight"), self.conv2.weight.value.clone()));
        push_bn(&self.bn2, &format!("{prefix}.bn2"), out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Vec<f32>>) {
        out.push(&mut self.conv1.weight.value);
        bn_mut(&mut self.bn1, out);
        out.push(&mut self.conv2.weight.value);
        bn_mut(&mut self.bn2, out);
    }
}

fn push_bn(bn: &BatchNorm2d, prefix: &str, out: &mut Vec<(String, Vec<f32>)>) {
    out.push((format!("{prefix}.gamma"), bn.gamma.value.clone()));
    out.push((format!("{prefix}.beta"), bn.beta.value.clone()));
    out.push((format!("{prefix}.running_mean"), bn.running_mean.clone()));
    out.push((format!("{prefix}.running_var"), bn.running_var.clone()));
}

fn bn_mut<'a>(bn: &'a mut BatchNorm2d, out: &mut Vec<&'a mut Vec<f32>>) {
    out.push(&mut bn.gamma.value);
    out.push(&mut bn.beta.value);
    out.push(&mut bn.running_mean);
    out.push(&mut bn.running_var);
}

/// Encoder/decoder network with skip connections producing one output channel.
///
/// Encoder level `l` has `base_width * 2^l` channels and is followed by 2x max pooling;
/// the bottleneck has `base_width * 2^depth`. Each decoder level upsamples with a 2x2
/// transposed convolution, concatenates the matching encoder activation and applies a
/// double convolution. A final 1x1 convolution maps to one channel with no activation.
#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    enc: Vec<DoubleConv>,
    pools: Vec<MaxPool2x2>,
    bottleneck: DoubleConv,
    ups: Vec<ConvTranspose2x2>,
    dec: Vec<DoubleConv>,
    head: Conv1x1,
}

impl UNet {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = |l: usize| config.base_width << l;
        let mut enc = Vec::new();
        let mut cin = config.in_channels;
        for l in 0..config.depth {
            enc.push(DoubleConv::new(cin, width(l), &mut rng));
            cin = width(l);
        }
        let bottleneck = DoubleConv::new(cin, width(config.depth), &mut rng);
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for l in 0..config.depth {
            ups.push(ConvTranspose2x2::new(width(l + 1), width(l), &mut rng));
            dec.push(DoubleConv::new(2 * width(l), width(l), &mut rng));
        }
        let head = Conv1x1::new(width(0), 1, &mut rng);
        Ok(UNet {
            pools: vec![MaxPool2x2::default(); config.depth],
            config,
            enc,
            bottleneck,
            ups,
            dec,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let m = self.config.side_multiple();
        if x.c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, model expects {}",
                x.c, self.config.in_channels
            )));
        }
        if x.h == 0 || x.w == 0 || x.h % m != 0 || x.w % m != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} is not divisible by {m}",
                x.h, x.w
            )));
        }
        Ok(())
    }

    /// Runs the network. In training mode batch statistics are used and activations are
    /// kept for [`UNet::backward`].
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        self.check_input(x)?;
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut h = x.clone();
        for l in 0..depth {
            let s = self.enc[l].forward(&h, train);
            h = self.pools[l].forward(&s, train);
            skips.push(s);
        }
        h = self.bottleneck.forward(&h, train);
        for l in (0..depth).rev() {
            let u = self.ups[l].forward(&h, train);
            let cat = Tensor::concat_channels(&u, &skips[l]);
            h = self.dec[l].forward(&cat, train);
        }
        Ok(self.head.forward(&h, train))
    }

    /// Inference-mode forward pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.clone().forward(x, false)
    }

    /// Back-propagates `dy` (gradient w.r.t. the output) and accumulates parameter gradients.
    pub fn backward(&mut self, dy: &Tensor) {
        let depth = self.config.depth;
        let mut d = self.head.backward(dy);
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        for l in 0..depth {
            let dcat = self.dec[l].backward(&d, true).expect("decoder dx");
            let c_up = self.config.base_width << l;
            let (du, ds) = dcat.split_channels(c_up);
            skip_grads[l] = Some(ds);
            d = self.ups[l].backward(&du);
        }
        d = self.bottleneck.backward(&d, true).expect("bottleneck dx");
        for l in (0..depth).rev() {
            let mut ds = self.pools[l].backward(&d);
            ds.add_assign(skip_grads[l].as_ref().expect("skip grad"));
            if let Some(dx) = self.enc[l].backward(&ds, l > 0) {
                d = dx;
            }
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (e, d) in self.enc.iter_mut().zip(self.dec.iter_mut()) {
            out.extend(e.params_mut());
            out.extend(d.params_mut());
        }
        out.extend(self.bottleneck.params_mut());
        for u in &mut self.ups {
            out.push(&mut u.weight);
            out.push(&mut u.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    /// Every stored tensor (weights and normalization buffers) with a stable name.
    pub fn named_tensors(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for (l, e) in self.enc.iter().enumerate() {
            e.tensors(&format!("enc{l}"), &mut out);
        }
        self.bottleneck.tensors("bottleneck", &mut out);
        for (l, (u, d)) in self.ups.iter().zip(&self.dec).enumerate() {
            out.push((format!("up{l}.weight"), u.weight.value.clone()));
            out.push((format!("up{l}.bias"), u.bias.value.clone()));
            d.tensors(&format!("dec{l}"), &mut out);
        }
        out.push(("head.weight".into(), self.head.weight.value.clone()));
        out.push(("head.bias".into(), self.head.bias.value.clone()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for e in &mut self.enc {
            e.tensors_mut(&mut out);
        }
        self.bottleneck.tensors_mut(&mut out);
        for (u, d) in self.ups.iter_mut().zip(self.dec.iter_mut()) {
            out.push(&mut u.weight.value);
            out.push(&mut u.bias.value);
            d.tensors_mut(&mut out);
        }
        out.push(&mut self.head.weight.value);
        out.push(&mut self.head.bias.value);
        out
    }

    /// Replaces all stored tensors; shapes must match [`UNet::named_tensors`].
    pub fn load_tensors(&mut self, tensors: &[Vec<f32>]) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (k, (slot, t)) in slots.iter_mut().zip(tensors).enumerate() {
            if slot.len() != t.len() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {k} has {} values, expected {}",
                    t.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(t);
        }
        Ok(())
    }

    /// Sets the output layer to zero.
    pub fn zero_head(&mut self) {
        self.head.weight.value.fill(0.0);
        self.head.bias.value.fill(0.0);
    }

    pub fn n_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
