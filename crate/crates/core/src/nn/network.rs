//! Convolutional classifier with an auxiliary depth branch.
//!
//! ```text
//! image (1 x H x W)
//!   -> [conv3x3 + ReLU (+ maxpool2x2)] x N          shared trunk
//!   -> flatten -> [dense + ReLU] x M -> dense(6)    class logits
//!   -> conv1x1 (C -> 1) -> deconv (k = s = 2^pools)  depth prediction, H x W
//! ```
//!
//! Both branches start from the output of the last trunk block. The depth
//! branch is only evaluated when it is enabled and its loss weight is
//! non-zero, so a zero weight trains exactly like a network without it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{argmax, cross_entropy, masked_huber, LossConfig};
use super::tensor::{gemm, Tensor};
use super::NnError;
use crate::reprojection::SparseDepthMap;

pub const NUM_CLASSES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    /// 2x2 max-pool with stride 2 after the activation.
    pub pool: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_width: usize,
    pub input_height: usize,
    pub trunk: Vec<ConvBlock>,
    /// Widths of the hidden dense layers of the classifier head.
    pub hidden: Vec<usize>,
    /// Whether the depth branch exists at all.
    pub aux: bool,
}

impl Default for NetworkConfig {
    /// 64x64 input, channels 16/32/64/64, three pools, one hidden layer of 64.
    fn default() -> Self {
        Self {
            input_width: 64,
            input_height: 64,
            trunk: vec![
                ConvBlock {
                    out_channels: 16,
                    pool: true,
                },
                ConvBlock {
                    out_channels: 32,
                    pool: true,
                },
                ConvBlock {
                    out_channels: 64,
                    pool: true,
                },
                ConvBlock {
                    out_channels: 64,
                    pool: false,
                },
            ],
            hidden: vec![64],
            aux: true,
        }
    }
}

impl NetworkConfig {
    pub fn downsampling(&self) -> usize {
        1 << self.trunk.iter().filter(|b| b.pool).count()
    }

    /// `(channels, height, width)` of the last trunk block.
    pub fn feature_shape(&self) -> (usize, usize, usize) {
        let s = self.downsampling();
        let c = self.trunk.last().map_or(1, |b| b.out_channels);
        (c, self.input_height / s, self.input_width / s)
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.input_width == 0 || self.input_height == 0 {
            return bad("input size must be positive".into());
        }
        if self.trunk.is_empty() {
            return bad("trunk needs at least one block".into());
        }
        if self.trunk.iter().any(|b| b.out_channels == 0) || self.hidden.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        let s = self.downsampling();
        if self.input_width % s != 0 || self.input_height % s != 0 {
            return bad(format!(
                "input {}x{} is not divisible by the trunk downsampling {s}",
                self.input_width, self.input_height
            ));
        }
        Ok(())
    }

    /// Same network without the depth branch.
    pub fn without_aux(&self) -> Self {
        Self {
            aux: false,
            ..self.clone()
        }
    }
}

/// One training example: a normalized grayscale image, its label and the
/// sparse depth target of the same frame.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub image: &'a [f64],
    pub label: usize,
    pub target: Option<&'a SparseDepthMap>,
}

/// Per-sample loss terms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleLoss {
    pub class_loss: f64,
    /// Zero when the branch is inactive or the target has no valid pixel.
    pub aux_loss: f64,
    pub total: f64,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Vec<f64>,
    /// `H x W` row-major depth prediction, when the network has the branch.
    pub depth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    params: Vec<Tensor>,
}

struct BlockCache {
    /// im2col matrix of the block input, `(cin * 9) x (h * w)`.
    col: Vec<f64>,
    /// Post-ReLU activations, `cout x (h * w)`.
    act: Vec<f64>,
    /// For each pooled output, the flat index of its maximum in `act`.
    argmax: Vec<u32>,
    h: usize,
    w: usize,
    cin: usize,
}

struct DenseCache {
    input: Vec<f64>,
    /// Post-ReLU output for hidden layers.
    output: Vec<f64>,
}

struct AuxCache {
    collapsed: Vec<f64>,
}

struct Cache {
    blocks: Vec<BlockCache>,
    dense: Vec<DenseCache>,
    features: Vec<f64>,
    aux: Option<AuxCache>,
}

fn im2col(input: &[f64], c: usize, h: usize, w: usize, col: &mut [f64]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (x, o) in out.iter_mut().enumerate() {
                        let sx = x as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize {
                            0.0
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    out.fill(0.0);
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ch * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

fn max_pool(act: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * x + dx;
                    if act[i] > act[best] {
                        best = i;
                    }
                }
                out.push(act[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

/// Fan-in scaled uniform initialization: `U(-sqrt(6 / fan_in), +..)` before a
/// ReLU, `U(-sqrt(3 / fan_in), +..)` otherwise.
fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, relu: bool) -> Tensor {
    let bound = ((if relu { 6.0 } else { 3.0 }) / fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("shape matches data")
}

impl Network {
    /// Seeded initialization. The trunk and head are drawn before the depth
    /// branch, so enabling the branch does not change their initial values.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut cin = 1;
        for b in &config.trunk {
            params.push(init_uniform(
                &mut rng,
                &[b.out_channels, cin, 3, 3],
                cin * 9,
                true,
            ));
            params.push(Tensor::zeros(&[b.out_channels]));
            cin = b.out_channels;
        }
        let (c, h, w) = config.feature_shape();
        let mut fan_in = c * h * w;
        for &width in &config.hidden {
            params.push(init_uniform(&mut rng, &[width, fan_in], fan_in, true));
            params.push(Tensor::zeros(&[width]));
            fan_in = width;
        }
        params.push(init_uniform(
            &mut rng,
            &[NUM_CLASSES, fan_in],
            fan_in,
            false,
        ));
        params.push(Tensor::zeros(&[NUM_CLASSES]));
        if config.aux {
            let s = config.downsampling();
            params.push(init_uniform(&mut rng, &[1, c], c, false));
            params.push(Tensor::zeros(&[1]));
            params.push(init_uniform(&mut rng, &[1, 1, s, s], 1, false));
            params.push(Tensor::zeros(&[1]));
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a network from stored tensors, checking their shapes.
    pub fn from_params(config: NetworkConfig, params: Vec<Tensor>) -> Result<Self, NnError> {
        let template = Self::new(config.clone(), 0)?;
        if template.params.len() != params.len()
            || template
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NnError::ShapeMismatch(
                "parameter tensors do not match the network configuration".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Parameter names in storage order.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.config.trunk.len() {
            names.push(format!("trunk.{i}.weight"));
            names.push(format!("trunk.{i}.bias"));
        }
        for i in 0..self.config.hidden.len() {
            names.push(format!("head.{i}.weight"));
            names.push(format!("head.{i}.bias"));
        }
        names.push("head.out.weight".into());
        names.push("head.out.bias".into());
        if self.config.aux {
            for n in [
                "collapse.weight",
                "collapse.bias",
                "upsample.weight",
                "upsample.bias",
            ] {
                names.push(format!("aux.{n}"));
            }
        }
        names
    }

    /// Index of the first depth-branch tensor; everything before it is shared
    /// with a network without the branch.
    pub fn aux_param_start(&self) -> usize {
        2 * (self.config.trunk.len() + self.config.hidden.len() + 1)
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect()
    }

    fn check_image(&self, image: &[f64]) -> Result<(), NnError> {
        let want = self.config.input_width * self.config.input_height;
        if image.len() != want {
            return Err(NnError::ShapeMismatch(format!(
                "image has {} pixels, network expects {}x{}",
                image.len(),
                self.config.input_width,
                self.config.input_height
            )));
        }
        Ok(())
    }

    /// Logits and, if the branch exists, the full-resolution depth prediction.
    pub fn forward(&self, image: &[f64]) -> Result<ForwardOutput, NnError> {
        self.check_image(image)?;
        let (logits, cache) = self.forward_cached(image, self.config.aux);
        let depth = cache.aux.as_ref().map(|a| self.upsample(&a.collapsed));
        Ok(ForwardOutput { logits, depth })
    }

    pub fn predict(&self, image: &[f64]) -> Result<usize, NnError> {
        self.check_image(image)?;
        Ok(argmax(&self.forward_cached(image, false).0))
    }

    fn forward_cached(&self, image: &[f64], with_aux: bool) -> (Vec<f64>, Cache) {
        let mut x = image.to_vec();
        let (mut h, mut w, mut cin) = (self.config.input_height, self.config.input_width, 1);
        let mut blocks = Vec::with_capacity(self.config.trunk.len());
        for (i, b) in self.config.trunk.iter().enumerate() {
            let (weight, bias) = (&self.params[2 * i], &self.params[2 * i + 1]);
            let hw = h * w;
            let cout = b.out_channels;
            let mut col = vec![0.0; cin * 9 * hw];
            im2col(&x, cin, h, w, &mut col);
            let mut act = vec![0.0; cout * hw];
            for (o, row) in act.chunks_mut(hw).enumerate() {
                row.fill(bias.data()[o]);
            }
            gemm(
                cout,
                cin * 9,
                hw,
                1.0,
                weight.data(),
                false,
                &col,
                false,
                1.0,
                &mut act,
            );
            for v in &mut act {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let (next, argmax, nh, nw) = if b.pool {
                let (p, idx) = max_pool(&act, cout, h, w);
                (p, idx, h / 2, w / 2)
            } else {
                (act.clone(), Vec::new(), h, w)
            };
            blocks.push(BlockCache {
                col,
                act,
                argmax,
                h,
                w,
                cin,
            });
            x = next;
            h = nh;
            w = nw;
            cin = cout;
        }
        let features = x;

        let mut dense = Vec::with_capacity(self.config.hidden.len() + 1);
        let mut v = features.clone();
        let base = 2 * self.config.trunk.len();
        let n_dense = self.config.hidden.len() + 1;
        for j in 0..n_dense {
            let (weight, bias) = (&self.params[base + 2 * j], &self.params[base + 2 * j + 1]);
            let out_dim = weight.shape()[0];
            let mut out = bias.data().to_vec();
            gemm(
                out_dim,
                v.len(),
                1,
                1.0,
                weight.data(),
                false,
                &v,
                false,
                1.0,
                &mut out,
            );
            if j + 1 < n_dense {
                for o in &mut out {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
            dense.push(DenseCache {
                input: v,
                output: out.clone(),
            });
            v = out;
        }
        let logits = v;

        let aux = (with_aux && self.config.aux).then(|| {
            let k = self.aux_param_start();
            let (c, fh, fw) = self.config.feature_shape();
            let mut collapsed = vec![self.params[k + 1].data()[0]; fh * fw];
            gemm(
                1,
                c,
                fh * fw,
                1.0,
                self.params[k].data(),
                false,
                &features,
                false,
                1.0,
                &mut collapsed,
            );
            AuxCache { collapsed }
        });

        (
            logits,
            Cache {
                blocks,
                dense,
                features,
                aux,
            },
        )
    }

    /// Transposed convolution with kernel size equal to its stride.
    fn upsample(&self, collapsed: &[f64]) -> Vec<f64> {
        let k = self.aux_param_start();
        let kernel = self.params[k + 2].data();
        let bias = self.params[k + 3].data()[0];
        let s = self.config.downsampling();
        let (w, h) = (self.config.input_width, self.config.input_height);
        let fw = w / s;
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] =
                    collapsed[(y / s) * fw + x / s] * kernel[(y % s) * s + x % s] + bias;
            }
        }
        out
    }

    /// Whether a sample's depth branch takes part in the loss.
    fn aux_active(&self, loss: &LossConfig, target: Option<&SparseDepthMap>) -> bool {
        self.config.aux && loss.lambda_aux > 0.0 && target.is_some_and(|t| t.valid_count() > 0)
    }

    /// Loss of one example, without gradients.
    pub fn sample_loss(&self, ex: &Example<'_>, loss: &LossConfig) -> Result<SampleLoss, NnError> {
        self.check_image(ex.image)?;
        let active = self.aux_active(loss, ex.target);
        let (logits, cache) = self.forward_cached(ex.image, active);
        let class_loss = cross_entropy(&logits, ex.label, None);
        let aux_loss = match (&cache.aux, ex.target) {
            (Some(a), Some(t)) if active => masked_huber(
                &self.upsample(&a.collapsed),
                t,
                loss.delta,
                loss.reduction,
                None,
            )?,
            _ => 0.0,
        };
        Ok(SampleLoss {
            class_loss,
            aux_loss,
            total: class_loss + loss.lambda_aux * aux_loss,
            correct: argmax(&logits) == ex.label,
        })
    }

    /// Adds the gradient of one example's loss to `grads`.
    pub fn accumulate_gradients(
        &self,
        ex: &Example<'_>,
        loss: &LossConfig,
        grads: &mut [Tensor],
    ) -> Result<SampleLoss, NnError> {
        self.check_image(ex.image)?;
        if ex.label >= NUM_CLASSES {
            return Err(NnError::InvalidConfig(format!(
                "label {} out of range",
                ex.label
            )));
        }
        let active = self.aux_active(loss, ex.target);
        let (logits, cache) = self.forward_cached(ex.image, active);
        let mut dlogits = vec![0.0; NUM_CLASSES];
        let class_loss = cross_entropy(&logits, ex.label, Some(&mut dlogits));
        let correct = argmax(&logits) == ex.label;

        // classifier head
        let base = 2 * self.config.trunk.len();
        let mut dv = dlogits;
        for j in (0..cache.dense.len()).rev() {
            let dc = &cache.dense[j];
            if j + 1 < cache.dense.len() {
                for (g, &o) in dv.iter_mut().zip(&dc.output) {
                    if o <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let weight = &self.params[base + 2 * j];
            let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
            gemm(
                out_dim,
                1,
                in_dim,
                1.0,
                &dv,
                false,
                &dc.input,
                false,
                1.0,
                grads[base + 2 * j].data_mut(),
            );
            for (g, d) in grads[base + 2 * j + 1].data_mut().iter_mut().zip(&dv) {
                *g += d;
            }
            let mut dx = vec![0.0; in_dim];
            gemm(
                in_dim,
                out_dim,
                1,
                1.0,
                weight.data(),
                true,
                &dv,
                false,
                0.0,
                &mut dx,
            );
            dv = dx;
        }
        let mut dfeat = dv;

        // depth branch
        let mut aux_loss = 0.0;
        if let (Some(a), Some(target)) = (&cache.aux, ex.target) {
            let pred = self.upsample(&a.collapsed);
            let mut dpred = vec![0.0; pred.len()];
            aux_loss = masked_huber(&pred, target, loss.delta, loss.reduction, Some(&mut dpred))?;
            for g in &mut dpred {
                *g *= loss.lambda_aux;
            }
            let k = self.aux_param_start();
            let s = self.config.downsampling();
            let (c, fh, fw) = self.config.feature_shape();
            let w = self.config.input_width;
            let kernel = self.params[k + 2].data().to_vec();
            let mut dcollapsed = vec![0.0; fh * fw];
            {
                let dkernel = grads[k + 2].data_mut();
                for (i, &g) in dpred.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let (y, x) = (i / w, i % w);
                    let cell = (y / s) * fw + x / s;
                    let kk = (y % s) * s + x % s;
                    dkernel[kk] += a.collapsed[cell] * g;
                    dcollapsed[cell] += kernel[kk] * g;
                }
            }
            grads[k + 3].data_mut()[0] += dpred.iter().sum::<f64>();
            gemm(
                1,
                fh * fw,
                c,
                1.0,
                &dcollapsed,
                false,
                &cache.features,
                true,
                1.0,
                grads[k].data_mut(),
            );
            grads[k + 1].data_mut()[0] += dcollapsed.iter().sum::<f64>();
            gemm(
                c,
                1,
                fh * fw,
                1.0,
                self.params[k].data(),
                true,
                &dcollapsed,
                false,
                1.0,
                &mut dfeat,
            );
        }

        // trunk
        for (i, (b, bc)) in self
            .config
            .trunk
            .iter()
            .zip(&cache.blocks)
            .enumerate()
            .rev()
        {
            let hw = bc.h * bc.w;
            let cout = b.out_channels;
            let mut dact = if b.pool {
                let mut d = vec![0.0; cout * hw];
                for (&idx, &g) in bc.argmax.iter().zip(&dfeat) {
                    d[idx as usize] += g;
                }
                d
            } else {
                dfeat
            };
            for (g, &a) in dact.iter_mut().zip(&bc.act) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            gemm(
                cout,
                hw,
                bc.cin * 9,
                1.0,
                &dact,
                false,
                &bc.col,
                true,
                1.0,
                grads[2 * i].data_mut(),
            );
            for (o, row) in dact.chunks(hw).enumerate() {
                grads[2 * i + 1].data_mut()[o] += row.iter().sum::<f64>();
            }
            if i == 0 {
                break;
            }
            let mut dcol = vec![0.0; bc.cin * 9 * hw];
            gemm(
                bc.cin * 9,
                cout,
                hw,
                1.0,
                self.params[2 * i].data(),
                true,
                &dact,
                false,
                0.0,
                &mut dcol,
            );
            let mut dx = vec![0.0; bc.cin * hw];
            col2im(&dcol, bc.cin, bc.h, bc.w, &mut dx);
            dfeat = dx;
        }

        Ok(SampleLoss {
            class_loss,
            aux_loss,
            total: class_loss + loss.lambda_aux * aux_loss,
            correct,
        })
    }

    /// Gradient of the batch-mean loss and the per-sample losses.
    pub fn backward(
        &self,
        batch: &[Example<'_>],
        loss: &LossConfig,
    ) -> Result<(Vec<Tensor>, Vec<SampleLoss>), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        let mut grads = self.zero_grads();
        let mut losses = Vec::with_capacity(batch.len());
        for ex in batch {
            losses.push(self.accumulate_gradients(ex, loss, &mut grads)?);
        }
        let inv = 1.0 / batch.len() as f64;
        for g in &mut grads {
            g.scale(inv);
        }
        Ok((grads, losses))
    }

    /// Mean total loss over a batch.
    pub fn batch_loss(&self, batch: &[Example<'_>], loss: &LossConfig) -> Result<f64, NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        let mut total = 0.0;
        for ex in batch {
            total += self.sample_loss(ex, loss)?.total;
        }
        Ok(total / batch.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax;

    pub(crate) fn toy_config() -> NetworkConfig {
        NetworkConfig {
            input_width: 8,
            input_height: 8,
            trunk: vec![
                ConvBlock {
                    out_channels: 3,
                    pool: true,
                },
                ConvBlock {
                    out_channels: 4,
                    pool: false,
                },
            ],
            hidden: vec![5],
            aux: true,
        }
    }

    fn toy_image(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..64).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn default_network_shapes() {
        let net = Network::new(NetworkConfig::default(), 1).unwrap();
        let out = net.forward(&vec![0.5; 64 * 64]).unwrap();
        assert_eq!(out.logits.len(), 6);
        assert_eq!(out.depth.as_ref().unwrap().len(), 64 * 64);
        assert_eq!(net.config().downsampling(), 8);
        assert_eq!(net.param_names().len(), net.params().len());
        assert!(matches!(
            net.forward(&[0.0; 10]),
            Err(NnError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut net = Network::new(toy_config(), 3).unwrap();
        for p in net.params_mut() {
            p.fill(0.0);
        }
        let out = net.forward(&toy_image(1)).unwrap();
        assert_eq!(out.logits, vec![0.0; 6]);
        for p in softmax(&out.logits) {
            assert!((p - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let (c, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut col = vec![0.0; c * 9 * h * w];
        im2col(&x, c, h, w, &mut col);
        let mut back = vec![0.0; c * h * w];
        col2im(&y, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn aux_init_does_not_disturb_shared_params() {
        let with = Network::new(toy_config(), 9).unwrap();
        let without = Network::new(toy_config().without_aux(), 9).unwrap();
        assert_eq!(&with.params()[..with.aux_param_start()], without.params());
    }

    #[test]
    fn zero_lambda_leaves_aux_grads_zero() {
        let net = Network::new(toy_config(), 5).unwrap();
        let mut target = SparseDepthMap::empty(8, 8);
        target.splat(2, 3, 0.8);
        let img = toy_image(2);
        let ex = Example {
            image: &img,
            label: 1,
            target: Some(&target),
        };
        let loss = LossConfig {
            lambda_aux: 0.0,
            ..Default::default()
        };
        let (g, _) = net.backward(&[ex], &loss).unwrap();
        for t in &g[net.aux_param_start()..] {
            assert_eq!(t.max_abs(), 0.0);
        }
        let (g, _) = net.backward(&[ex], &LossConfig::default()).unwrap();
        assert!(g[net.aux_param_start()..].iter().any(|t| t.max_abs() > 0.0));
    }

    #[test]
    fn duplicated_sample_has_single_sample_gradient() {
        let net = Network::new(toy_config(), 5).unwrap();
        let mut target = SparseDepthMap::empty(8, 8);
        target.splat(4, 4, 1.3);
        let img = toy_image(3);
        let ex = Example {
            image: &img,
            label: 4,
            target: Some(&target),
        };
        let (one, _) = net.backward(&[ex], &LossConfig::default()).unwrap();
        let (two, _) = net.backward(&[ex, ex], &LossConfig::default()).unwrap();
        for (a, b) in one.iter().zip(&two) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn invalid_pixels_do_not_affect_gradients() {
        let mut net = Network::new(toy_config(), 11).unwrap();
        let mut target = SparseDepthMap::empty(8, 8);
        target.splat(0, 0, 0.5);
        target.splat(7, 2, 0.9);
        let img = toy_image(4);
        let ex = Example {
            image: &img,
            label: 0,
            target: Some(&target),
        };
        let (g1, l1) = net.backward(&[ex], &LossConfig::default()).unwrap();
        // changing the upsampling kernel at a position whose pixels are all
        // invalid changes predictions there only
        let k = net.aux_param_start() + 2;
        net.params_mut()[k].data_mut()[3] += 10.0; // kernel cell (0, 3) -> pixels x % 2 == 1, y % 2 == 1
        let (g2, l2) = net.backward(&[ex], &LossConfig::default()).unwrap();
        assert_eq!(l1[0].total.to_bits(), l2[0].total.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a, b);
        }
    }
}
