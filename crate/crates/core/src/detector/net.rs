//! Small fully convolutional network with 3x3 prediction heads.
//!
//! All convolutions are 3x3 with padding 1, lowered to GEMM through im2col.
//! Tensors are single images laid out channel-major (`[C, H, W]`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values predicted per anchor: 4 box offsets, background logit, text logit.
pub const VALUES_PER_ANCHOR: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub stride: usize,
}

/// Backbone layers and the layers that feed prediction heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: Vec<ConvSpec>,
    /// Backbone layer indices feeding the heads, in anchor-level order.
    pub head_taps: Vec<usize>,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.head_taps.is_empty() {
            return Err(Error::validation("backbone needs layers and head taps"));
        }
        if self
            .layers
            .iter()
            .any(|l| l.out_channels == 0 || !(l.stride == 1 || l.stride == 2))
        {
            return Err(Error::validation("conv layers need channels and stride 1 or 2"));
        }
        if self.head_taps.windows(2).any(|w| w[1] <= w[0])
            || *self.head_taps.last().unwrap() >= self.layers.len()
        {
            return Err(Error::validation("head taps must be increasing layer indices"));
        }
        Ok(())
    }

    /// Spatial side of every backbone layer output for a square input.
    pub fn layer_sizes(&self, input_size: usize) -> Vec<usize> {
        let mut side = input_size;
        self.layers
            .iter()
            .map(|l| {
                side = conv_out(side, l.stride);
                side
            })
            .collect()
    }

    /// Feature map side at each head for a square input.
    pub fn head_sizes(&self, input_size: usize) -> Vec<usize> {
        let sizes = self.layer_sizes(input_size);
        self.head_taps.iter().map(|&t| sizes[t]).collect()
    }
}

fn conv_out(side: usize, stride: usize) -> usize {
    (side + 2 - 3) / stride + 1
}

#[derive(Debug, Clone)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    relu: bool,
    w_off: usize,
    b_off: usize,
}

impl ConvLayer {
    fn k(&self) -> usize {
        self.in_ch * 9
    }
}

/// Network topology plus a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Network {
    backbone: BackboneConfig,
    anchors_per_cell: Vec<usize>,
    convs: Vec<ConvLayer>,
    pub(crate) params: Vec<f32>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Default)]
pub struct Activations {
    sides: Vec<usize>,
    /// Output of every conv (backbone then heads), post-activation.
    outputs: Vec<Vec<f32>>,
    cols: Vec<Vec<f32>>,
    input_side: usize,
}

impl Activations {
    /// Raw head output `[anchors_per_cell * 6, side, side]` of head `h`.
    pub fn head(&self, net: &Network, h: usize) -> (&[f32], usize) {
        let idx = net.backbone.layers.len() + h;
        (&self.outputs[idx], self.sides[idx])
    }
}

impl Network {
    pub fn new(backbone: BackboneConfig, anchors_per_cell: Vec<usize>, seed: u64) -> Result<Self> {
        backbone.validate()?;
        if anchors_per_cell.len() != backbone.head_taps.len() || anchors_per_cell.contains(&0) {
            return Err(Error::validation("one non-zero anchor count per head required"));
        }
        let mut convs = Vec::new();
        let mut offset = 0;
        let mut push = |in_ch: usize, out_ch: usize, stride: usize, relu: bool| {
            let w_off = offset;
            let b_off = w_off + out_ch * in_ch * 9;
            offset = b_off + out_ch;
            convs.push(ConvLayer {
                in_ch,
                out_ch,
                stride,
                relu,
                w_off,
                b_off,
            });
        };
        let mut ch = 1;
        for l in &backbone.layers {
            push(ch, l.out_channels, l.stride, true);
            ch = l.out_channels;
        }
        for (h, &tap) in backbone.head_taps.iter().enumerate() {
            let in_ch = backbone.layers[tap].out_channels;
            push(in_ch, anchors_per_cell[h] * VALUES_PER_ANCHOR, 1, false);
        }
        let mut net = Self {
            backbone,
            anchors_per_cell,
            convs,
            params: vec![0.0; offset],
        };
        net.init(seed);
        Ok(net)
    }

    /// He-normal weights for the backbone, small Gaussian for heads, zero bias.
    fn init(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_backbone = self.backbone.layers.len();
        for (i, c) in self.convs.iter().enumerate() {
            let std = if i < n_backbone {
                (2.0 / c.k() as f32).sqrt()
            } else {
                0.01
            };
            let normal = Normal::new(0.0f32, std).expect("valid std");
            for w in &mut self.params[c.w_off..c.b_off] {
                *w = normal.sample(&mut rng);
            }
        }
    }

    pub fn backbone(&self) -> &BackboneConfig {
        &self.backbone
    }

    pub fn anchors_per_cell(&self) -> &[usize] {
        &self.anchors_per_cell
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn set_params(&mut self, params: Vec<f32>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::validation(format!(
                "parameter count {} does not match network ({})",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Mask of parameters subject to weight decay (weights, not biases).
    pub(crate) fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.params.len()];
        for c in &self.convs {
            mask[c.w_off..c.b_off].fill(true);
        }
        mask
    }

    fn source_of(&self, idx: usize) -> Option<usize> {
        let n = self.backbone.layers.len();
        if idx < n {
            idx.checked_sub(1)
        } else {
            Some(self.backbone.head_taps[idx - n])
        }
    }

    /// Runs the network on a `side x side` single-channel image.
    pub fn forward(&self, input: &[f32], side: usize, acts: &mut Activations) {
        assert_eq!(input.len(), side * side, "input size mismatch");
        let n = self.convs.len();
        acts.input_side = side;
        acts.outputs.resize_with(n, Vec::new);
        acts.cols.resize_with(n, Vec::new);
        acts.sides.resize(n, 0);
        for idx in 0..n {
            let conv = &self.convs[idx];
            let (in_side, src): (usize, &[f32]) = match self.source_of(idx) {
                None => (side, input),
                Some(s) => (acts.sides[s], &acts.outputs[s]),
            };
            let out_side = conv_out(in_side, conv.stride);
            let p = out_side * out_side;
            let mut cols = std::mem::take(&mut acts.cols[idx]);
            im2col(src, conv.in_ch, in_side, conv.stride, out_side, &mut cols);
            let out = &mut acts.outputs[idx];
            out.clear();
            out.resize(conv.out_ch * p, 0.0);
            let w = &self.params[conv.w_off..conv.b_off];
            let b = &self.params[conv.b_off..conv.b_off + conv.out_ch];
            gemm(conv.out_ch, conv.k(), p, w, Layout::RowMajor, &cols, Layout::RowMajor, out, 0.0);
            for (o, row) in out.chunks_mut(p).enumerate() {
                let bias = b[o];
                if conv.relu {
                    row.iter_mut().for_each(|v| *v = (*v + bias).max(0.0));
                } else {
                    row.iter_mut().for_each(|v| *v += bias);
                }
            }
            acts.cols[idx] = cols;
            acts.sides[idx] = out_side;
        }
    }

    /// Accumulates parameter gradients into `grads` given loss gradients
    /// with respect to each head output (same layout as the head outputs).
    pub fn backward(&self, acts: &Activations, head_grads: &[Vec<f32>], grads: &mut [f32]) {
        let n = self.convs.len();
        let n_backbone = self.backbone.layers.len();
        let mut douts: Vec<Vec<f32>> = vec![Vec::new(); n];
        for (h, g) in head_grads.iter().enumerate() {
            douts[n_backbone + h] = g.clone();
        }
        let mut dcols = Vec::new();
        for idx in (0..n).rev() {
            let conv = &self.convs[idx];
            let mut dout = std::mem::take(&mut douts[idx]);
            if dout.is_empty() {
                continue;
            }
            let out_side = acts.sides[idx];
            let p = out_side * out_side;
            if conv.relu {
                for (d, &a) in dout.iter_mut().zip(&acts.outputs[idx]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let cols = &acts.cols[idx];
            {
                let (gw, gb) = grads[conv.w_off..conv.b_off + conv.out_ch].split_at_mut(conv.b_off - conv.w_off);
                gemm(conv.out_ch, p, conv.k(), &dout, Layout::RowMajor, cols, Layout::Transposed, gw, 1.0);
                for (o, row) in dout.chunks(p).enumerate() {
                    gb[o] += row.iter().sum::<f32>();
                }
            }
            let Some(src) = self.source_of(idx) else {
                continue;
            };
            let w = &self.params[conv.w_off..conv.b_off];
            dcols.clear();
            dcols.resize(conv.k() * p, 0.0);
            gemm(conv.k(), conv.out_ch, p, w, Layout::Transposed, &dout, Layout::RowMajor, &mut dcols, 0.0);
            let in_side = acts.sides[src];
            let dsrc = &mut douts[src];
            if dsrc.is_empty() {
                dsrc.resize(conv.in_ch * in_side * in_side, 0.0);
            }
            col2im(&dcols, conv.in_ch, in_side, conv.stride, out_side, dsrc);
        }
    }
}

#[derive(Clone, Copy)]
enum Layout {
    RowMajor,
    Transposed,
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, all row-major in
/// memory; `Transposed` means the buffer stores the transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], la: Layout, b: &[f32], lb: Layout, c: &mut [f32], beta: f32) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = match la {
        Layout::RowMajor => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::RowMajor => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: slice lengths checked above; strides describe in-bounds views.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(input: &[f32], channels: usize, side: usize, stride: usize, out_side: usize, cols: &mut Vec<f32>) {
    let p = out_side * out_side;
    cols.clear();
    cols.resize(channels * 9 * p, 0.0);
    for c in 0..channels {
        let plane = &input[c * side * side..(c + 1) * side * side];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 3 + ky) * 3 + kx) * p..][..p];
                for oy in 0..out_side {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * side..][..side];
                    let dst = &mut row[oy * out_side..][..out_side];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < side as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f32], channels: usize, side: usize, stride: usize, out_side: usize, out: &mut [f32]) {
    let p = out_side * out_side;
    for c in 0..channels {
        let plane = &mut out[c * side * side..(c + 1) * side * side];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 3 + ky) * 3 + kx) * p..][..p];
                for oy in 0..out_side {
                    let iy = (oy * stride + ky) as isize - 1;
                    if iy < 0 || iy >= side as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * side..][..side];
                    let src = &row[oy * out_side..][..out_side];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - 1;
                        if ix >= 0 && ix < side as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
