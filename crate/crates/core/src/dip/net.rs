//! The encoder–decoder `f_θ` and its hand-written backward pass.
//!
//! Level `i` of the encoder is a stride-2 3×3 convolution followed by a 3×3
//! convolution. The decoder mirrors it: nearest ×2 upsampling to the skip's
//! size, a 3×3 convolution, concatenation with the encoder feature of that
//! scale (the network input at the finest scale) and another 3×3 convolution.
//! Every convolution in the body is followed by an optional channel
//! normalization and LeakyReLU. A linear 1×1 head maps back to the band count.
//!
//! With an empty channel list the body disappears and the network is the head
//! alone.

use ndarray::{Array1, Array3, ArrayView3};

use super::layers::{
    concat, concat_backward, leaky_relu, leaky_relu_backward, upsample_nearest, upsample_nearest_backward, ChannelNorm,
    Conv2d, ConvCache, ConvGrad, NormCache,
};
use crate::degrade::stream_rng;
use crate::error::{invalid, mismatch, Result};
use crate::scalar::Real;

const STREAM_DIP_INIT: u64 = 21;

/// A convolution with its optional normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub conv: Conv2d<T>,
    pub norm: Option<ChannelNorm<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad<T> {
    pub conv: ConvGrad<T>,
    pub norm: Option<(Array1<T>, Array1<T>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DipNet<T> {
    bands: usize,
    channels: Vec<usize>,
    slope: T,
    /// `down_0, conv_0, …, down_{d-1}, conv_{d-1}, up_{d-1}, dec_{d-1}, …, up_0, dec_0, head`.
    blocks: Vec<Block<T>>,
}

/// Gradients in block order, same layout as [`DipNet::params_mut`].
pub type NetGrad<T> = Vec<BlockGrad<T>>;

struct BlockTape<T> {
    conv: ConvCache<T>,
    norm: Option<NormCache<T>>,
    /// Input of the activation.
    pre: Array3<T>,
}

/// Forward-pass record needed by [`DipNet::backward`].
pub struct Tape<T> {
    enc: Vec<(BlockTape<T>, BlockTape<T>)>,
    dec: Vec<(BlockTape<T>, BlockTape<T>)>,
    /// Spatial size of `e_1 … e_d`.
    enc_hw: Vec<(usize, usize)>,
    head: ConvCache<T>,
}

impl<T: Real> DipNet<T> {
    /// Seeded Gaussian(0, `init_std`²) weights, zero biases, identity norms.
    pub fn new(bands: usize, channels: &[usize], normalize: bool, init_std: f64, seed: u64) -> Result<Self> {
        if bands == 0 || channels.contains(&0) {
            return Err(invalid("network channel counts must be positive"));
        }
        if !(init_std.is_finite() && init_std >= 0.0) {
            return Err(invalid("init_std must be finite and non-negative"));
        }
        let mut rng = stream_rng(seed, STREAM_DIP_INIT);
        let d = channels.len();
        let in_of = |i: usize| if i == 0 { bands } else { channels[i - 1] };
        let mut block = |cin: usize, cout: usize, k: usize, stride: usize, norm: bool| Block {
            conv: Conv2d::gaussian(cin, cout, k, stride, init_std, &mut rng),
            norm: norm.then(|| ChannelNorm::identity(cout)),
        };
        let mut blocks = Vec::with_capacity(4 * d + 1);
        for i in 0..d {
            blocks.push(block(in_of(i), channels[i], 3, 2, normalize));
            blocks.push(block(channels[i], channels[i], 3, 1, normalize));
        }
        for i in (0..d).rev() {
            let below = if i + 1 == d { channels[d - 1] } else { channels[i + 1] };
            blocks.push(block(below, channels[i], 3, 1, normalize));
            blocks.push(block(channels[i] + in_of(i), channels[i], 3, 1, normalize));
        }
        let head_in = channels.first().copied().unwrap_or(bands);
        blocks.push(block(head_in, bands, 1, 1, false));
        Ok(Self { bands, channels: channels.to_vec(), slope: T::lit(0.1), blocks })
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn head_mut(&mut self) -> &mut Conv2d<T> {
        &mut self.blocks.last_mut().expect("head block").conv
    }

    pub fn param_count(&self) -> usize {
        self.param_sizes().iter().sum()
    }

    /// Parameter tensors as flat slices: weight, bias, then norm scale and
    /// shift when present, block by block.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(4 * self.blocks.len());
        for b in &mut self.blocks {
            out.push(b.conv.weight.as_slice_mut().expect("standard layout"));
            out.push(b.conv.bias.as_slice_mut().expect("standard layout"));
            if let Some(n) = &mut b.norm {
                out.push(n.gamma.as_slice_mut().expect("standard layout"));
                out.push(n.beta.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// Flat parameter sizes in [`Self::params_mut`] order.
    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend([b.conv.weight.len(), b.conv.bias.len()]);
            if let Some(n) = &b.norm {
                out.extend([n.gamma.len(), n.beta.len()]);
            }
        }
        out
    }

    fn enc_idx(i: usize) -> usize {
        2 * i
    }

    fn dec_idx(&self, i: usize) -> usize {
        let d = self.depth();
        2 * d + 2 * (d - 1 - i)
    }

    fn check_input(&self, z: ArrayView3<'_, T>) -> Result<()> {
        if z.dim().0 != self.bands {
            return Err(mismatch(format!("network expects {} bands, input has {}", self.bands, z.dim().0)));
        }
        if z.dim().1 == 0 || z.dim().2 == 0 {
            return Err(mismatch("empty spatial input"));
        }
        Ok(())
    }

    fn run_block(&self, idx: usize, x: ArrayView3<'_, T>) -> (Array3<T>, BlockTape<T>) {
        let b = &self.blocks[idx];
        let (y, conv) = b.conv.forward(x);
        let (pre, norm) = match &b.norm {
            Some(n) => {
                let (v, c) = n.forward(y.view());
                (v, Some(c))
            }
            None => (y, None),
        };
        (leaky_relu(&pre, self.slope), BlockTape { conv, norm, pre })
    }

    fn back_block(&self, idx: usize, t: &BlockTape<T>, dy: &Array3<T>) -> (Array3<T>, BlockGrad<T>) {
        let b = &self.blocks[idx];
        let mut d = leaky_relu_backward(&t.pre, dy, self.slope);
        let mut norm_grad = None;
        if let (Some(n), Some(c)) = (&b.norm, &t.norm) {
            let (dx, g) = n.backward(c, &d);
            d = dx;
            norm_grad = Some(g);
        }
        let (dx, conv) = b.conv.backward(&t.conv, d.view());
        (dx, BlockGrad { conv, norm: norm_grad })
    }

    pub fn forward(&self, z: ArrayView3<'_, T>) -> Result<Array3<T>> {
        Ok(self.forward_tape(z)?.0)
    }

    pub fn forward_tape(&self, z: ArrayView3<'_, T>) -> Result<(Array3<T>, Tape<T>)> {
        self.check_input(z)?;
        let d = self.depth();
        let mut feats: Vec<Array3<T>> = Vec::with_capacity(d);
        let mut enc = Vec::with_capacity(d);
        let mut enc_hw = Vec::with_capacity(d);
        for i in 0..d {
            let input = if i == 0 { z } else { feats[i - 1].view() };
            let (h, t1) = self.run_block(Self::enc_idx(i), input);
            let (e, t2) = self.run_block(Self::enc_idx(i) + 1, h.view());
            enc_hw.push((e.dim().1, e.dim().2));
            enc.push((t1, t2));
            feats.push(e);
        }
        let mut dec = Vec::with_capacity(d);
        let mut cur = feats.last().cloned();
        for i in (0..d).rev() {
            let skip = if i == 0 { z } else { feats[i - 1].view() };
            let below = cur.take().expect("decoder input");
            let up = upsample_nearest(below.view(), (skip.dim().1, skip.dim().2));
            let (h, t1) = self.run_block(self.dec_idx(i), up.view());
            let cat = concat(h.view(), skip);
            let (out, t2) = self.run_block(self.dec_idx(i) + 1, cat.view());
            dec.push((t1, t2));
            cur = Some(out);
        }
        let head = &self.blocks.last().expect("head block").conv;
        let (out, head_cache) = match &cur {
            Some(c) => head.forward(c.view()),
            None => head.forward(z),
        };
        Ok((out, Tape { enc, dec, enc_hw, head: head_cache }))
    }

    /// Parameter gradients of `⟨dout, f_θ(z)⟩` given the forward tape.
    pub fn backward(&self, tape: &Tape<T>, dout: ArrayView3<'_, T>) -> NetGrad<T> {
        let d = self.depth();
        let mut grads: Vec<Option<BlockGrad<T>>> = vec![None; self.blocks.len()];
        let head_idx = self.blocks.len() - 1;
        let (mut dcur, g) = self.blocks[head_idx].conv.backward(&tape.head, dout);
        grads[head_idx] = Some(BlockGrad { conv: g, norm: None });

        // Skip gradients for e_1 … e_{d-1}; index i holds d e_i.
        let mut dskip: Vec<Option<Array3<T>>> = vec![None; d];
        // Decoder tape was recorded from level d-1 down to 0.
        for i in 0..d {
            let (t_up, t_dec) = &tape.dec[d - 1 - i];
            let (dcat, g) = self.back_block(self.dec_idx(i) + 1, t_dec, &dcur);
            grads[self.dec_idx(i) + 1] = Some(g);
            let (dh, de) = concat_backward(dcat.view(), self.channels[i]);
            if i > 0 {
                dskip[i] = Some(de);
            }
            let (dup, g) = self.back_block(self.dec_idx(i), t_up, &dh);
            grads[self.dec_idx(i)] = Some(g);
            dcur = upsample_nearest_backward(dup.view(), tape.enc_hw[i]);
        }
        for i in (0..d).rev() {
            let (t1, t2) = &tape.enc[i];
            let (dh, g) = self.back_block(Self::enc_idx(i) + 1, t2, &dcur);
            grads[Self::enc_idx(i) + 1] = Some(g);
            let (dx, g) = self.back_block(Self::enc_idx(i), t1, &dh);
            grads[Self::enc_idx(i)] = Some(g);
            if i > 0 {
                dcur = dx;
                if let Some(s) = dskip[i].take() {
                    dcur += &s;
                }
            }
        }
        grads.into_iter().map(|g| g.expect("every block visited")).collect()
    }
}

/// Flat views of a gradient in [`DipNet::params_mut`] order.
pub fn grad_slices<T: Real>(grads: &NetGrad<T>) -> Vec<&[T]> {
    let mut out = Vec::with_capacity(4 * grads.len());
    for g in grads {
        out.push(g.conv.weight.as_slice().expect("standard layout"));
        out.push(g.conv.bias.as_slice().expect("standard layout"));
        if let Some((gamma, beta)) = &g.norm {
            out.push(gamma.as_slice().expect("standard layout"));
            out.push(beta.as_slice().expect("standard layout"));
        }
    }
    out
}
