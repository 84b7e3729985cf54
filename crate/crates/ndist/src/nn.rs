//! Small neural building blocks over the parameter store: linear and conv1d
//! layers, a zero-interleave upsampling conv (transposed-conv equivalent
//! with a differentiable path), activations, layer norm, and statistics
//! pooling.

use candle_core::Tensor;

use crate::error::Result;
use crate::params::{Init, ParamStore};

#[derive(Debug, Clone)]
pub struct Linear {
    w: candle_core::Var,
    b: Option<candle_core::Var>,
}

impl Linear {
    pub fn new(ps: &ParamStore, name: &str, in_dim: usize, out_dim: usize, bias: bool) -> Result<Self> {
        let w = ps.get_or_init(&format!("{name}.w"), (out_dim, in_dim), Init::FanIn(1.0))?;
        let b = if bias {
            Some(ps.get_or_init(&format!("{name}.b"), out_dim, Init::Zeros)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn new_with_gain(
        ps: &ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
    ) -> Result<Self> {
        let w = ps.get_or_init(&format!("{name}.w"), (out_dim, in_dim), Init::FanIn(gain))?;
        let b = Some(ps.get_or_init(&format!("{name}.b"), out_dim, Init::Zeros)?);
        Ok(Self { w, b })
    }

    /// Same shape contract, but weights and bias start at zero so the layer
    /// is an exact identity contribution (used by flow conditioners).
    pub fn new_zeroed(ps: &ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let w = ps.get_or_init(&format!("{name}.w"), (out_dim, in_dim), Init::Zeros)?;
        let b = Some(ps.get_or_init(&format!("{name}.b"), out_dim, Init::Zeros)?);
        Ok(Self { w, b })
    }

    /// `x: [..., in] -> [..., out]`
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let wt = self.w.as_tensor().t()?;
        let y = if x.rank() == 1 {
            x.unsqueeze(0)?.matmul(&wt)?.squeeze(0)?
        } else {
            x.broadcast_matmul(&wt)?
        };
        match &self.b {
            Some(b) => Ok(y.broadcast_add(b.as_tensor())?),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    w: candle_core::Var,
    b: candle_core::Var,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl Conv1d {
    pub fn new(
        ps: &ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Self> {
        let w = ps.get_or_init(&format!("{name}.w"), (out_c, in_c, kernel), Init::FanIn(1.0))?;
        let b = ps.get_or_init(&format!("{name}.b"), out_c, Init::Zeros)?;
        Ok(Self {
            w,
            b,
            stride,
            padding,
            dilation,
        })
    }

    /// `x: [B, C_in, L] -> [B, C_out, L_out]`
    ///
    /// Runs each batch item separately: candle 0.8's conv1d backward feeds a
    /// transposed (non-contiguous) kernel back into conv1d, which the CPU
    /// backend mishandles, corrupting weight gradients whenever both the
    /// batch and the output channel count exceed one. Per-item convolutions
    /// keep every tensor in that path contiguous.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, _) = x.dims3()?;
        let y = if b == 1 {
            x.conv1d(self.w.as_tensor(), self.padding, self.stride, self.dilation, 1)?
        } else {
            let mut items = Vec::with_capacity(b);
            for i in 0..b {
                let xi = x.narrow(0, i, 1)?.contiguous()?;
                items.push(xi.conv1d(self.w.as_tensor(), self.padding, self.stride, self.dilation, 1)?);
            }
            Tensor::cat(&items, 0)?
        };
        Ok(y.broadcast_add(&self.b.as_tensor().reshape((1, (), 1))?)?)
    }
}

/// Stride-`s` learned upsampler: interleave `s-1` zeros after each sample,
/// then convolve with kernel `2s+1` at padding `s`, so `[B, C, L]` maps to
/// `[B, C_out, L*s]`. Functionally a transposed conv, but built from ops
/// with a backward pass.
#[derive(Debug, Clone)]
pub struct UpsampleConv1d {
    conv: Conv1d,
    stride: usize,
}

impl UpsampleConv1d {
    pub fn new(ps: &ParamStore, name: &str, in_c: usize, out_c: usize, stride: usize) -> Result<Self> {
        let kernel = 2 * stride + 1;
        let conv = Conv1d::new(ps, name, in_c, out_c, kernel, 1, stride, 1)?;
        Ok(Self { conv, stride })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let up = zero_interleave(x, self.stride)?;
        self.conv.forward(&up)
    }
}

/// `[B, C, L] -> [B, C, L*s]` with the original samples at positions `k*s`.
pub fn zero_interleave(x: &Tensor, s: usize) -> Result<Tensor> {
    if s == 1 {
        return Ok(x.clone());
    }
    let (b, c, l) = x.dims3()?;
    let xu = x.unsqueeze(3)?;
    let zeros = Tensor::zeros((b, c, l, s - 1), x.dtype(), x.device())?;
    let cat = Tensor::cat(&[&xu, &zeros], 3)?;
    Ok(cat.reshape((b, c, l * s))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(slope, 0.0)?)?)
}

/// snake(x) = x + sin^2(x)
pub fn snake(x: &Tensor) -> Result<Tensor> {
    Ok((x + x.sin()?.sqr()?)?)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    w: candle_core::Var,
    b: candle_core::Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &ParamStore, name: &str, dim: usize) -> Result<Self> {
        let w = ps.get_or_init(&format!("{name}.w"), dim, Init::Const(1.0))?;
        let b = ps.get_or_init(&format!("{name}.b"), dim, Init::Zeros)?;
        Ok(Self { w, b, eps: 1e-5 })
    }

    /// Normalizes over the last dimension.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.rank() - 1;
        let mean = x.mean_keepdim(d)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(d)?;
        let norm = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(norm
            .broadcast_mul(self.w.as_tensor())?
            .broadcast_add(self.b.as_tensor())?)
    }
}

/// Temporal statistics pooling: `[B, C, T] -> [B, 2C]` (mean ‖ std).
pub fn stats_pool(x: &Tensor) -> Result<Tensor> {
    let mean = x.mean(2)?;
    let centered = x.broadcast_sub(&mean.unsqueeze(2)?)?;
    let var = centered.sqr()?.mean(2)?;
    let std = (var + 1e-8)?.sqrt()?;
    Ok(Tensor::cat(&[&mean, &std], 1)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, x.rank() - 1)?)
}
