//! Diagonal-Gaussian primitives: closed-form KL divergence, reparameterized
//! sampling, and log-density. These are the currency every other module
//! trades in — the codec emits per-frame Gaussians, the language model
//! predicts them, and test-time training consumes them.

use candle_core::{DType, Device, Tensor};

use crate::error::{NdistError, Result};
use crate::rng::SeedRng;

/// ln(2π)
pub const LN_2PI: f64 = 1.8378770664093453;

/// Variance floor 1e-4, expressed on the log-variance scale.
pub const LOG_VAR_FLOOR: f64 = -9.210340371976182;
/// Variance ceiling ~100, used by encoder/LM heads.
pub const LOG_VAR_CEIL: f64 = 4.605170185988092;

/// A single diagonal Gaussian over `D` channels, parameterized by mean and
/// natural-log variance. The log-variance is clamped to the variance floor
/// at construction.
#[derive(Debug, Clone)]
pub struct DiagGaussian {
    mean: Tensor,
    log_var: Tensor,
}

impl DiagGaussian {
    pub fn new(mean: Tensor, log_var: Tensor) -> Result<Self> {
        if mean.dims() != log_var.dims() || mean.rank() != 1 {
            return Err(NdistError::shape(
                "DiagGaussian::new",
                format!("{:?} (rank 1)", mean.dims()),
                format!("{:?}", log_var.dims()),
            ));
        }
        let log_var = clamp_floor(&log_var)?;
        Ok(Self { mean, log_var })
    }

    pub fn standard(dim: usize, dtype: DType, device: &Device) -> Result<Self> {
        let mean = Tensor::zeros(dim, dtype, device)?;
        let log_var = Tensor::zeros(dim, dtype, device)?;
        Ok(Self { mean, log_var })
    }

    /// N(c·1, v·I), the shape used for the stop distribution.
    pub fn constant(dim: usize, mean: f64, var: f64, dtype: DType, device: &Device) -> Result<Self> {
        let m = Tensor::full(mean, dim, device)?.to_dtype(dtype)?;
        let lv = Tensor::full(var.ln(), dim, device)?.to_dtype(dtype)?;
        Self::new(m, lv)
    }

    pub fn dim(&self) -> usize {
        self.mean.dims()[0]
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn log_var(&self) -> &Tensor {
        &self.log_var
    }

    pub fn mean_vec(&self) -> Result<Vec<f64>> {
        Ok(self.mean.to_dtype(DType::F64)?.to_vec1()?)
    }

    pub fn var_vec(&self) -> Result<Vec<f64>> {
        Ok(self.log_var.exp()?.to_dtype(DType::F64)?.to_vec1()?)
    }
}

/// A length-`T` sequence of diagonal Gaussians over `D` channels.
#[derive(Debug, Clone)]
pub struct DiagGaussianSeq {
    means: Tensor,
    log_vars: Tensor,
}

impl DiagGaussianSeq {
    pub fn new(means: Tensor, log_vars: Tensor) -> Result<Self> {
        if means.dims() != log_vars.dims() || means.rank() != 2 {
            return Err(NdistError::shape(
                "DiagGaussianSeq::new",
                format!("{:?} (rank 2)", means.dims()),
                format!("{:?}", log_vars.dims()),
            ));
        }
        let log_vars = clamp_floor(&log_vars)?;
        Ok(Self { means, log_vars })
    }

    pub fn standard(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            means: Tensor::zeros((len, dim), dtype, device)?,
            log_vars: Tensor::zeros((len, dim), dtype, device)?,
        })
    }

    pub fn len(&self) -> usize {
        self.means.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.means.dims()[1]
    }

    pub fn means(&self) -> &Tensor {
        &self.means
    }

    pub fn log_vars(&self) -> &Tensor {
        &self.log_vars
    }

    pub fn frame(&self, t: usize) -> Result<DiagGaussian> {
        DiagGaussian::new(self.means.get(t)?, self.log_vars.get(t)?)
    }

    pub fn narrow(&self, start: usize, len: usize) -> Result<DiagGaussianSeq> {
        Ok(DiagGaussianSeq {
            means: self.means.narrow(0, start, len)?,
            log_vars: self.log_vars.narrow(0, start, len)?,
        })
    }

    /// Cut the sequence out of the autodiff graph (frozen training targets).
    pub fn detach(&self) -> DiagGaussianSeq {
        DiagGaussianSeq {
            means: self.means.detach(),
            log_vars: self.log_vars.detach(),
        }
    }
}

fn clamp_floor(log_var: &Tensor) -> Result<Tensor> {
    Ok(log_var.maximum(&Tensor::full(LOG_VAR_FLOOR, log_var.shape(), log_var.device())?.to_dtype(log_var.dtype())?)?)
}

/// Closed-form KL(p ∥ q) for diagonal Gaussians:
/// Σ_d [ ½(log v_q − log v_p) + (v_p + (μ_p − μ_q)²)/(2 v_q) − ½ ].
pub fn kl_divergence(p: &DiagGaussian, q: &DiagGaussian) -> Result<Tensor> {
    if p.dim() != q.dim() {
        return Err(NdistError::shape("kl_divergence", p.dim(), q.dim()));
    }
    Ok(kl_elementwise(p.mean(), p.log_var(), q.mean(), q.log_var())?.sum_all()?)
}

/// Per-frame KL between two sequences; returns a `[T]` tensor.
pub fn kl_divergence_seq(p: &DiagGaussianSeq, q: &DiagGaussianSeq) -> Result<Tensor> {
    if p.len() != q.len() || p.dim() != q.dim() {
        return Err(NdistError::shape(
            "kl_divergence_seq",
            format!("{}x{}", p.len(), p.dim()),
            format!("{}x{}", q.len(), q.dim()),
        ));
    }
    Ok(kl_elementwise(p.means(), p.log_vars(), q.means(), q.log_vars())?.sum(1)?)
}

/// Elementwise KL contributions for any matching shapes; callers reduce over
/// the channel axis themselves (used for batched [B, T, D] losses).
pub fn kl_elementwise(mp: &Tensor, lvp: &Tensor, mq: &Tensor, lvq: &Tensor) -> Result<Tensor> {
    let vp = lvp.exp()?;
    let vq = lvq.exp()?;
    let diff2 = (mp - mq)?.sqr()?;
    let log_term = (lvq - lvp)?.affine(0.5, -0.5)?;
    let quad = ((vp + diff2)? / vq.affine(2.0, 0.0)?)?;
    Ok((log_term + quad)?)
}

/// Reparameterized draw z = μ + σ ⊙ ε. Deterministic given the rng state;
/// gradients flow into μ and log-variance.
pub fn sample(d: &DiagGaussian, rng: &mut SeedRng) -> Result<Tensor> {
    let eps = rng.normal_tensor(d.dim(), d.mean().dtype(), d.mean().device())?;
    let std = d.log_var().affine(0.5, 0.0)?.exp()?;
    Ok((d.mean() + std * eps)?)
}

/// Reparameterized draw for a whole sequence; returns `[T, D]`.
pub fn sample_seq(seq: &DiagGaussianSeq, rng: &mut SeedRng) -> Result<Tensor> {
    let eps = rng.normal_tensor(seq.means().shape(), seq.means().dtype(), seq.means().device())?;
    let std = seq.log_vars().affine(0.5, 0.0)?.exp()?;
    Ok((seq.means() + std * eps)?)
}

/// Exact log-density of `x` under `d`.
pub fn log_prob(d: &DiagGaussian, x: &Tensor) -> Result<Tensor> {
    if x.dims() != d.mean().dims() {
        return Err(NdistError::shape("log_prob", format!("{:?}", d.mean().dims()), format!("{:?}", x.dims())));
    }
    Ok(log_prob_elementwise(d.mean(), d.log_var(), x)?.sum_all()?)
}

/// Per-frame log-density of `x: [T, D]` under a sequence; returns `[T]`.
pub fn log_prob_seq(seq: &DiagGaussianSeq, x: &Tensor) -> Result<Tensor> {
    if x.dims() != seq.means().dims() {
        return Err(NdistError::shape(
            "log_prob_seq",
            format!("{:?}", seq.means().dims()),
            format!("{:?}", x.dims()),
        ));
    }
    Ok(log_prob_elementwise(seq.means(), seq.log_vars(), x)?.sum(1)?)
}

fn log_prob_elementwise(mean: &Tensor, log_var: &Tensor, x: &Tensor) -> Result<Tensor> {
    let diff2 = (x - mean)?.sqr()?;
    let inv_var = log_var.affine(-1.0, 0.0)?.exp()?;
    let term = ((log_var + (diff2 * inv_var)?)? + LN_2PI)?;
    Ok(term.affine(-0.5, 0.0)?)
}
