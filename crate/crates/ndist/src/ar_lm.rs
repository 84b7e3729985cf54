//! Autoregressive language model over continuous latent frames. A causal
//! pre-LN transformer reads `[speaker][text tokens][latent frames]` and, at
//! every step, predicts the *distribution* of the next latent frame as a
//! diagonal Gaussian. Training minimizes per-frame KL to the codec's
//! posteriors plus a weighted end-frame term; generation samples frames until
//! the prediction collapses onto the end distribution N(1·𝟙, I).

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{NdistError, Result};
use crate::gaussians::{
    kl_divergence, kl_elementwise, DiagGaussian, DiagGaussianSeq, LOG_VAR_CEIL, LOG_VAR_FLOOR,
};
use crate::nn::{softmax_last, LayerNorm, Linear};
use crate::params::{Init, ParamStore};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_mult: usize,
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub speaker_dim: usize,
    pub max_seq_len: usize,
    /// Weight of the end-frame KL term in the loss.
    pub lambda_end: f64,
    /// Stop when mean per-channel KL(end ∥ prediction) falls below this.
    pub tau_end: f64,
    pub max_frames: usize,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            num_layers: 4,
            num_heads: 4,
            ff_mult: 4,
            vocab_size: 16,
            latent_dim: 16,
            speaker_dim: 16,
            max_seq_len: 128,
            lambda_end: 0.02,
            tau_end: 0.5,
            max_frames: 64,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.num_heads == 0 || self.dim % self.num_heads != 0 {
            return Err(NdistError::Config(format!(
                "lm dim {} must be a positive multiple of num_heads {}",
                self.dim, self.num_heads
            )));
        }
        if self.num_layers == 0 || self.ff_mult == 0 {
            return Err(NdistError::Config("lm num_layers and ff_mult must be > 0".into()));
        }
        if self.vocab_size == 0 || self.latent_dim == 0 || self.speaker_dim == 0 {
            return Err(NdistError::Config("lm vocab/latent/speaker dims must be > 0".into()));
        }
        if self.max_seq_len < 4 || self.max_frames == 0 {
            return Err(NdistError::Config("lm max_seq_len/max_frames too small".into()));
        }
        if self.lambda_end < 0.0 || self.tau_end <= 0.0 {
            return Err(NdistError::Config("lm lambda_end must be >= 0 and tau_end > 0".into()));
        }
        Ok(())
    }
}

/// The stop target N(1·𝟙, I).
pub fn end_distribution(dim: usize, dtype: DType, device: &candle_core::Device) -> Result<DiagGaussian> {
    DiagGaussian::constant(dim, 1.0, 1.0, dtype, device)
}

struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    num_heads: usize,
}

impl Attention {
    fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, l, d) = x.dims3()?;
        let hd = d / self.num_heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.num_heads, hd))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (hd as f64).sqrt())?;
        let scores = scores.broadcast_add(mask)?;
        let probs = softmax_last(&scores)?;
        let ctx = probs
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, l, d))?;
        self.o.forward(&ctx)
    }
}

struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

impl Block {
    fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let h = (x + self.attn.forward(&self.ln1.forward(x)?, mask)?)?;
        let f = self.ff1.forward(&self.ln2.forward(&h)?)?;
        // gelu (tanh form) from primitives with known gradients
        let f = gelu(&f)?;
        Ok((h + self.ff2.forward(&f)?)?)
    }
}

fn gelu(x: &Tensor) -> Result<Tensor> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let x3 = ((x * x)? * x)?;
    let inner = (x3.affine(0.044715, 0.0)? + x)?.affine(c, 0.0)?;
    let gate = inner.tanh()?.affine(0.5, 0.5)?;
    Ok((x * gate)?)
}

/// How a generation run terminated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    EndDetected,
    MaxFrames,
}

#[derive(Debug, Clone)]
pub struct GenerationResult {
    /// `[T, D]` sampled latent frames (the end step is not included).
    pub latents: Tensor,
    /// Mean per-channel KL(end ∥ prediction) at each step, including the
    /// step that triggered the stop.
    pub end_scores: Vec<f64>,
    pub stop: StopReason,
}

impl GenerationResult {
    pub fn num_frames(&self) -> usize {
        self.latents.dims()[0]
    }
}

pub struct ArLm {
    pub cfg: LmConfig,
    ps: ParamStore,
    tok_emb: candle_core::Var,
    pos_emb: candle_core::Var,
    spk_proj: Linear,
    lat_proj: Linear,
    blocks: Vec<Block>,
    final_ln: LayerNorm,
    head: Linear,
}

impl ArLm {
    pub fn new(ps: &ParamStore, cfg: &LmConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let tok_emb = ps.get_or_init("lm.tok_emb", (cfg.vocab_size, d), Init::Randn(0.02))?;
        let pos_emb = ps.get_or_init("lm.pos_emb", (cfg.max_seq_len, d), Init::Randn(0.02))?;
        let spk_proj = Linear::new(ps, "lm.spk_proj", cfg.speaker_dim, d, true)?;
        let lat_proj = Linear::new(ps, "lm.lat_proj", cfg.latent_dim, d, true)?;
        let mut blocks = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let p = format!("lm.block{i}");
            blocks.push(Block {
                ln1: LayerNorm::new(ps, &format!("{p}.ln1"), d)?,
                attn: Attention {
                    q: Linear::new(ps, &format!("{p}.q"), d, d, true)?,
                    k: Linear::new(ps, &format!("{p}.k"), d, d, true)?,
                    v: Linear::new(ps, &format!("{p}.v"), d, d, true)?,
                    o: Linear::new(ps, &format!("{p}.o"), d, d, true)?,
                    num_heads: cfg.num_heads,
                },
                ln2: LayerNorm::new(ps, &format!("{p}.ln2"), d)?,
                ff1: Linear::new(ps, &format!("{p}.ff1"), d, d * cfg.ff_mult, true)?,
                ff2: Linear::new(ps, &format!("{p}.ff2"), d * cfg.ff_mult, d, true)?,
            });
        }
        let final_ln = LayerNorm::new(ps, "lm.final_ln", d)?;
        let head = Linear::new(ps, "lm.head", d, 2 * cfg.latent_dim, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            ps: ps.clone(),
            tok_emb,
            pos_emb,
            spk_proj,
            lat_proj,
            blocks,
            final_ln,
            head,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    fn causal_mask(&self, l: usize, dtype: DType) -> Result<Tensor> {
        let mut data = vec![0.0f64; l * l];
        for i in 0..l {
            for j in i + 1..l {
                data[i * l + j] = -1e9;
            }
        }
        Ok(Tensor::from_vec(data, (1, 1, l, l), &self.ps.device())?.to_dtype(dtype)?)
    }

    fn embed_tokens(&self, tokens: &[Vec<u8>]) -> Result<Tensor> {
        let m = tokens[0].len();
        let mut ids = Vec::with_capacity(tokens.len() * m);
        for row in tokens {
            if row.len() != m {
                return Err(NdistError::invalid(
                    "lm_forward",
                    "all transcripts in a batch must share a length",
                ));
            }
            for &t in row {
                if t as usize >= self.cfg.vocab_size {
                    return Err(NdistError::invalid(
                        "lm_forward",
                        format!("token {t} outside vocabulary of {}", self.cfg.vocab_size),
                    ));
                }
                ids.push(t as u32);
            }
        }
        let idx = Tensor::from_vec(ids, tokens.len() * m, &self.ps.device())?;
        Ok(self
            .tok_emb
            .as_tensor()
            .index_select(&idx, 0)?
            .reshape((tokens.len(), m, self.cfg.dim))?)
    }

    /// Teacher-forced forward pass.
    ///
    /// `speaker: [B, S]`, `tokens: B × M`, `latents: [B, T, D]` (T may be 0).
    /// Returns `(means, log_vars)` of shape `[B, T+1, D]`: the prediction for
    /// frame t+1 is read at the position of frame t (the last text position
    /// for the first frame), so the final entry is the end-step prediction.
    pub fn lm_forward(
        &self,
        speaker: &Tensor,
        tokens: &[Vec<u8>],
        latents: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let (b, s) = speaker.dims2()?;
        if s != self.cfg.speaker_dim {
            return Err(NdistError::shape("lm_forward speaker", self.cfg.speaker_dim, s));
        }
        if tokens.len() != b || tokens.iter().any(|t| t.is_empty()) {
            return Err(NdistError::invalid(
                "lm_forward",
                "need one non-empty transcript per batch item",
            ));
        }
        let (bl, t, d) = latents.dims3()?;
        if bl != b || d != self.cfg.latent_dim {
            return Err(NdistError::shape(
                "lm_forward latents",
                format!("[{b}, T, {}]", self.cfg.latent_dim),
                format!("{:?}", latents.dims()),
            ));
        }
        let m = tokens[0].len();
        let l = 1 + m + t;
        if l > self.cfg.max_seq_len {
            return Err(NdistError::invalid(
                "lm_forward",
                format!("sequence of {l} exceeds max_seq_len {}", self.cfg.max_seq_len),
            ));
        }

        let spk = self.spk_proj.forward(speaker)?.unsqueeze(1)?;
        let txt = self.embed_tokens(tokens)?;
        let mut parts = vec![spk, txt];
        if t > 0 {
            parts.push(self.lat_proj.forward(latents)?);
        }
        let x = Tensor::cat(&parts, 1)?;
        let pos = self.pos_emb.as_tensor().narrow(0, 0, l)?.unsqueeze(0)?;
        let mut h = x.broadcast_add(&pos)?;
        let mask = self.causal_mask(l, h.dtype())?;
        for block in &self.blocks {
            h = block.forward(&h, &mask)?;
        }
        let h = self.final_ln.forward(&h)?;
        // positions m .. m+t produce the T+1 next-frame predictions
        let read = h.narrow(1, m, t + 1)?;
        let out = self.head.forward(&read)?;
        let dl = self.cfg.latent_dim;
        let means = out.narrow(2, 0, dl)?.contiguous()?;
        let log_vars = out
            .narrow(2, dl, dl)?
            .contiguous()?
            .clamp(LOG_VAR_FLOOR, LOG_VAR_CEIL)?;
        Ok((means, log_vars))
    }

    /// Training loss for one batch: mean over batch and frames of
    /// KL(target_t ∥ prediction_t), plus `lambda_end` times the mean KL from
    /// the end distribution to the end-step prediction. Targets should be
    /// detached codec posteriors of shape `[B, T, D]`.
    pub fn lm_loss(
        &self,
        pred_means: &Tensor,
        pred_log_vars: &Tensor,
        target_means: &Tensor,
        target_log_vars: &Tensor,
    ) -> Result<Tensor> {
        let (b, tp1, d) = pred_means.dims3()?;
        let (bt, t, dt) = target_means.dims3()?;
        if bt != b || dt != d || tp1 != t + 1 {
            return Err(NdistError::shape(
                "lm_loss",
                format!("preds [{b}, {}, {d}] for targets [{b}, {t}, {d}]", t + 1),
                format!("{:?} vs {:?}", pred_means.dims(), target_means.dims()),
            ));
        }
        let frame_pred_m = pred_means.narrow(1, 0, t)?;
        let frame_pred_lv = pred_log_vars.narrow(1, 0, t)?;
        let frame_kl = kl_elementwise(target_means, target_log_vars, &frame_pred_m, &frame_pred_lv)?
            .sum(2)?
            .mean_all()?;

        let end_m = pred_means.narrow(1, t, 1)?.squeeze(1)?;
        let end_lv = pred_log_vars.narrow(1, t, 1)?.squeeze(1)?;
        let one = Tensor::ones((b, d), pred_means.dtype(), pred_means.device())?;
        let zero = Tensor::zeros((b, d), pred_means.dtype(), pred_means.device())?;
        let end_kl = kl_elementwise(&one, &zero, &end_m, &end_lv)?.sum(1)?.mean_all()?;
        Ok((frame_kl + end_kl * self.cfg.lambda_end)?)
    }

    /// Mean per-channel KL(end ∥ prediction) for a single predicted frame.
    pub fn end_score(&self, pred: &DiagGaussian) -> Result<f64> {
        let end = end_distribution(pred.dim(), pred.mean().dtype(), pred.mean().device())?;
        let kl: f64 = kl_divergence(&end, pred)?.to_dtype(DType::F64)?.to_vec0()?;
        Ok(kl / pred.dim() as f64)
    }

    /// Autoregressive sampling with the end-distribution stop rule.
    /// `speaker: [S]`. Frames are drawn by reparameterization from each
    /// predicted Gaussian; the sequence ends when the end score drops below
    /// `tau_end` or `max_frames` is reached.
    pub fn generate(
        &self,
        speaker: &Tensor,
        tokens: &[u8],
        max_frames: usize,
        rng: &mut SeedRng,
    ) -> Result<GenerationResult> {
        let d = self.cfg.latent_dim;
        let dtype = self.ps.dtype();
        let device = self.ps.device();
        let spk = speaker.reshape((1, self.cfg.speaker_dim))?;
        let toks = vec![tokens.to_vec()];
        let mut frames: Vec<Tensor> = Vec::new();
        let mut end_scores = Vec::new();
        let mut stop = StopReason::MaxFrames;
        loop {
            let t = frames.len();
            let latents = if t == 0 {
                Tensor::zeros((1, 0, d), dtype, &device)?
            } else {
                Tensor::stack(&frames, 0)?.unsqueeze(0)?
            };
            let (means, log_vars) = self.lm_forward(&spk, &toks, &latents)?;
            let pred = DiagGaussian::new(
                means.narrow(1, t, 1)?.reshape(d)?.detach(),
                log_vars.narrow(1, t, 1)?.reshape(d)?.detach(),
            )?;
            let score = self.end_score(&pred)?;
            end_scores.push(score);
            if score < self.cfg.tau_end {
                stop = StopReason::EndDetected;
                break;
            }
            if t >= max_frames {
                break;
            }
            frames.push(crate::gaussians::sample(&pred, rng)?);
        }
        let latents = if frames.is_empty() {
            Tensor::zeros((0, d), dtype, &device)?
        } else {
            Tensor::stack(&frames, 0)?
        };
        Ok(GenerationResult {
            latents,
            end_scores,
            stop,
        })
    }

    /// Predictions as a sequence for a single (unbatched) utterance.
    pub fn predict_seq(
        &self,
        speaker: &Tensor,
        tokens: &[u8],
        latents: &Tensor,
    ) -> Result<DiagGaussianSeq> {
        let (means, log_vars) = self.lm_forward(
            &speaker.reshape((1, self.cfg.speaker_dim))?,
            &[tokens.to_vec()],
            &latents.unsqueeze(0)?,
        )?;
        DiagGaussianSeq::new(means.squeeze(0)?, log_vars.squeeze(0)?)
    }
}

/// Text rate of the desk corpus (1280-sample tokens at 4 kHz), used to size
/// the prompt when estimating cost per second of audio.
pub const TEXT_TOKENS_PER_SECOND: f64 = 3.125;

/// Analytic inference cost in GFLOPs for `duration_s` seconds of audio at
/// the given latent frame rate. The rollout covers `frame_rate·duration`
/// frames plus the text/speaker prompt; no model is executed.
pub fn flops_estimate(cfg: &LmConfig, frame_rate: f64, duration_s: f64) -> f64 {
    let frames = (frame_rate * duration_s).round() as usize;
    let text_len = (duration_s * TEXT_TOKENS_PER_SECOND).ceil() as usize;
    flops_rollout(cfg, text_len, frames) / 1e9
}

/// FLOP count for the autoregressive rollout of `frames` latent-frame steps
/// with a `text_len`-token transcript ahead of them, assuming cached
/// keys/values (each step runs one new position whose attention spans the
/// prompt plus the frames so far). Matmul of shapes (m, k)·(k, n) counts as
/// 2·m·n·k.
pub fn flops_rollout(cfg: &LmConfig, text_len: usize, frames: usize) -> f64 {
    let d = cfg.dim as f64;
    let ff = (cfg.dim * cfg.ff_mult) as f64;
    let dl = cfg.latent_dim as f64;
    let layers = cfg.num_layers as f64;
    let prompt = 1 + text_len;
    let mut total = 0.0;
    for step in 1..=frames {
        let ctx = (prompt + step) as f64;
        // per step per layer: QKVO projections 8d², attention
        // scores + values 4·d·ctx, feed-forward 4·d·ff
        let per_pos = 8.0 * d * d + 4.0 * d * ctx + 4.0 * d * ff;
        total += layers * per_pos;
        // distribution head at the single read position
        total += 2.0 * d * (2.0 * dl);
    }
    total
}
