//! Test-time training: adapt the language model to a single reference
//! utterance. The reference is encoded once by the codec; N latent sequences
//! are drawn from that posterior by reparameterization, and the LM is
//! fine-tuned on them (teacher-forced, KL to the frozen posterior, end step
//! excluded) with the speaker encoder untouched. Adaptation operates on a
//! deep copy, so the original model is never modified.

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::ar_lm::ArLm;
use crate::error::{NdistError, Result};
use crate::flow_vae::FlowVae;
use crate::gaussians::{kl_elementwise, sample_seq, DiagGaussianSeq};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TttConfig {
    /// Number of reparameterized draws from the prompt posterior.
    pub n_draws: usize,
    pub lr: f64,
    /// Optimization steps taken on each draw before moving to the next.
    pub steps_per_draw: usize,
}

impl Default for TttConfig {
    fn default() -> Self {
        Self {
            n_draws: 32,
            lr: 1e-6,
            steps_per_draw: 1,
        }
    }
}

impl TttConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(NdistError::Config("ttt n_draws must be >= 1".into()));
        }
        if self.lr < 0.0 {
            return Err(NdistError::Config("ttt lr must be >= 0".into()));
        }
        Ok(())
    }
}

/// Frozen adaptation data for one reference utterance.
pub struct TttDataset {
    pub tokens: Vec<u8>,
    /// The codec posterior of the prompt, detached (targets never move).
    pub target: DiagGaussianSeq,
    /// N reparameterized `[T, D]` draws from `target`.
    pub draws: Vec<Tensor>,
}

impl TttDataset {
    pub fn num_frames(&self) -> usize {
        self.target.len()
    }
}

/// Encode the prompt once and draw `n` latent sequences from its posterior.
pub fn build_ttt_dataset(
    prompt: &[f32],
    tokens: &[u8],
    codec: &FlowVae,
    n: usize,
    rng: &mut SeedRng,
) -> Result<TttDataset> {
    if n == 0 {
        return Err(NdistError::invalid("build_ttt_dataset", "need at least one draw"));
    }
    if tokens.is_empty() {
        return Err(NdistError::invalid("build_ttt_dataset", "empty transcript"));
    }
    let posterior = codec.encode(prompt)?;
    let target = posterior.detach();
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        draws.push(sample_seq(&target, rng)?.detach());
    }
    Ok(TttDataset {
        tokens: tokens.to_vec(),
        target,
        draws,
    })
}

#[derive(Debug, Clone)]
pub struct TttReport {
    /// Loss after each optimization step, in draw order.
    pub losses: Vec<f64>,
    pub n_draws: usize,
    pub steps_per_draw: usize,
}

impl TttReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Per-draw adaptation loss: teacher-force the draw and take the mean over
/// frames of KL(target_t ∥ prediction_t). The end-step prediction (index T)
/// is structurally excluded.
pub fn ttt_loss(lm: &ArLm, speaker: &Tensor, dataset: &TttDataset, draw: &Tensor) -> Result<Tensor> {
    let t = dataset.target.len();
    let (dt, _) = draw.dims2()?;
    if dt != t {
        return Err(NdistError::shape("ttt_loss", t, dt));
    }
    let preds = lm.predict_seq(speaker, &dataset.tokens, draw)?;
    let frame_preds = preds.narrow(0, t)?;
    Ok(kl_elementwise(
        dataset.target.means(),
        dataset.target.log_vars(),
        frame_preds.means(),
        frame_preds.log_vars(),
    )?
    .sum(1)?
    .mean_all()?)
}

/// Fine-tune a copy of the model on the dataset: one optimizer pass per draw
/// (`steps_per_draw` steps each) over LM parameters only. Returns the
/// adapted model and the per-step loss trace; the input model is untouched.
pub fn ttt_adapt(
    model: &ArLm,
    speaker: &Tensor,
    dataset: &TttDataset,
    cfg: &TttConfig,
) -> Result<(ArLm, TttReport)> {
    cfg.validate()?;
    if dataset.draws.is_empty() || dataset.num_frames() == 0 {
        return Err(NdistError::invalid("ttt_adapt", "empty dataset"));
    }
    let adapted_ps = model.params().deep_clone()?;
    let adapted = ArLm::new(&adapted_ps, &model.cfg)?;
    let lm_vars: Vec<_> = adapted_ps
        .vars_with_prefix("lm.")
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    let mut opt = AdamW::new(
        lm_vars,
        ParamsAdamW {
            lr: cfg.lr,
            ..Default::default()
        },
    )?;
    let mut losses = Vec::new();
    let mut step = 0usize;
    for draw in dataset.draws.iter().take(cfg.n_draws) {
        for _ in 0..cfg.steps_per_draw {
            let loss = ttt_loss(&adapted, speaker, dataset, draw)?;
            let v: f64 = loss.to_dtype(candle_core::DType::F64)?.to_vec0()?;
            if !v.is_finite() {
                return Err(NdistError::NonFiniteLoss { term: "ttt", step });
            }
            opt.backward_step(&loss)?;
            losses.push(v);
            step += 1;
        }
    }
    Ok((
        adapted,
        TttReport {
            losses,
            n_draws: cfg.n_draws.min(dataset.draws.len()),
            steps_per_draw: cfg.steps_per_draw,
        },
    ))
}
