//! Speaker conditioning: a strided conv encoder with temporal statistics
//! pooling that maps a reference waveform to a posterior over a small
//! speaker latent. Training samples from the posterior under a KL penalty;
//! inference uses the posterior mean of a deterministic center crop.
//! Unseen speakers can also be drawn directly from the prior by seed.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{NdistError, Result};
use crate::gaussians::{DiagGaussian, LOG_VAR_CEIL, LOG_VAR_FLOOR};
use crate::nn::{leaky_relu, stats_pool, Conv1d, Linear};
use crate::params::ParamStore;
use crate::rng::SeedRng;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakerConfig {
    pub latent_dim: usize,
    pub channels: Vec<usize>,
    /// Length of the reference crop, in seconds.
    pub crop_seconds: f64,
    pub lambda_kl: f64,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            channels: vec![16, 32],
            crop_seconds: 3.0,
            lambda_kl: 0.02,
        }
    }
}

impl SpeakerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(NdistError::Config("speaker channels must be non-empty".into()));
        }
        if self.latent_dim == 0 {
            return Err(NdistError::Config("speaker latent_dim must be > 0".into()));
        }
        if self.crop_seconds <= 0.0 {
            return Err(NdistError::Config("speaker crop_seconds must be > 0".into()));
        }
        if self.lambda_kl < 0.0 {
            return Err(NdistError::Config("speaker lambda_kl must be >= 0".into()));
        }
        Ok(())
    }

    pub fn crop_samples(&self, sample_rate: u32) -> usize {
        (self.crop_seconds * sample_rate as f64).round() as usize
    }
}

/// How the reference crop is chosen.
pub enum Crop<'a> {
    /// Random offset, drawn from the given stream (training).
    Random(&'a mut SeedRng),
    /// Deterministic center crop (inference).
    Center,
}

/// A concrete speaker conditioning vector plus where it came from.
#[derive(Debug, Clone)]
pub struct SpeakerLatent {
    vector: Tensor,
    pub source: SpeakerSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpeakerSource {
    /// Posterior mean of an encoded reference.
    Encoded,
    /// Prior draw identified by seed.
    Prior { seed: u64 },
}

impl SpeakerLatent {
    pub fn vector(&self) -> &Tensor {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.dims()[0]
    }

    pub fn to_vec(&self) -> Result<Vec<f64>> {
        Ok(self.vector.to_dtype(DType::F64)?.to_vec1()?)
    }
}

/// A reproducible draw from the N(0, I) speaker prior.
pub fn random_speaker(
    seed: u64,
    dim: usize,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<SpeakerLatent> {
    let mut rng = SeedRng::new(seed ^ 0x5350_4b52); // domain-separate from other streams
    let vector = rng.normal_tensor(dim, dtype, device)?;
    Ok(SpeakerLatent {
        vector,
        source: SpeakerSource::Prior { seed },
    })
}

pub struct SpeakerEncoder {
    pub cfg: SpeakerConfig,
    ps: ParamStore,
    stem: Conv1d,
    downs: Vec<Conv1d>,
    proj: Linear,
}

impl SpeakerEncoder {
    pub fn new(ps: &ParamStore, cfg: &SpeakerConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = Conv1d::new(ps, "spk.stem", 1, cfg.channels[0], 7, 1, 3, 1)?;
        let mut downs = Vec::new();
        let mut in_c = cfg.channels[0];
        for (i, &c) in cfg.channels.iter().enumerate() {
            downs.push(Conv1d::new(ps, &format!("spk.down{i}"), in_c, c, 9, 4, 4, 1)?);
            in_c = c;
        }
        let proj = Linear::new(ps, "spk.proj", 2 * in_c, 2 * cfg.latent_dim, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            ps: ps.clone(),
            stem,
            downs,
            proj,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    /// Posterior parameters for a batch of crops `[B, 1, L]`:
    /// `([B, S], [B, S])`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut h = self.stem.forward(x)?;
        for down in &self.downs {
            h = down.forward(&leaky_relu(&h, 0.1)?)?;
        }
        let pooled = stats_pool(&h)?;
        let out = self.proj.forward(&pooled)?;
        let s = self.cfg.latent_dim;
        let means = out.narrow(1, 0, s)?;
        let log_vars = out.narrow(1, s, s)?.clamp(LOG_VAR_FLOOR, LOG_VAR_CEIL)?;
        Ok((means, log_vars))
    }

    /// Extract the reference crop: zero-padded when the waveform is shorter
    /// than the crop, random or center offset otherwise.
    pub fn crop(&self, waveform: &[f32], sample_rate: u32, mode: Crop) -> Vec<f32> {
        let len = self.cfg.crop_samples(sample_rate);
        if waveform.len() <= len {
            let mut out = waveform.to_vec();
            out.resize(len, 0.0);
            return out;
        }
        let max_off = waveform.len() - len;
        let off = match mode {
            Crop::Random(rng) => rng.usize_below(max_off + 1),
            Crop::Center => max_off / 2,
        };
        waveform[off..off + len].to_vec()
    }

    /// Posterior over the speaker latent for one reference waveform.
    pub fn encode_speaker(
        &self,
        waveform: &[f32],
        sample_rate: u32,
        mode: Crop,
    ) -> Result<DiagGaussian> {
        if waveform.is_empty() {
            return Err(NdistError::invalid("encode_speaker", "empty waveform"));
        }
        let crop = self.crop(waveform, sample_rate, mode);
        let data: Vec<f64> = crop.iter().map(|&x| x as f64).collect();
        let n = data.len();
        let x = Tensor::from_vec(data, (1, 1, n), &self.ps.device())?.to_dtype(self.ps.dtype())?;
        let (means, log_vars) = self.encode_batch(&x)?;
        DiagGaussian::new(means.squeeze(0)?, log_vars.squeeze(0)?)
    }

    /// Inference-time conditioning vector: posterior mean of the center crop.
    pub fn speaker_latent(&self, waveform: &[f32], sample_rate: u32) -> Result<SpeakerLatent> {
        let post = self.encode_speaker(waveform, sample_rate, Crop::Center)?;
        Ok(SpeakerLatent {
            vector: post.mean().detach(),
            source: SpeakerSource::Encoded,
        })
    }

    /// Mean KL from a batch posterior to the N(0, I) prior; the training
    /// penalty is `lambda_kl` times this.
    pub fn kl_penalty(&self, means: &Tensor, log_vars: &Tensor) -> Result<Tensor> {
        let (b, s) = means.dims2()?;
        if log_vars.dims() != means.dims() {
            return Err(NdistError::shape(
                "speaker kl_penalty",
                format!("{:?}", means.dims()),
                format!("{:?}", log_vars.dims()),
            ));
        }
        let vp = log_vars.exp()?;
        let diff2 = means.sqr()?;
        // KL(q ∥ N(0,I)) = Σ ½(v + μ² − 1 − log v)
        let kl = ((vp + diff2)?.affine(0.5, -0.5)? - log_vars.affine(0.5, 0.0)?)?;
        let _ = (b, s);
        Ok(kl.sum(1)?.mean_all()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::kl_divergence;
    use candle_core::Device;

    fn tiny_cfg() -> SpeakerConfig {
        SpeakerConfig {
            latent_dim: 4,
            channels: vec![4, 6],
            crop_seconds: 0.5,
            ..Default::default()
        }
    }

    fn build(seed: u64, dtype: DType) -> SpeakerEncoder {
        let ps = ParamStore::new(dtype, Device::Cpu, seed);
        SpeakerEncoder::new(&ps, &tiny_cfg()).unwrap()
    }

    fn wave(len: usize, seed: u64) -> Vec<f32> {
        let mut rng = SeedRng::new(seed);
        (0..len).map(|_| rng.standard_normal() as f32 * 0.3).collect()
    }

    #[test]
    fn default_latent_dim_matches_design() {
        assert_eq!(SpeakerConfig::default().latent_dim, 16);
        assert_eq!(SpeakerConfig::default().crop_samples(4000), 12_000);
    }

    #[test]
    fn center_crop_is_deterministic() {
        let enc = build(0, DType::F32);
        let w = wave(2000, 1);
        let a = enc.speaker_latent(&w, 1000).unwrap();
        let b = enc.speaker_latent(&w, 1000).unwrap();
        assert_eq!(a.to_vec().unwrap(), b.to_vec().unwrap());
        assert_eq!(a.source, SpeakerSource::Encoded);
        assert_eq!(a.dim(), 4);
    }

    #[test]
    fn center_crop_encodes_only_the_window() {
        let enc = build(0, DType::F32);
        let w = wave(2000, 2);
        // crop is 500 samples at 1 kHz; center offset is (2000-500)/2
        let manual = &w[750..1250];
        let full = enc.encode_speaker(&w, 1000, Crop::Center).unwrap();
        let cropped = enc.encode_speaker(manual, 1000, Crop::Center).unwrap();
        assert_eq!(full.mean_vec().unwrap(), cropped.mean_vec().unwrap());
    }

    #[test]
    fn random_crop_reproducible_by_stream_and_varies() {
        let enc = build(3, DType::F32);
        let w = wave(4000, 4);
        let a = enc
            .encode_speaker(&w, 1000, Crop::Random(&mut SeedRng::new(7)))
            .unwrap();
        let b = enc
            .encode_speaker(&w, 1000, Crop::Random(&mut SeedRng::new(7)))
            .unwrap();
        assert_eq!(a.mean_vec().unwrap(), b.mean_vec().unwrap());

        let mut rng = SeedRng::new(8);
        let crops: Vec<Vec<f32>> = (0..4).map(|_| enc.crop(&w, 1000, Crop::Random(&mut rng))).collect();
        assert!(crops.iter().any(|c| c != &crops[0]), "random crops never moved");
    }

    #[test]
    fn short_reference_is_padded() {
        let enc = build(5, DType::F32);
        let w = wave(100, 6);
        let post = enc.encode_speaker(&w, 1000, Crop::Center).unwrap();
        assert_eq!(post.dim(), 4);
        assert!(post.mean_vec().unwrap().iter().all(|v| v.is_finite()));
        assert!(enc.encode_speaker(&[], 1000, Crop::Center).is_err());
    }

    #[test]
    fn prior_draws_reproducible_and_distinct() {
        let a = random_speaker(11, 8, DType::F32, &Device::Cpu).unwrap();
        let b = random_speaker(11, 8, DType::F32, &Device::Cpu).unwrap();
        let c = random_speaker(12, 8, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(a.to_vec().unwrap(), b.to_vec().unwrap());
        assert_ne!(a.to_vec().unwrap(), c.to_vec().unwrap());
        assert_eq!(a.source, SpeakerSource::Prior { seed: 11 });
    }

    #[test]
    fn kl_penalty_zero_at_prior_and_matches_closed_form() {
        let enc = build(13, DType::F64);
        let zeros = Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap();
        let at_prior: f64 = enc.kl_penalty(&zeros, &zeros).unwrap().to_vec0().unwrap();
        assert_eq!(at_prior, 0.0);

        let mut rng = SeedRng::new(14);
        let means = rng.normal_tensor((1, 4), DType::F64, &Device::Cpu).unwrap();
        let lvs = rng
            .normal_tensor((1, 4), DType::F64, &Device::Cpu)
            .unwrap()
            .affine(0.3, 0.0)
            .unwrap();
        let got: f64 = enc.kl_penalty(&means, &lvs).unwrap().to_vec0().unwrap();
        let p = DiagGaussian::new(means.squeeze(0).unwrap(), lvs.squeeze(0).unwrap()).unwrap();
        let q = DiagGaussian::standard(4, DType::F64, &Device::Cpu).unwrap();
        let expect: f64 = kl_divergence(&p, &q).unwrap().to_vec0().unwrap();
        assert!((got - expect).abs() < 1e-12, "got {got} expect {expect}");
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        use crate::gradcheck::check_grads;
        let ps = ParamStore::new(DType::F64, Device::Cpu, 15);
        let enc = SpeakerEncoder::new(&ps, &tiny_cfg()).unwrap();
        let mut rng = SeedRng::new(16);
        let x = rng.normal_tensor((2, 1, 500), DType::F64, &Device::Cpu).unwrap();
        let vars = ps.vars_with_prefix("spk.");
        check_grads(
            &vars,
            || {
                let (means, lvs) = enc.encode_batch(&x)?;
                let kl = enc.kl_penalty(&means, &lvs)?;
                // add a mean-dependent term so both heads get exercised
                Ok((kl + means.sqr()?.mean_all()?)?)
            },
            2,
            1e-4,
            1e-4,
            &mut SeedRng::new(17),
        )
        .unwrap();
    }

    #[test]
    fn distinct_speakers_separate_in_latent_space() {
        use crate::corpus::{generate_speakers, synthesize_utterance, CorpusConfig};
        let cfg = CorpusConfig::default();
        let speakers = generate_speakers(&cfg);
        let enc = build(18, DType::F32);
        let tokens = [0u8, 5, 9];
        let wa = synthesize_utterance(&tokens, &speakers[0], 1, &cfg).unwrap().waveform;
        let wb = synthesize_utterance(&tokens, &speakers[7], 1, &cfg).unwrap().waveform;
        let la = enc.speaker_latent(&wa, cfg.sample_rate).unwrap().to_vec().unwrap();
        let lb = enc.speaker_latent(&wb, cfg.sample_rate).unwrap().to_vec().unwrap();
        let diff: f64 = la.iter().zip(&lb).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-6, "untrained encoder collapsed distinct speakers");
    }
}
