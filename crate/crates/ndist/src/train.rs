//! Two-stage training: codec first on random waveform crops, then the
//! autoregressive model (jointly with the speaker encoder) on frozen-codec
//! posterior targets. Also the inference path tying the three models
//! together, and checkpoint plumbing for the whole pipeline.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};

use crate::ar_lm::{ArLm, GenerationResult};
use crate::checkpoint::{fingerprint, Checkpoint, SpeakerRecord};
use crate::config::RunConfig;
use crate::corpus::{Corpus, Utterance};
use crate::error::{NdistError, Result};
use crate::flow_vae::{FlowVae, LossReport, VaeOptim};
use crate::params::ParamStore;
use crate::rng::SeedRng;
use crate::speaker::{random_speaker, Crop, SpeakerEncoder, SpeakerLatent, SpeakerSource};

/// Codec training: random fixed-length crops, `train.vae_steps` steps of
/// the codec objective. Returns the model and the per-step loss log.
pub fn train_vae(run: &RunConfig, corpus: &Corpus) -> Result<(FlowVae, Vec<LossReport>)> {
    run.validate()?;
    if corpus.train.is_empty() {
        return Err(NdistError::invalid("train_vae", "empty corpus"));
    }
    let ps = ParamStore::new(DType::F32, Device::Cpu, run.train.seed);
    let vae = FlowVae::new(&ps, &run.codec)?;
    let mut optim = VaeOptim::new(&vae, run.train.vae_lr)?;
    let mut rng = SeedRng::new(run.train.seed ^ 0x7641_4500);
    let hop = run.codec.hop();
    let crop_len = run.train.vae_crop_frames * hop;
    let mut log = Vec::with_capacity(run.train.vae_steps);
    for step in 0..run.train.vae_steps {
        let batch = sample_crop_batch(&corpus.train, run.train.batch_size, crop_len, hop, &mut rng)?;
        let report = vae.train_step(&batch, &mut optim, &mut rng, step)?;
        log.push(report);
    }
    Ok((vae, log))
}

fn sample_crop_batch(
    utts: &[Utterance],
    batch_size: usize,
    crop_len: usize,
    hop: usize,
    rng: &mut SeedRng,
) -> Result<Tensor> {
    let mut data = Vec::with_capacity(batch_size * crop_len);
    for _ in 0..batch_size {
        let u = &utts[rng.usize_below(utts.len())];
        if u.waveform.len() >= crop_len {
            // crops start on frame boundaries: encoding a full utterance only
            // ever sees hop-aligned frames, so train on the same distribution
            let off = hop * rng.usize_below((u.waveform.len() - crop_len) / hop + 1);
            data.extend(u.waveform[off..off + crop_len].iter().map(|&x| x as f64));
        } else {
            data.extend(u.waveform.iter().map(|&x| x as f64));
            data.extend(std::iter::repeat(0.0).take(crop_len - u.waveform.len()));
        }
    }
    Ok(Tensor::from_vec(data, (batch_size, 1, crop_len), &Device::Cpu)?.to_dtype(DType::F32)?)
}

/// Precomputed LM training item: transcript, frozen-codec posterior target,
/// and the reference waveform used for the speaker crop.
struct LmItem {
    tokens: Vec<u8>,
    target_means: Tensor,    // [T, D], detached
    target_log_vars: Tensor, // [T, D], detached
    frames: usize,
    utt_idx: usize,
}

/// Per-step scalar losses of the second stage.
#[derive(Debug, Clone, Copy)]
pub struct LmLossReport {
    pub lm: f64,
    pub speaker_kl: f64,
    pub total: f64,
}

/// Second stage: the codec is frozen; the AR model and speaker encoder are
/// optimized jointly on KL-to-target plus the speaker prior penalty.
/// Batches are bucketed by (transcript length, frame count).
pub fn train_lm(
    run: &RunConfig,
    corpus: &Corpus,
    codec: &FlowVae,
) -> Result<(ArLm, SpeakerEncoder, Vec<LmLossReport>)> {
    run.validate()?;
    if corpus.train.is_empty() {
        return Err(NdistError::invalid("train_lm", "empty corpus"));
    }
    if codec.cfg.latent_dim != run.lm.latent_dim {
        return Err(NdistError::invalid(
            "train_lm",
            format!(
                "codec latent_dim {} incompatible with lm latent_dim {}",
                codec.cfg.latent_dim, run.lm.latent_dim
            ),
        ));
    }
    let ps = ParamStore::new(DType::F32, Device::Cpu, run.train.seed ^ 0x4c4d_0000);
    let lm = ArLm::new(&ps, &run.lm)?;
    let spk = SpeakerEncoder::new(&ps, &run.speaker)?;

    // frozen-codec targets, computed once
    let mut items = Vec::with_capacity(corpus.train.len());
    for (i, u) in corpus.train.iter().enumerate() {
        let post = codec.encode(&u.waveform)?;
        items.push(LmItem {
            tokens: u.tokens.clone(),
            target_means: post.means().detach(),
            target_log_vars: post.log_vars().detach(),
            frames: post.len(),
            utt_idx: i,
        });
    }
    let mut buckets: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        buckets.entry((item.tokens.len(), item.frames)).or_default().push(i);
    }
    let bucket_list: Vec<&Vec<usize>> = buckets.values().collect();

    let vars: Vec<_> = ps
        .vars_with_prefix("lm.")
        .into_iter()
        .chain(ps.vars_with_prefix("spk."))
        .map(|(_, v)| v)
        .collect();
    let mut optim = AdamW::new(
        vars,
        ParamsAdamW {
            lr: run.train.lm_lr,
            ..Default::default()
        },
    )?;
    let mut rng = SeedRng::new(run.train.seed ^ 0x4c4d_5452);
    let sr = corpus.cfg.sample_rate;
    let mut log = Vec::with_capacity(run.train.lm_steps);
    for step in 0..run.train.lm_steps {
        // weight bucket choice by membership so every item is equally likely
        let pick = rng.usize_below(items.len());
        let bucket = bucket_list
            .iter()
            .scan(0usize, |acc, b| {
                *acc += b.len();
                Some((*acc, *b))
            })
            .find(|(acc, _)| pick < *acc)
            .map(|(_, b)| b)
            .unwrap();
        let batch: Vec<usize> = (0..run.train.batch_size.min(bucket.len()))
            .map(|_| bucket[rng.usize_below(bucket.len())])
            .collect();

        let tokens: Vec<Vec<u8>> = batch.iter().map(|&i| items[i].tokens.clone()).collect();
        let tgt_m = Tensor::stack(
            &batch.iter().map(|&i| items[i].target_means.clone()).collect::<Vec<_>>(),
            0,
        )?;
        let tgt_lv = Tensor::stack(
            &batch.iter().map(|&i| items[i].target_log_vars.clone()).collect::<Vec<_>>(),
            0,
        )?;

        // reparameterized speaker draw from a random crop of the same audio
        let crops: Vec<Vec<f32>> = batch
            .iter()
            .map(|&i| {
                spk.crop(&corpus.train[items[i].utt_idx].waveform, sr, Crop::Random(&mut rng))
            })
            .collect();
        let crop_len = crops[0].len();
        let flat: Vec<f64> = crops.iter().flatten().map(|&x| x as f64).collect();
        let crop_batch = Tensor::from_vec(flat, (batch.len(), 1, crop_len), &Device::Cpu)?
            .to_dtype(DType::F32)?;
        let (spk_m, spk_lv) = spk.encode_batch(&crop_batch)?;
        let eps = rng.normal_tensor(spk_m.dims(), DType::F32, &Device::Cpu)?;
        let spk_z = (&spk_m + (spk_lv.affine(0.5, 0.0)?.exp()? * eps)?)?;

        // prefix latents are reparameterized draws from the target posterior,
        // fresh noise each step, so generation tolerates its own sampling
        let eps_z = rng.normal_tensor(tgt_m.dims(), DType::F32, &Device::Cpu)?;
        let prefix = (&tgt_m + (tgt_lv.affine(0.5, 0.0)?.exp()? * eps_z)?)?;

        let (pred_m, pred_lv) = lm.lm_forward(&spk_z, &tokens, &prefix)?;
        let lm_term = lm.lm_loss(&pred_m, &pred_lv, &tgt_m, &tgt_lv)?;
        let kl_term = spk.kl_penalty(&spk_m, &spk_lv)?;
        let total = (&lm_term + (&kl_term * run.speaker.lambda_kl)?)?;

        let report = LmLossReport {
            lm: scalar(&lm_term)?,
            speaker_kl: scalar(&kl_term)?,
            total: scalar(&total)?,
        };
        if !report.total.is_finite() {
            return Err(NdistError::NonFiniteLoss { term: "lm_total", step });
        }
        optim.backward_step(&total)?;
        log.push(report);
    }
    Ok((lm, spk, log))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_vec0()?)
}

/// How the synthesis voice is specified.
pub enum SpeakerSpec<'a> {
    /// Encode a reference waveform.
    Reference(&'a [f32]),
    /// Draw from the prior with a stored seed.
    Seed(u64),
}

pub struct SynthOutput {
    pub waveform: Vec<f32>,
    pub generation: GenerationResult,
    pub speaker: SpeakerRecord,
}

/// Text → waveform: resolve the speaker vector, roll out latent frames,
/// and decode them through the codec.
pub fn synthesize(
    lm: &ArLm,
    codec: &FlowVae,
    spk_enc: &SpeakerEncoder,
    spec: SpeakerSpec,
    tokens: &[u8],
    sample_rate: u32,
    seed: u64,
) -> Result<SynthOutput> {
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= lm.cfg.vocab_size) {
        return Err(NdistError::invalid(
            "synthesize",
            format!("token {bad} outside vocab of {}", lm.cfg.vocab_size),
        ));
    }
    let latent: SpeakerLatent = match spec {
        SpeakerSpec::Reference(w) => spk_enc.speaker_latent(w, sample_rate)?,
        SpeakerSpec::Seed(s) => random_speaker(s, lm.cfg.speaker_dim, DType::F32, &Device::Cpu)?,
    };
    let record = match latent.source {
        SpeakerSource::Prior { seed } => SpeakerRecord::from_prior(seed, latent.to_vec()?),
        SpeakerSource::Encoded => SpeakerRecord::from_reference(latent.to_vec()?),
    };
    let mut rng = SeedRng::new(seed ^ 0x5359_4e54);
    let generation = lm.generate(latent.vector(), tokens, lm.cfg.max_frames, &mut rng)?;
    let waveform = if generation.num_frames() == 0 {
        Vec::new()
    } else {
        codec.decode(&generation.latents)?
    };
    Ok(SynthOutput {
        waveform,
        generation,
        speaker: record,
    })
}

/// The three trained models plus the config that produced them.
pub struct Pipeline {
    pub run: RunConfig,
    pub codec: FlowVae,
    pub lm: ArLm,
    pub speaker: SpeakerEncoder,
}

impl Pipeline {
    /// Full two-stage recipe.
    pub fn train(run: &RunConfig, corpus: &Corpus) -> Result<(Pipeline, Vec<LossReport>, Vec<LmLossReport>)> {
        let (codec, vae_log) = train_vae(run, corpus)?;
        let (lm, speaker, lm_log) = train_lm(run, corpus, &codec)?;
        Ok((
            Pipeline {
                run: run.clone(),
                codec,
                lm,
                speaker,
            },
            vae_log,
            lm_log,
        ))
    }

    pub fn save_codec(&self, path: &Path) -> Result<()> {
        let fp = fingerprint(&self.run.codec)?;
        let json = serde_json::to_string(&self.run.codec)
            .map_err(|e| NdistError::invalid("save_codec", e.to_string()))?;
        Checkpoint::from_store(self.codec.params(), "codec", &fp, &json)?
            .with_meta("run_hash", self.run.hash()?)
            .save(path)
    }

    pub fn save_lm(&self, path: &Path) -> Result<()> {
        // the speaker encoder shares the LM store, so one container holds both
        let fp = fingerprint(&(&self.run.lm, &self.run.speaker))?;
        let json = serde_json::to_string(&(&self.run.lm, &self.run.speaker))
            .map_err(|e| NdistError::invalid("save_lm", e.to_string()))?;
        Checkpoint::from_store(self.lm.params(), "lm", &fp, &json)?
            .with_meta("run_hash", self.run.hash()?)
            .with_meta("codec_fingerprint", fingerprint(&self.run.codec)?)
            .save(path)
    }

    /// Rebuild from checkpoints, rejecting any config mismatch.
    pub fn load(run: &RunConfig, codec_path: &Path, lm_path: &Path) -> Result<Pipeline> {
        run.validate()?;
        let device = Device::Cpu;
        let codec_ckpt = Checkpoint::load(codec_path, &device)?;
        codec_ckpt.check_fingerprint(&fingerprint(&run.codec)?)?;
        let lm_ckpt = Checkpoint::load(lm_path, &device)?;
        lm_ckpt.check_fingerprint(&fingerprint(&(&run.lm, &run.speaker))?)?;
        if let Some(cfp) = lm_ckpt.meta.get("codec_fingerprint") {
            if cfp != &codec_ckpt.config_fingerprint {
                return Err(NdistError::invalid(
                    "Pipeline load",
                    "LM checkpoint was trained against a different codec",
                ));
            }
        }

        let codec_ps = ParamStore::new(DType::F32, device.clone(), 0);
        let codec = FlowVae::new(&codec_ps, &run.codec)?;
        codec_ckpt.load_into(&codec_ps)?;
        let lm_ps = ParamStore::new(DType::F32, device, 0);
        let lm = ArLm::new(&lm_ps, &run.lm)?;
        let speaker = SpeakerEncoder::new(&lm_ps, &run.speaker)?;
        lm_ckpt.load_into(&lm_ps)?;
        Ok(Pipeline {
            run: run.clone(),
            codec,
            lm,
            speaker,
        })
    }
}

/// Loss curves as plain text, one step per line.
pub fn write_loss_log(path: &Path, values: &[f64]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(f, "{i}\t{v}")?;
    }
    Ok(())
}
