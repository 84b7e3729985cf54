//! Deterministic synthetic speech-like corpus. "Speakers" are harmonic
//! sources (fundamental frequency + amplitude envelope), "transcripts" are
//! sequences over a 16-symbol vocabulary, and each token renders four latent
//! frames of additive harmonics whose dominant spectral band identifies the
//! token. A matched-filter oracle recovers transcripts from waveforms, so
//! end-to-end intelligibility is measurable without an external recognizer.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NdistError, Result};
use crate::rng::SeedRng;
use crate::wav;

pub const VOCAB_SIZE: usize = 16;
pub const FRAMES_PER_TOKEN: usize = 4;
const NUM_HARMONICS: usize = 20;
/// Dominant band of token k is [200 + 100k, 300 + 100k] Hz.
const BAND_BASE_HZ: f64 = 200.0;
const BAND_WIDTH_HZ: f64 = 100.0;
const BACKGROUND_GAIN: f64 = 0.08;
const TOKEN_RMS: f64 = 0.15;
const EDGE_FADE: usize = 32;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub num_speakers: usize,
    pub held_out_speakers: usize,
    pub num_utterances: usize,
    pub eval_utterances: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub sample_rate: u32,
    pub hop: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_speakers: 8,
            held_out_speakers: 2,
            num_utterances: 512,
            eval_utterances: 32,
            min_tokens: 4,
            max_tokens: 12,
            sample_rate: 4000,
            hop: 320,
        }
    }
}

impl CorpusConfig {
    pub fn samples_per_token(&self) -> usize {
        FRAMES_PER_TOKEN * self.hop
    }
}

/// A parametric voice: fundamental frequency, harmonic amplitude envelope
/// (nonnegative, unit L1), and a seed fixing the harmonic phases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpeaker {
    pub id: usize,
    pub f0: f64,
    pub envelope: Vec<f64>,
    pub seed: u64,
    pub held_out: bool,
}

impl SynthSpeaker {
    fn phases(&self) -> Vec<f64> {
        let mut rng = SeedRng::new(self.seed);
        (0..NUM_HARMONICS).map(|_| rng.uniform(0.0, 2.0 * PI)).collect()
    }
}

/// One corpus record: waveform plus everything needed to regenerate it.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub waveform: Vec<f32>,
    pub tokens: Vec<u8>,
    pub speaker_id: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    speaker_id: usize,
    transcript: Vec<u8>,
    seed: u64,
    wav: String,
}

/// Generate the speaker set for a config: training speakers first, then the
/// held-out ones. A pure function of the corpus seed.
pub fn generate_speakers(cfg: &CorpusConfig) -> Vec<SynthSpeaker> {
    let total = cfg.num_speakers + cfg.held_out_speakers;
    let mut rng = SeedRng::new(cfg.seed ^ 0x5045_414b);
    (0..total)
        .map(|id| {
            // keep f0 at or below the 100 Hz band width so every token band
            // contains at least one harmonic
            let f0 = 80.0 + 18.0 * (id as f64 / (total.max(2) - 1) as f64) + rng.uniform(-0.8, 0.8);
            // flat in expectation across harmonics: a decaying envelope makes
            // the high token bands so quiet that reconstruction never learns
            // them, while the oracle still has to tell them apart
            let mut envelope: Vec<f64> = (0..NUM_HARMONICS)
                .map(|_| rng.uniform(0.4, 1.0))
                .collect();
            let norm: f64 = envelope.iter().sum();
            for e in &mut envelope {
                *e /= norm;
            }
            SynthSpeaker {
                id,
                f0,
                envelope,
                seed: rng.next_u64(),
                held_out: id >= cfg.num_speakers,
            }
        })
        .collect()
}

fn token_band(token: u8) -> (f64, f64) {
    let lo = BAND_BASE_HZ + token as f64 * BAND_WIDTH_HZ;
    (lo, lo + BAND_WIDTH_HZ)
}

/// Render one clean token (no amplitude jitter) for a speaker.
fn render_token(token: u8, speaker: &SynthSpeaker, cfg: &CorpusConfig) -> Vec<f64> {
    let n = cfg.samples_per_token();
    let sr = cfg.sample_rate as f64;
    let phases = speaker.phases();
    let (lo, hi) = token_band(token);
    let mut out = vec![0.0f64; n];
    for h in 0..NUM_HARMONICS {
        let freq = (h + 1) as f64 * speaker.f0;
        if freq >= sr / 2.0 {
            break;
        }
        let gain = speaker.envelope[h] * if freq >= lo && freq < hi { 1.0 } else { BACKGROUND_GAIN };
        if gain == 0.0 {
            continue;
        }
        let w = 2.0 * PI * freq / sr;
        for (i, o) in out.iter_mut().enumerate() {
            *o += gain * (w * i as f64 + phases[h]).sin();
        }
    }
    // normalize to a fixed RMS so tokens are energy-comparable
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt().max(1e-12);
    let scale = TOKEN_RMS / rms;
    for o in &mut out {
        *o *= scale;
    }
    out
}

/// Deterministically synthesize an utterance from (transcript, speaker, seed).
pub fn synthesize_utterance(
    tokens: &[u8],
    speaker: &SynthSpeaker,
    seed: u64,
    cfg: &CorpusConfig,
) -> Result<Utterance> {
    let mut rng = SeedRng::new(seed);
    let n_tok = cfg.samples_per_token();
    let mut waveform = Vec::with_capacity(tokens.len() * n_tok);
    for &tok in tokens {
        if tok as usize >= VOCAB_SIZE {
            return Err(NdistError::invalid(
                "synthesize_utterance",
                format!("token {tok} outside vocabulary of {VOCAB_SIZE}"),
            ));
        }
        let mut samples = render_token(tok, speaker, cfg);
        // seeded per-frame amplitude jitter
        for f in 0..FRAMES_PER_TOKEN {
            let jitter = 1.0 + 0.15 * rng.uniform(-1.0, 1.0);
            for s in &mut samples[f * cfg.hop..(f + 1) * cfg.hop] {
                *s *= jitter;
            }
        }
        // raised-cosine edges against clicks at token boundaries
        for i in 0..EDGE_FADE {
            let g = 0.5 * (1.0 - (PI * (EDGE_FADE - i) as f64 / EDGE_FADE as f64).cos());
            samples[i] *= g;
            samples[n_tok - 1 - i] *= g;
        }
        waveform.extend(samples.iter().map(|&x| x as f32));
    }
    Ok(Utterance {
        id: String::new(),
        waveform,
        tokens: tokens.to_vec(),
        speaker_id: speaker.id,
        seed,
    })
}

/// Spectral matched filter: pooled magnitude-spectrum templates per
/// (speaker, token), compared by cosine. Phase-blind on purpose — codec
/// reconstructions keep magnitudes, not phases.
pub struct OracleDecoder {
    speakers: Vec<SynthSpeaker>,
    /// templates[speaker][token] — unit-L2 pooled magnitude spectra
    templates: Vec<Vec<Vec<f64>>>,
    window: usize,
    pool: usize,
}

/// Decode result: token sequence, per-token confidence (template cosine),
/// and the winning speaker hypothesis.
#[derive(Debug, Clone)]
pub struct OracleDecoding {
    pub tokens: Vec<u8>,
    pub confidences: Vec<f64>,
    pub speaker_hypothesis: usize,
}

impl OracleDecoder {
    pub fn new(speakers: &[SynthSpeaker], cfg: &CorpusConfig) -> Self {
        let window = cfg.samples_per_token();
        let pool = 8;
        let templates = speakers
            .iter()
            .map(|spk| {
                (0..VOCAB_SIZE as u8)
                    .map(|tok| {
                        let wave = render_token(tok, spk, cfg);
                        unit_l2(pooled_magnitude(&wave, pool))
                    })
                    .collect()
            })
            .collect();
        Self {
            speakers: speakers.to_vec(),
            templates,
            window,
            pool,
        }
    }

    /// Decode a waveform into tokens. A trailing partial window is zero-padded
    /// when `pad_partial` is set and rejected otherwise.
    pub fn decode(&self, waveform: &[f32], pad_partial: bool) -> Result<OracleDecoding> {
        if waveform.is_empty() {
            return Err(NdistError::invalid("oracle_decode", "empty waveform"));
        }
        if waveform.len() % self.window != 0 && !pad_partial {
            return Err(NdistError::invalid(
                "oracle_decode",
                format!(
                    "length {} not a multiple of token window {}",
                    waveform.len(),
                    self.window
                ),
            ));
        }
        let n_win = waveform.len().div_ceil(self.window);
        let mut feats = Vec::with_capacity(n_win);
        for w in 0..n_win {
            let start = w * self.window;
            let end = ((w + 1) * self.window).min(waveform.len());
            let mut buf: Vec<f64> = waveform[start..end].iter().map(|&x| x as f64).collect();
            buf.resize(self.window, 0.0);
            feats.push(unit_l2(pooled_magnitude(&buf, self.pool)));
        }
        // pick the speaker hypothesis whose best-token scores sum highest
        let mut best_spk = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (si, per_tok) in self.templates.iter().enumerate() {
            let score: f64 = feats
                .iter()
                .map(|f| {
                    per_tok
                        .iter()
                        .map(|t| cosine(f, t))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            if score > best_score {
                best_score = score;
                best_spk = si;
            }
        }
        let per_tok = &self.templates[best_spk];
        let mut tokens = Vec::with_capacity(n_win);
        let mut confidences = Vec::with_capacity(n_win);
        for f in feats {
            let (mut arg, mut best) = (0u8, f64::NEG_INFINITY);
            for (ti, t) in per_tok.iter().enumerate() {
                let c = cosine(&f, t);
                if c > best {
                    best = c;
                    arg = ti as u8;
                }
            }
            tokens.push(arg);
            confidences.push(best);
        }
        Ok(OracleDecoding {
            tokens,
            confidences,
            speaker_hypothesis: self.speakers[best_spk].id,
        })
    }
}

fn pooled_magnitude(wave: &[f64], pool: usize) -> Vec<f64> {
    use rustfft::{num_complex::Complex, FftPlanner};
    let n = wave.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = wave.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fft.process(&mut buf);
    let half = n / 2;
    let mags: Vec<f64> = buf[..half].iter().map(|c| c.norm()).collect();
    mags.chunks(pool).map(|c| c.iter().sum()).collect()
}

fn unit_l2(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}

/// A fully generated corpus: training utterances plus an eval split whose
/// transcripts never occur in training (same training speakers).
pub struct Corpus {
    pub cfg: CorpusConfig,
    pub speakers: Vec<SynthSpeaker>,
    pub train: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

impl Corpus {
    pub fn generate(cfg: &CorpusConfig) -> Result<Corpus> {
        let speakers = generate_speakers(cfg);
        let train_speakers: Vec<&SynthSpeaker> = speakers.iter().filter(|s| !s.held_out).collect();
        if train_speakers.is_empty() {
            return Err(NdistError::Config("corpus needs at least one training speaker".into()));
        }
        let mut rng = SeedRng::new(cfg.seed ^ 0x434f_5250);
        let mut seen = std::collections::HashSet::new();
        let mut make = |rng: &mut SeedRng, idx: usize, prefix: &str, fresh: bool| -> Result<Utterance> {
            loop {
                let len = cfg.min_tokens + rng.usize_below(cfg.max_tokens - cfg.min_tokens + 1);
                let tokens: Vec<u8> = (0..len).map(|_| rng.usize_below(VOCAB_SIZE) as u8).collect();
                if fresh && seen.contains(&tokens) {
                    continue;
                }
                let spk = train_speakers[rng.usize_below(train_speakers.len())];
                let seed = rng.next_u64();
                let mut utt = synthesize_utterance(&tokens, spk, seed, cfg)?;
                utt.id = format!("{prefix}{idx:04}");
                if !fresh {
                    seen.insert(tokens);
                }
                return Ok(utt);
            }
        };
        let mut train = Vec::with_capacity(cfg.num_utterances);
        for i in 0..cfg.num_utterances {
            train.push(make(&mut rng, i, "utt", false)?);
        }
        let mut eval = Vec::with_capacity(cfg.eval_utterances);
        for i in 0..cfg.eval_utterances {
            eval.push(make(&mut rng, i, "eval", true)?);
        }
        Ok(Corpus {
            cfg: cfg.clone(),
            speakers,
            train,
            eval,
        })
    }

    pub fn held_out_speakers(&self) -> Vec<&SynthSpeaker> {
        self.speakers.iter().filter(|s| s.held_out).collect()
    }

    pub fn speaker(&self, id: usize) -> Result<&SynthSpeaker> {
        self.speakers
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| NdistError::invalid("corpus", format!("unknown speaker {id}")))
    }

    /// Write WAVs plus a line-delimited manifest (and the speaker table).
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("wavs"))?;
        let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
        for (split, utts) in [("train", &self.train), ("eval", &self.eval)] {
            for utt in utts.iter() {
                let rel = format!("wavs/{}_{}.wav", split, utt.id);
                wav::write_wav(&dir.join(&rel), &utt.waveform, self.cfg.sample_rate)?;
                let row = ManifestRow {
                    id: utt.id.clone(),
                    speaker_id: utt.speaker_id,
                    transcript: utt.tokens.clone(),
                    seed: utt.seed,
                    wav: rel,
                };
                writeln!(manifest, "{}", serde_json::to_string(&row).map_err(|e| NdistError::Audio(e.to_string()))?)?;
            }
        }
        let speakers_json = serde_json::to_string_pretty(&self.speakers)
            .map_err(|e| NdistError::Audio(e.to_string()))?;
        std::fs::write(dir.join("speakers.json"), speakers_json)?;
        std::fs::write(
            dir.join("corpus.toml"),
            toml::to_string_pretty(&self.cfg).map_err(|e| NdistError::Config(e.to_string()))?,
        )?;
        Ok(())
    }

    /// Load a corpus previously written with [`Corpus::write`].
    pub fn load(dir: &Path) -> Result<Corpus> {
        let cfg: CorpusConfig = toml::from_str(&std::fs::read_to_string(dir.join("corpus.toml"))?)
            .map_err(|e| NdistError::Config(e.to_string()))?;
        let speakers: Vec<SynthSpeaker> =
            serde_json::from_str(&std::fs::read_to_string(dir.join("speakers.json"))?)
                .map_err(|e| NdistError::Config(e.to_string()))?;
        let mut train = Vec::new();
        let mut eval = Vec::new();
        let file = std::fs::File::open(dir.join("manifest.jsonl"))?;
        for line in std::io::BufReader::new(file).lines() {
            let row: ManifestRow = serde_json::from_str(&line?)
                .map_err(|e| NdistError::Config(e.to_string()))?;
            let (wave, _) = wav::read_wav(&dir.join(&row.wav))?;
            let utt = Utterance {
                id: row.id.clone(),
                waveform: wave,
                tokens: row.transcript,
                speaker_id: row.speaker_id,
                seed: row.seed,
            };
            if row.wav.contains("eval_") {
                eval.push(utt);
            } else {
                train.push(utt);
            }
        }
        Ok(Corpus {
            cfg,
            speakers,
            train,
            eval,
        })
    }
}
