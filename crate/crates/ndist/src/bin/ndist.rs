//! Command-line front end: corpus generation, two-stage training,
//! synthesis, test-time adaptation, evaluation, and FLOPs reporting.
//!
//! Exit codes: 0 success, 2 config/usage error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ndist::ar_lm::flops_estimate;
use ndist::checkpoint::{fingerprint_bytes, Checkpoint, SpeakerRecord};
use ndist::config::RunConfig;
use ndist::corpus::{Corpus, OracleDecoder};
use ndist::error::NdistError;
use ndist::evalsuite::{
    latent_stats, log_spectral_distance, si_snr, speaker_similarity, token_error_rate,
    write_latent_stats, write_reports_jsonl, write_reports_tsv, EvalReport, SweepRow,
};
use ndist::rng::SeedRng;
use ndist::train::{synthesize, Pipeline, SpeakerSpec};
use ndist::ttt::{build_ttt_dataset, ttt_adapt};
use ndist::wav;

#[derive(Parser)]
#[command(name = "ndist", about = "Desk-scale speech pipeline over continuous latents")]
struct Cli {
    /// Run configuration (TOML); defaults apply for missing sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the deterministic synthetic corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage one: train the waveform codec.
    TrainVae {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stage two: train the autoregressive model on frozen-codec targets.
    TrainLm {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Text to waveform.
    Synth(SynthArgs),
    /// Adapt the model to one prompt at test time.
    Ttt {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        /// Prompt WAV to adapt to.
        #[arg(long)]
        prompt: PathBuf,
        /// Prompt transcript, space-separated token ids.
        #[arg(long)]
        text: String,
        /// Number of posterior draws.
        #[arg(short = 'n', long)]
        draws: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics over the eval split of a corpus.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Analytic inference cost per 10 s of audio.
    Flops {
        /// Latent frame rate(s) in Hz; repeatable.
        #[arg(long = "frame-rate", required = true)]
        frame_rates: Vec<f64>,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Re-derive and check the config hash embedded in artifacts.
    Verify {
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    codec: PathBuf,
    #[arg(long)]
    lm: PathBuf,
    /// Space-separated token ids.
    #[arg(long)]
    text: String,
    /// Reference WAV for the voice.
    #[arg(long, conflicts_with = "speaker_seed")]
    r#ref: Option<PathBuf>,
    /// Draw the voice from the prior with this seed.
    #[arg(long)]
    speaker_seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match load_config(cli.config.as_deref()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli.cmd, &run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                NdistError::Config(_) | NdistError::InvalidInput { .. } => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(path: Option<&Path>) -> ndist::error::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_path(p),
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn parse_text(text: &str) -> ndist::error::Result<Vec<u8>> {
    let tokens: std::result::Result<Vec<u8>, _> =
        text.split_whitespace().map(|t| t.parse::<u8>()).collect();
    let tokens = tokens.map_err(|_| {
        NdistError::invalid("text", "expected space-separated token ids in 0..=255")
    })?;
    if tokens.is_empty() {
        return Err(NdistError::invalid("text", "empty transcript"));
    }
    Ok(tokens)
}

fn dispatch(cmd: &Cmd, run: &RunConfig) -> ndist::error::Result<()> {
    match cmd {
        Cmd::GenData { out } => {
            let corpus = Corpus::generate(&run.corpus)?;
            corpus.write(out)?;
            let hash = run.hash()?;
            std::fs::write(out.join("run_hash.txt"), format!("{hash}\n"))?;
            println!(
                "wrote {} train + {} eval utterances to {}",
                corpus.train.len(),
                corpus.eval.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::TrainVae { corpus, out } => {
            let corpus = Corpus::load(corpus)?;
            let (codec, log) = ndist::train::train_vae(run, &corpus)?;
            let pipeline_stub = PipelineParts::codec_only(run, codec);
            pipeline_stub.save_codec(out)?;
            ndist::train::write_loss_log(
                &out.with_extension("loss.tsv"),
                &log.iter().map(|r| r.total).collect::<Vec<_>>(),
            )?;
            println!(
                "codec trained for {} steps, final loss {:.4} -> {}",
                log.len(),
                log.last().map(|r| r.total).unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Cmd::TrainLm { corpus, codec, out } => {
            let corpus = Corpus::load(corpus)?;
            let pipeline = load_pipeline_for_lm(run, codec, &corpus)?;
            pipeline.save_lm(out)?;
            Ok(())
        }
        Cmd::Synth(args) => cmd_synth(args, run),
        Cmd::Ttt {
            codec,
            lm,
            prompt,
            text,
            draws,
            out,
        } => {
            if *draws == 0 {
                return Err(NdistError::invalid("ttt", "need at least one draw (-n >= 1)"));
            }
            let pipeline = Pipeline::load(run, codec, lm)?;
            let tokens = parse_text(text)?;
            let (wave, _sr) = wav::read_wav(prompt)?;
            let mut cfg = run.ttt.clone();
            cfg.n_draws = *draws;
            let mut rng = SeedRng::new(run.train.seed ^ 0x5454_5400);
            let dataset = build_ttt_dataset(&wave, &tokens, &pipeline.codec, *draws, &mut rng)?;
            let speaker = pipeline
                .speaker
                .speaker_latent(&wave, run.corpus.sample_rate)?;
            let (adapted, report) =
                ttt_adapt(&pipeline.lm, speaker.vector(), &dataset, &cfg)?;
            let adapted_pipeline = Pipeline {
                run: run.clone(),
                codec: pipeline.codec,
                lm: adapted,
                speaker: pipeline.speaker,
            };
            adapted_pipeline.save_lm(out)?;
            println!(
                "adapted on {} draws, loss {:.4} -> {:.4}, saved to {}",
                report.n_draws,
                report.losses.first().copied().unwrap_or(f64::NAN),
                report.final_loss().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Cmd::Eval {
            corpus,
            codec,
            lm,
            out_dir,
        } => cmd_eval(run, corpus, codec, lm, out_dir),
        Cmd::Flops {
            frame_rates,
            duration,
        } => {
            println!("frame_rate_hz\tgflops_per_{duration}s");
            for &r in frame_rates {
                if !(r > 0.0) {
                    return Err(NdistError::invalid("flops", "frame rate must be positive"));
                }
                println!("{r}\t{:.4}", flops_estimate(&run.lm, r, *duration));
            }
            Ok(())
        }
        Cmd::Verify { files } => {
            if files.is_empty() {
                return Err(NdistError::invalid("verify", "no files given"));
            }
            for f in files {
                verify_artifact(f)?;
                println!("{}: ok", f.display());
            }
            Ok(())
        }
    }
}

/// Holder so train-vae can save a codec checkpoint without the LM stage.
struct PipelineParts {
    run: RunConfig,
    codec: ndist::flow_vae::FlowVae,
}

impl PipelineParts {
    fn codec_only(run: &RunConfig, codec: ndist::flow_vae::FlowVae) -> Self {
        Self {
            run: run.clone(),
            codec,
        }
    }

    fn save_codec(&self, path: &Path) -> ndist::error::Result<()> {
        let fp = ndist::checkpoint::fingerprint(&self.run.codec)?;
        let json = serde_json::to_string(&self.run.codec)
            .map_err(|e| NdistError::invalid("save_codec", e.to_string()))?;
        Checkpoint::from_store(self.codec.params(), "codec", &fp, &json)?
            .with_meta("run_hash", self.run.hash()?)
            .save(path)
    }
}

fn load_pipeline_for_lm(
    run: &RunConfig,
    codec_path: &Path,
    corpus: &Corpus,
) -> ndist::error::Result<Pipeline> {
    use candle_core::{DType, Device};
    let ckpt = Checkpoint::load(codec_path, &Device::Cpu)?;
    ckpt.check_fingerprint(&ndist::checkpoint::fingerprint(&run.codec)?)?;
    let ps = ndist::params::ParamStore::new(DType::F32, Device::Cpu, 0);
    let codec = ndist::flow_vae::FlowVae::new(&ps, &run.codec)?;
    ckpt.load_into(&ps)?;
    let (lm, speaker, log) = ndist::train::train_lm(run, corpus, &codec)?;
    println!(
        "lm trained for {} steps, final loss {:.4}",
        log.len(),
        log.last().map(|r| r.total).unwrap_or(f64::NAN)
    );
    Ok(Pipeline {
        run: run.clone(),
        codec,
        lm,
        speaker,
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SynthMetadata {
    config_json: String,
    config_hash: String,
    speaker: SpeakerRecord,
    stop: String,
    frames: usize,
    tokens: Vec<u8>,
}

fn cmd_synth(args: &SynthArgs, run: &RunConfig) -> ndist::error::Result<()> {
    let pipeline = Pipeline::load(run, &args.codec, &args.lm)?;
    let tokens = parse_text(&args.text)?;
    let ref_wave;
    let spec = match (&args.r#ref, args.speaker_seed) {
        (Some(p), None) => {
            let (w, _sr) = wav::read_wav(p)?;
            ref_wave = w;
            SpeakerSpec::Reference(&ref_wave)
        }
        (None, Some(seed)) => SpeakerSpec::Seed(seed),
        (None, None) => SpeakerSpec::Seed(args.seed),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let out = synthesize(
        &pipeline.lm,
        &pipeline.codec,
        &pipeline.speaker,
        spec,
        &tokens,
        run.corpus.sample_rate,
        args.seed,
    )?;
    wav::write_wav(&args.out, &out.waveform, run.corpus.sample_rate)?;
    let config_json = serde_json::to_string(run)
        .map_err(|e| NdistError::invalid("synth metadata", e.to_string()))?;
    let meta = SynthMetadata {
        config_hash: fingerprint_bytes(config_json.as_bytes()),
        config_json,
        speaker: out.speaker,
        stop: format!("{:?}", out.generation.stop),
        frames: out.generation.num_frames(),
        tokens,
    };
    let meta_path = args.out.with_extension("json");
    std::fs::write(
        &meta_path,
        serde_json::to_string_pretty(&meta)
            .map_err(|e| NdistError::invalid("synth metadata", e.to_string()))?,
    )?;
    println!(
        "{} frames ({}), wrote {} and {}",
        meta.frames,
        meta.stop,
        args.out.display(),
        meta_path.display()
    );
    Ok(())
}

fn cmd_eval(
    run: &RunConfig,
    corpus_dir: &Path,
    codec_path: &Path,
    lm_path: &Path,
    out_dir: &Path,
) -> ndist::error::Result<()> {
    let corpus = Corpus::load(corpus_dir)?;
    let pipeline = Pipeline::load(run, codec_path, lm_path)?;
    std::fs::create_dir_all(out_dir)?;
    let oracle = OracleDecoder::new(&corpus.speakers, &corpus.cfg);
    let sr = corpus.cfg.sample_rate;

    let mut snrs = Vec::new();
    let mut lsds = Vec::new();
    let mut token_errs = Vec::new();
    let mut sims = Vec::new();
    for (i, utt) in corpus.eval.iter().enumerate() {
        // codec round trip on the reference audio
        let post = pipeline.codec.encode(&utt.waveform)?;
        let recon = pipeline.codec.decode(post.means())?;
        let mut padded = utt.waveform.clone();
        padded.resize(recon.len(), 0.0);
        snrs.push(si_snr(&padded, &recon)?);
        lsds.push(log_spectral_distance(&padded, &recon)?);

        // full generation, voiced by a training utterance of the same speaker
        let reference = corpus
            .train
            .iter()
            .find(|u| u.speaker_id == utt.speaker_id)
            .map(|u| u.waveform.clone())
            .unwrap_or_else(|| utt.waveform.clone());
        let out = synthesize(
            &pipeline.lm,
            &pipeline.codec,
            &pipeline.speaker,
            SpeakerSpec::Reference(&reference),
            &utt.tokens,
            sr,
            i as u64,
        )?;
        if out.waveform.is_empty() {
            token_errs.push(1.0);
        } else {
            let decoded = oracle.decode(&out.waveform, true)?;
            token_errs.push(token_error_rate(&utt.tokens, &decoded.tokens));
            sims.push(speaker_similarity(
                &reference,
                &out.waveform,
                &pipeline.speaker,
                sr,
            )?);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let report = EvalReport {
        label: "eval".into(),
        si_snr_db: mean(&snrs),
        log_spectral_distance: mean(&lsds),
        token_error: mean(&token_errs),
        speaker_similarity: mean(&sims),
        gflops_per_10s: flops_estimate(&run.lm, run.codec.frame_rate(), 10.0),
        config_fingerprint: run.hash()?,
    };
    report.validate()?;
    let rows = vec![SweepRow {
        label: report.label.clone(),
        report: Some(report),
        error: None,
    }];
    write_reports_tsv(&out_dir.join("eval.tsv"), &rows)?;
    write_reports_jsonl(&out_dir.join("eval.jsonl"), &rows)?;

    let waves: Vec<&[f32]> = corpus.eval.iter().map(|u| u.waveform.as_slice()).collect();
    let stats = latent_stats(&pipeline.codec, waves.iter().copied())?;
    write_latent_stats(&out_dir.join("latents"), &stats)?;
    println!("wrote eval reports and latent stats to {}", out_dir.display());
    Ok(())
}

fn verify_artifact(path: &Path) -> ndist::error::Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "ndkpt" => {
            let ckpt = Checkpoint::load(path, &candle_core::Device::Cpu)?;
            let derived = fingerprint_bytes(ckpt.config_json.as_bytes());
            if derived != ckpt.config_fingerprint {
                return Err(NdistError::Checkpoint(format!(
                    "{}: embedded fingerprint {} does not match derived {derived}",
                    path.display(),
                    ckpt.config_fingerprint
                )));
            }
            Ok(())
        }
        "json" => {
            let text = std::fs::read_to_string(path)?;
            let meta: SynthMetadata = serde_json::from_str(&text)
                .map_err(|e| NdistError::invalid("verify", e.to_string()))?;
            let derived = fingerprint_bytes(meta.config_json.as_bytes());
            if derived != meta.config_hash {
                return Err(NdistError::Checkpoint(format!(
                    "{}: embedded config hash does not match derived",
                    path.display()
                )));
            }
            Ok(())
        }
        other => Err(NdistError::invalid(
            "verify",
            format!("unsupported artifact type .{other}"),
        )),
    }
}
