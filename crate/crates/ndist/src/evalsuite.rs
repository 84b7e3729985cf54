//! Evaluation metrics and harnesses: scale-invariant SNR, log-spectral
//! distance, token error rate against the corpus oracle, speaker-encoder
//! cosine similarity, pooled latent statistics with kernel-density
//! estimates, and a config-sweep harness emitting TSV / line-delimited
//! structured reports.

use std::io::Write as _;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{NdistError, Result};
use crate::flow_vae::FlowVae;
use crate::speaker::SpeakerEncoder;

/// Cap applied to SI-SNR so identical signals report a finite value.
pub const SI_SNR_CAP_DB: f64 = 60.0;

/// Shortest waveform accepted by the speaker-similarity proxy, in seconds.
pub const MIN_SIMILARITY_SECONDS: f64 = 0.05;

/// Scale-invariant signal-to-noise ratio in dB, capped at 60.
pub fn si_snr(reference: &[f32], estimate: &[f32]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(NdistError::shape("si_snr", reference.len(), estimate.len()));
    }
    if reference.is_empty() {
        return Err(NdistError::invalid("si_snr", "empty reference"));
    }
    let n = reference.len() as f64;
    let mean_r: f64 = reference.iter().map(|&x| x as f64).sum::<f64>() / n;
    let mean_e: f64 = estimate.iter().map(|&x| x as f64).sum::<f64>() / n;
    let r: Vec<f64> = reference.iter().map(|&x| x as f64 - mean_r).collect();
    let e: Vec<f64> = estimate.iter().map(|&x| x as f64 - mean_e).collect();
    let rr: f64 = r.iter().map(|x| x * x).sum();
    if rr == 0.0 {
        return Err(NdistError::invalid("si_snr", "zero reference"));
    }
    let re: f64 = r.iter().zip(&e).map(|(a, b)| a * b).sum();
    let alpha = re / rr;
    let mut num = 0.0;
    let mut den = 0.0;
    for (ri, ei) in r.iter().zip(&e) {
        let t = alpha * ri;
        num += t * t;
        den += (ei - t) * (ei - t);
    }
    if den == 0.0 || num / den > 1e6 {
        return Ok(SI_SNR_CAP_DB);
    }
    Ok((10.0 * (num / den).log10()).min(SI_SNR_CAP_DB))
}

/// Mean log-spectral distance (dB) between two equal-length waveforms,
/// using Hann-windowed frames (win 256, hop 64).
pub fn log_spectral_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    const WIN: usize = 256;
    const HOP: usize = 64;
    const EPS: f64 = 1e-5;
    if a.len() != b.len() {
        return Err(NdistError::shape("log_spectral_distance", a.len(), b.len()));
    }
    if a.len() < WIN {
        return Err(NdistError::invalid(
            "log_spectral_distance",
            format!("need at least {WIN} samples, got {}", a.len()),
        ));
    }
    let bins = WIN / 2 + 1;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(WIN);
    let hann: Vec<f64> = (0..WIN)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WIN as f64).cos())
        .collect();
    let spectrum = |x: &[f32], off: usize| -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = (0..WIN)
            .map(|i| Complex::new(x[off + i] as f64 * hann[i], 0.0))
            .collect();
        fft.process(&mut buf);
        buf[..bins].iter().map(|c| c.norm() + EPS).collect()
    };
    let frames = (a.len() - WIN) / HOP + 1;
    let mut total = 0.0;
    for f in 0..frames {
        let sa = spectrum(a, f * HOP);
        let sb = spectrum(b, f * HOP);
        let msq: f64 = sa
            .iter()
            .zip(&sb)
            .map(|(x, y)| {
                let d = 20.0 * (x.log10() - y.log10());
                d * d
            })
            .sum::<f64>()
            / bins as f64;
        total += msq.sqrt();
    }
    Ok(total / frames as f64)
}

/// Levenshtein distance between token sequences, normalized by the
/// reference length; clamped to [0, 1].
pub fn token_error_rate(reference: &[u8], hypothesis: &[u8]) -> f64 {
    if reference.is_empty() {
        return if hypothesis.is_empty() { 0.0 } else { 1.0 };
    }
    let n = reference.len();
    let m = hypothesis.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for i in 1..=n {
        cur[0] = i;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    (prev[m] as f64 / n as f64).min(1.0)
}

/// Cosine similarity of the speaker encoder's conditioning vectors.
pub fn speaker_similarity(
    a: &[f32],
    b: &[f32],
    encoder: &SpeakerEncoder,
    sample_rate: u32,
) -> Result<f64> {
    let min = (MIN_SIMILARITY_SECONDS * sample_rate as f64).round() as usize;
    for (name, w) in [("a", a), ("b", b)] {
        if w.len() < min {
            return Err(NdistError::invalid(
                "speaker_similarity",
                format!("waveform {name} shorter than {min} samples"),
            ));
        }
    }
    let to_vec = |w: &[f32]| -> Result<Vec<f64>> {
        Ok(encoder
            .speaker_latent(w, sample_rate)?
            .vector()
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1()?)
    };
    Ok(cosine(&to_vec(a)?, &to_vec(b)?))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Normalized histogram (mass sums to 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn build(values: &[f64], bins: usize) -> Histogram {
        assert!(!values.is_empty() && bins > 0);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut mass = vec![0.0; bins];
        for &v in values {
            let idx = (((v - lo) / span) * bins as f64) as usize;
            mass[idx.min(bins - 1)] += 1.0;
        }
        let total = values.len() as f64;
        for m in &mut mass {
            *m /= total;
        }
        let edges = (0..=bins).map(|i| lo + span * i as f64 / bins as f64).collect();
        Histogram { edges, mass }
    }
}

/// Gaussian kernel-density estimate over a fixed grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Kde {
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl Kde {
    /// Silverman's rule over the pooled values; grid spans the data ± 3h.
    pub fn build(values: &[f64], grid: usize) -> Kde {
        assert!(!values.is_empty() && grid > 1);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
        let iqr = q(0.75) - q(0.25);
        let scale = if iqr > 0.0 { std.min(iqr / 1.34) } else { std };
        let mut h = 0.9 * scale * n.powf(-0.2);
        if !(h > 0.0) {
            h = 1e-3; // degenerate (constant) data still gets a valid density
        }
        // 6 bandwidths of margin keeps the truncated tail mass well below 1e-3
        let lo = sorted[0] - 6.0 * h;
        let hi = sorted[sorted.len() - 1] + 6.0 * h;
        let xs: Vec<f64> = (0..grid)
            .map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64)
            .collect();
        let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
        let density = xs
            .iter()
            .map(|&x| {
                values
                    .iter()
                    .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                    .sum::<f64>()
                    * norm
            })
            .collect();
        Kde { xs, density, bandwidth: h }
    }

    /// Trapezoid-rule integral of the density.
    pub fn total_mass(&self) -> f64 {
        self.integral(f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Trapezoid-rule mass of the density restricted to `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for i in 1..self.xs.len() {
            let (x0, x1) = (self.xs[i - 1], self.xs[i]);
            if x1 <= lo || x0 >= hi {
                continue;
            }
            let a = x0.max(lo);
            let b = x1.min(hi);
            // linear interpolation of the density at the clipped endpoints
            let t0 = (a - x0) / (x1 - x0);
            let t1 = (b - x0) / (x1 - x0);
            let d0 = self.density[i - 1] * (1.0 - t0) + self.density[i] * t0;
            let d1 = self.density[i - 1] * (1.0 - t1) + self.density[i] * t1;
            total += 0.5 * (d0 + d1) * (b - a);
        }
        total
    }

    pub fn mass_above(&self, threshold: f64) -> f64 {
        self.integral(threshold, f64::INFINITY)
    }
}

/// Pooled statistics of encoded latents over a corpus. Pooling is over all
/// frame × dimension values (per-frame per-dim, not dimension-averaged).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentStats {
    pub dim_means: Vec<f64>,
    pub dim_vars: Vec<f64>,
    pub num_frames: usize,
    pub mean_hist: Histogram,
    pub var_hist: Histogram,
    pub mean_kde: Kde,
    pub var_kde: Kde,
}

/// Encode every waveform and pool posterior means and variances.
pub fn latent_stats<'a, I>(codec: &FlowVae, waveforms: I) -> Result<LatentStats>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let d = codec.cfg.latent_dim;
    let mut means_pool: Vec<f64> = Vec::new();
    let mut vars_pool: Vec<f64> = Vec::new();
    let mut dim_sum = vec![0.0f64; d];
    let mut dim_sumsq = vec![0.0f64; d];
    let mut frames = 0usize;
    for w in waveforms {
        let post = codec.encode(w)?;
        let m: Vec<f64> = post
            .means()
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        let v: Vec<f64> = post
            .log_vars()
            .exp()?
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1()?;
        for t in 0..post.len() {
            for k in 0..d {
                let x = m[t * d + k];
                dim_sum[k] += x;
                dim_sumsq[k] += x * x;
            }
        }
        frames += post.len();
        means_pool.extend(m);
        vars_pool.extend(v);
    }
    if frames == 0 {
        return Err(NdistError::invalid("latent_stats", "no waveforms"));
    }
    let n = frames as f64;
    let dim_means: Vec<f64> = dim_sum.iter().map(|s| s / n).collect();
    let dim_vars: Vec<f64> = dim_sumsq
        .iter()
        .zip(&dim_means)
        .map(|(sq, m)| (sq / n - m * m).max(0.0))
        .collect();
    Ok(LatentStats {
        dim_means,
        dim_vars,
        num_frames: frames,
        mean_hist: Histogram::build(&means_pool, 64),
        var_hist: Histogram::build(&vars_pool, 64),
        mean_kde: Kde::build(&means_pool, 256),
        var_kde: Kde::build(&vars_pool, 256),
    })
}

/// One row of metric results; the fingerprint ties it to the exact config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub si_snr_db: f64,
    pub log_spectral_distance: f64,
    pub token_error: f64,
    pub speaker_similarity: f64,
    pub gflops_per_10s: f64,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("si_snr_db", self.si_snr_db),
            ("log_spectral_distance", self.log_spectral_distance),
            ("token_error", self.token_error),
            ("speaker_similarity", self.speaker_similarity),
            ("gflops_per_10s", self.gflops_per_10s),
        ] {
            if !v.is_finite() {
                return Err(NdistError::invalid("EvalReport", format!("{name} not finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.token_error) {
            return Err(NdistError::invalid("EvalReport", "token_error outside [0, 1]"));
        }
        Ok(())
    }
}

/// Sweep outcome per config: either a report or the recorded failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Run `eval_fn` on each labeled config; individual failures are recorded
/// and the sweep continues.
pub fn sweep<C, F>(configs: &[(String, C)], mut eval_fn: F) -> Vec<SweepRow>
where
    F: FnMut(&str, &C) -> Result<EvalReport>,
{
    configs
        .iter()
        .map(|(label, cfg)| match eval_fn(label, cfg) {
            Ok(report) => SweepRow {
                label: label.clone(),
                report: Some(report),
                error: None,
            },
            Err(e) => SweepRow {
                label: label.clone(),
                report: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn write_reports_tsv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "label\tsi_snr_db\tlsd\ttoken_error\tspeaker_similarity\tgflops_per_10s\tfingerprint\terror"
    )?;
    for row in rows {
        match &row.report {
            Some(r) => writeln!(
                f,
                "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t",
                row.label,
                r.si_snr_db,
                r.log_spectral_distance,
                r.token_error,
                r.speaker_similarity,
                r.gflops_per_10s,
                r.config_fingerprint
            )?,
            None => writeln!(
                f,
                "{}\t\t\t\t\t\t\t{}",
                row.label,
                row.error.as_deref().unwrap_or("unknown")
            )?,
        }
    }
    Ok(())
}

pub fn write_reports_jsonl(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| NdistError::invalid("write_reports_jsonl", e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Dump KDE and histogram arrays as plain numeric text (x <tab> value).
pub fn write_latent_stats(dir: &Path, stats: &LatentStats) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let dump_kde = |name: &str, kde: &Kde| -> Result<()> {
        let mut f = std::fs::File::create(dir.join(name))?;
        for (x, d) in kde.xs.iter().zip(&kde.density) {
            writeln!(f, "{x}\t{d}")?;
        }
        Ok(())
    };
    let dump_hist = |name: &str, h: &Histogram| -> Result<()> {
        let mut f = std::fs::File::create(dir.join(name))?;
        for (i, m) in h.mass.iter().enumerate() {
            writeln!(f, "{}\t{}\t{m}", h.edges[i], h.edges[i + 1])?;
        }
        Ok(())
    };
    dump_kde("mean_kde.tsv", &stats.mean_kde)?;
    dump_kde("var_kde.tsv", &stats.var_kde)?;
    dump_hist("mean_hist.tsv", &stats.mean_hist)?;
    dump_hist("var_hist.tsv", &stats.var_hist)?;
    let mut f = std::fs::File::create(dir.join("dims.tsv"))?;
    writeln!(f, "dim\tmean\tvar")?;
    for (i, (m, v)) in stats.dim_means.iter().zip(&stats.dim_vars).enumerate() {
        writeln!(f, "{i}\t{m}\t{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::rng::SeedRng;
    use crate::speaker::SpeakerConfig;
    use candle_core::{DType, Device};

    fn noise(len: usize, seed: u64) -> Vec<f32> {
        let mut rng = SeedRng::new(seed);
        (0..len).map(|_| rng.standard_normal() as f32 * 0.3).collect()
    }

    #[test]
    fn si_snr_identity_and_scale_invariance() {
        let x = noise(400, 1);
        assert_eq!(si_snr(&x, &x).unwrap(), SI_SNR_CAP_DB);
        let half: Vec<f32> = x.iter().map(|v| v * 0.5).collect();
        assert_eq!(si_snr(&x, &half).unwrap(), SI_SNR_CAP_DB);

        // general scale invariance away from the cap
        let noisy: Vec<f32> = x.iter().zip(noise(400, 2)).map(|(a, b)| a + 0.1 * b).collect();
        let a = si_snr(&x, &noisy).unwrap();
        let scaled: Vec<f32> = noisy.iter().map(|v| v * 3.0).collect();
        let b = si_snr(&x, &scaled).unwrap();
        // f32 rounding of the scaled signal perturbs the ratio slightly
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn si_snr_constructed_noise_oracle() {
        let x = noise(20_000, 3);
        let n = noise(20_000, 4);
        let px: f64 = x.iter().map(|v| (*v as f64).powi(2)).sum();
        let pn: f64 = n.iter().map(|v| (*v as f64).powi(2)).sum();
        // scale noise for a 10 dB ratio
        let g = ((px / pn) / 10.0f64).sqrt() as f32;
        let est: Vec<f32> = x.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let snr = si_snr(&x, &est).unwrap();
        assert!((snr - 10.0).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn si_snr_rejects_bad_input() {
        assert!(si_snr(&[0.0; 10], &[0.1; 10]).is_err()); // zero reference
        assert!(si_snr(&[0.1; 10], &[0.1; 9]).is_err());
        assert!(si_snr(&[], &[]).is_err());
    }

    #[test]
    fn lsd_identity_and_symmetry() {
        let a = noise(1000, 5);
        let b = noise(1000, 6);
        assert_eq!(log_spectral_distance(&a, &a).unwrap(), 0.0);
        let ab = log_spectral_distance(&a, &b).unwrap();
        let ba = log_spectral_distance(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab > 0.0);
        assert!(log_spectral_distance(&a[..100], &b[..100]).is_err());
    }

    #[test]
    fn token_error_rate_edit_distances() {
        assert_eq!(token_error_rate(&[1, 2, 3], &[1, 2, 3]), 0.0);
        assert_eq!(token_error_rate(&[1, 2, 3, 4], &[1, 9, 3, 4]), 0.25);
        assert_eq!(token_error_rate(&[1, 2, 3, 4], &[1, 2, 3]), 0.25); // deletion
        assert_eq!(token_error_rate(&[1, 2], &[1, 5, 2]), 0.5); // insertion
        assert_eq!(token_error_rate(&[], &[]), 0.0);
        assert_eq!(token_error_rate(&[], &[1]), 1.0);
        assert_eq!(token_error_rate(&[1], &[2, 3, 4, 5]), 1.0); // clamped
    }

    #[test]
    fn speaker_similarity_contract() {
        let ps = ParamStore::new(DType::F32, Device::Cpu, 7);
        let cfg = SpeakerConfig {
            latent_dim: 4,
            channels: vec![4, 6],
            crop_seconds: 0.25,
            ..Default::default()
        };
        let enc = SpeakerEncoder::new(&ps, &cfg).unwrap();
        let a = noise(1000, 8);
        let b = noise(1000, 9);
        let aa = speaker_similarity(&a, &a, &enc, 1000).unwrap();
        assert!((aa - 1.0).abs() < 1e-6);
        let ab = speaker_similarity(&a, &b, &enc, 1000).unwrap();
        let ba = speaker_similarity(&b, &a, &enc, 1000).unwrap();
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&ab));
        // shorter than the minimum segment
        assert!(speaker_similarity(&a[..10], &b, &enc, 1000).is_err());
    }

    #[test]
    fn histogram_mass_sums_to_one() {
        let v = noise(5000, 10).iter().map(|&x| x as f64).collect::<Vec<_>>();
        let h = Histogram::build(&v, 64);
        let total: f64 = h.mass.iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        assert_eq!(h.edges.len(), 65);
    }

    #[test]
    fn kde_integrates_to_one() {
        let v: Vec<f64> = noise(2000, 11).iter().map(|&x| x as f64).collect();
        let kde = Kde::build(&v, 256);
        assert!(kde.bandwidth > 0.0);
        let total = kde.total_mass();
        assert!((total - 1.0).abs() < 1e-3, "mass {total}");
        // split integral is consistent
        let below = kde.integral(f64::NEG_INFINITY, 0.0);
        let above = kde.mass_above(0.0);
        assert!((below + above - total).abs() < 1e-9);

        // degenerate constant data: finite bandwidth, unit mass
        let flat = vec![2.5f64; 100];
        let k2 = Kde::build(&flat, 128);
        assert!(k2.bandwidth > 0.0);
        assert!((k2.total_mass() - 1.0).abs() < 1e-3);
        assert!(k2.mass_above(2.5) < 0.51 && k2.mass_above(2.5) > 0.49);
    }

    #[test]
    fn latent_stats_runs_and_is_deterministic() {
        use crate::flow_vae::CodecConfig;
        let ps = ParamStore::new(DType::F32, Device::Cpu, 12);
        let cfg = CodecConfig {
            sample_rate: 64,
            strides: vec![2, 2],
            channels: vec![4, 6],
            latent_dim: 4,
            flow_enabled: false,
            stft_win: 16,
            stft_hop: 8,
            osc_freqs: vec![16.0],
            ..Default::default()
        };
        let codec = FlowVae::new(&ps, &cfg).unwrap();
        let w1 = noise(64, 13);
        let w2 = vec![0.0f32; 64]; // silence must not crash
        let waves: Vec<&[f32]> = vec![&w1, &w2];
        let a = latent_stats(&codec, waves.iter().copied()).unwrap();
        let b = latent_stats(&codec, waves.iter().copied()).unwrap();
        assert_eq!(a.num_frames, 32);
        assert_eq!(a.dim_means, b.dim_means);
        assert_eq!(a.var_kde.density, b.var_kde.density);
        assert!(latent_stats(&codec, std::iter::empty()).is_err());
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let configs = vec![
            ("ok1".to_string(), 1u32),
            ("bad".to_string(), 2),
            ("ok2".to_string(), 3),
        ];
        let rows = sweep(&configs, |label, &v| {
            if v == 2 {
                return Err(NdistError::invalid("sweep test", "boom"));
            }
            Ok(EvalReport {
                label: label.to_string(),
                si_snr_db: v as f64,
                log_spectral_distance: 0.0,
                token_error: 0.0,
                speaker_similarity: 1.0,
                gflops_per_10s: 1.0,
                config_fingerprint: "fp".into(),
            })
        });
        assert_eq!(rows.len(), 3);
        assert!(rows[0].report.is_some() && rows[2].report.is_some());
        assert!(rows[1].report.is_none());
        assert!(rows[1].error.as_deref().unwrap().contains("boom"));

        let dir = tempfile::tempdir().unwrap();
        let tsv = dir.path().join("r.tsv");
        write_reports_tsv(&tsv, &rows).unwrap();
        let text = std::fs::read_to_string(&tsv).unwrap();
        assert_eq!(text.lines().count(), 4); // header + 3 rows
        write_reports_jsonl(&dir.path().join("r.jsonl"), &rows).unwrap();
    }

    #[test]
    fn report_validation() {
        let mut r = EvalReport {
            label: "x".into(),
            si_snr_db: 10.0,
            log_spectral_distance: 1.0,
            token_error: 0.5,
            speaker_similarity: 0.2,
            gflops_per_10s: 3.0,
            config_fingerprint: "fp".into(),
        };
        r.validate().unwrap();
        r.token_error = 1.5;
        assert!(r.validate().is_err());
        r.token_error = f64::NAN;
        assert!(r.validate().is_err());
    }
}
