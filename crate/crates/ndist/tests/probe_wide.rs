// TEMP PROBE — delete before finalizing.
use candle_core::{DType, Device, Tensor};
use ndist::config::RunConfig;
use ndist::corpus::{Corpus, OracleDecoder};
use ndist::evalsuite::{si_snr, token_error_rate};
use ndist::flow_vae::{FlowVae, VaeOptim};
use ndist::params::ParamStore;
use ndist::rng::SeedRng;

#[test]
#[ignore]
fn spectral_codec_dynamics() {
    let corpus = Corpus::load(std::path::Path::new("/tmp/ndist_fixture/corpus")).unwrap();
    let oracle = OracleDecoder::new(&corpus.speakers, &corpus.cfg);
    let mut run = RunConfig::default();
    match std::env::var("PW_MODE").as_deref() {
        Ok("spec20") => run.codec.lambda_recon = 20.0,
        Ok("snake") => run.codec.activation = ndist::flow_vae::Activation::Snake,
        Ok("both") => {
            run.codec.lambda_recon = 20.0;
            run.codec.activation = ndist::flow_vae::Activation::Snake;
        }
        _ => {}
    }
    println!("mode {:?}", std::env::var("PW_MODE"));
    let ps = ParamStore::new(DType::F32, Device::Cpu, 0);
    let vae = FlowVae::new(&ps, &run.codec).unwrap();
    let mut optim = VaeOptim::new(&vae, 2e-3).unwrap();
    let mut rng = SeedRng::new(0x7641_4500);
    let hop = run.codec.hop();
    let crop_len = 8 * hop;
    let bs = 8;
    let t0 = std::time::Instant::now();
    for step in 0..3000usize {
        let mut data = Vec::with_capacity(bs * crop_len);
        for _ in 0..bs {
            let u = &corpus.train[rng.usize_below(corpus.train.len())];
            let off = hop * rng.usize_below((u.waveform.len() - crop_len) / hop + 1);
            data.extend(u.waveform[off..off + crop_len].iter().map(|&x| x as f64));
        }
        let batch = Tensor::from_vec(data, (bs, 1, crop_len), &Device::Cpu)
            .unwrap()
            .to_dtype(DType::F32)
            .unwrap();
        vae.train_step(&batch, &mut optim, &mut rng, step).unwrap();
        if (step + 1) % 500 == 0 {
            let mut snrs = Vec::new();
            let mut ters = Vec::new();
            for utt in corpus.eval.iter().take(8) {
                let post = vae.encode(&utt.waveform).unwrap();
                let recon = vae.decode(post.means()).unwrap();
                let n = utt.waveform.len().min(recon.len());
                snrs.push(si_snr(&utt.waveform[..n], &recon[..n]).unwrap());
                let dec = oracle.decode(&recon, true).unwrap();
                ters.push(token_error_rate(&utt.tokens, &dec.tokens));
            }
            let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            println!(
                "step {}: eval snr {:.2} dB ter {:.3} ({:.0?})",
                step + 1,
                m(&snrs),
                m(&ters),
                t0.elapsed()
            );
        }
    }
}
