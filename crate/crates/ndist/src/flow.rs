//! Invertible per-frame normalizing flow over latent channels: a stack of
//! affine coupling layers with alternating half-channel masks. Supplies the
//! change-of-variables density used by the codec's KL regularizer.

use candle_core::Tensor;

use crate::error::{NdistError, Result};
use crate::gaussians::{log_prob_seq, DiagGaussianSeq, LN_2PI};
use crate::nn::Linear;
use crate::params::ParamStore;
use crate::rng::SeedRng;

const LOG_SCALE_BOUND: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct FlowConfig {
    pub num_layers: usize,
    pub channels: usize,
    /// Zero-initialize the conditioner output so the stack starts as the
    /// identity map. Disabled only by tests that want a random flow.
    pub identity_init: bool,
}

impl FlowConfig {
    pub fn new(num_layers: usize, channels: usize) -> Self {
        Self {
            num_layers,
            channels,
            identity_init: true,
        }
    }
}

struct Coupling {
    /// Even layers condition on the first half and transform the second;
    /// odd layers swap the roles.
    keep_first: bool,
    mid: usize,
    lin1: Linear,
    lin2: Linear,
}

pub struct FlowStack {
    layers: Vec<Coupling>,
    channels: usize,
}

impl FlowStack {
    pub fn new(ps: &ParamStore, prefix: &str, cfg: &FlowConfig) -> Result<Self> {
        let d = cfg.channels;
        if d < 2 {
            return Err(NdistError::invalid("FlowStack::new", "channels must be >= 2"));
        }
        let mid = d / 2;
        let hidden = 2 * d;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for i in 0..cfg.num_layers {
            let keep_first = i % 2 == 0;
            let (nc, nt) = if keep_first { (mid, d - mid) } else { (d - mid, mid) };
            let lin1 = Linear::new(ps, &format!("{prefix}.layer{i}.cond1"), nc, hidden, true)?;
            let lin2 = if cfg.identity_init {
                Linear::new_zeroed(ps, &format!("{prefix}.layer{i}.cond2"), hidden, 2 * nt)?
            } else {
                // moderate scales keep deep random stacks numerically invertible
                Linear::new_with_gain(ps, &format!("{prefix}.layer{i}.cond2"), hidden, 2 * nt, 0.5)?
            };
            layers.push(Coupling {
                keep_first,
                mid,
                lin1,
                lin2,
            });
        }
        Ok(Self { layers, channels: d })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// z → (z̃, per-frame log |det ∂z̃/∂z|). `z: [T, D]`.
    pub fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_shape(z)?;
        let t = z.dims()[0];
        let mut cur = z.clone();
        let mut log_det = Tensor::zeros(t, z.dtype(), z.device())?;
        for layer in &self.layers {
            let (next, ld) = layer.forward(&cur)?;
            cur = next;
            log_det = (log_det + ld)?;
        }
        Ok((cur, log_det))
    }

    /// z̃ → (z, −log |det|) of the corresponding forward pass.
    pub fn inverse(&self, z_tilde: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_shape(z_tilde)?;
        let t = z_tilde.dims()[0];
        let mut cur = z_tilde.clone();
        let mut neg_log_det = Tensor::zeros(t, z_tilde.dtype(), z_tilde.device())?;
        for layer in self.layers.iter().rev() {
            let (prev, nld) = layer.inverse(&cur)?;
            cur = prev;
            neg_log_det = (neg_log_det + nld)?;
        }
        Ok((cur, neg_log_det))
    }

    fn check_shape(&self, z: &Tensor) -> Result<()> {
        if z.rank() != 2 || z.dims()[1] != self.channels {
            return Err(NdistError::shape(
                "FlowStack",
                format!("[T, {}]", self.channels),
                format!("{:?}", z.dims()),
            ));
        }
        Ok(())
    }
}

impl Coupling {
    fn split(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = z.dims()[1];
        let a = z.narrow(1, 0, self.mid)?;
        let b = z.narrow(1, self.mid, d - self.mid)?;
        Ok(if self.keep_first { (a, b) } else { (b, a) })
    }

    fn join(&self, cond: &Tensor, trans: &Tensor) -> Result<Tensor> {
        let (a, b) = if self.keep_first { (cond, trans) } else { (trans, cond) };
        Ok(Tensor::cat(&[a, b], 1)?)
    }

    fn shift_scale(&self, cond: &Tensor) -> Result<(Tensor, Tensor)> {
        let h = self.lin1.forward(cond)?.tanh()?;
        let st = self.lin2.forward(&h)?;
        let nt = st.dims()[1] / 2;
        let shift = st.narrow(1, 0, nt)?;
        let ls = st.narrow(1, nt, nt)?.clamp(-LOG_SCALE_BOUND, LOG_SCALE_BOUND)?;
        Ok((shift, ls))
    }

    fn forward(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let (cond, trans) = self.split(z)?;
        let (shift, ls) = self.shift_scale(&cond)?;
        let out = ((trans * ls.exp()?)? + shift)?;
        let ld = ls.sum(1)?;
        Ok((self.join(&cond, &out)?, ld))
    }

    fn inverse(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let (cond, trans) = self.split(z)?;
        let (shift, ls) = self.shift_scale(&cond)?;
        let orig = ((trans - shift)? * ls.affine(-1.0, 0.0)?.exp()?)?;
        let nld = ls.sum(1)?.affine(-1.0, 0.0)?;
        Ok((self.join(&cond, &orig)?, nld))
    }
}

/// Per-frame single-sample Monte-Carlo estimate of
/// KL(q(z̃|x) ∥ N(0, I)): log q(z) − log|det| − log N(f(z); 0, I).
/// Returns a `[T]` tensor; `flow_kl_loss` is its mean.
pub fn flow_kl_loss_per_frame(
    post: &DiagGaussianSeq,
    flow: &FlowStack,
    eps: &Tensor,
) -> Result<Tensor> {
    let std = post.log_vars().affine(0.5, 0.0)?.exp()?;
    let z = (post.means() + (std * eps)?)?;
    let (z_tilde, log_det) = flow.forward(&z)?;
    let lp_post = log_prob_seq(post, &z)?;
    let d = post.dim() as f64;
    let lp_prior = (z_tilde.sqr()?.sum(1)?.affine(-0.5, -0.5 * d * LN_2PI))?;
    Ok(((lp_post - log_det)? - lp_prior)?)
}

/// Mean over frames of the single-sample KL estimate; differentiable
/// through both the posterior parameters and the flow.
pub fn flow_kl_loss(post: &DiagGaussianSeq, flow: &FlowStack, rng: &mut SeedRng) -> Result<Tensor> {
    let eps = rng.normal_tensor(post.means().shape(), post.means().dtype(), post.means().device())?;
    Ok(flow_kl_loss_per_frame(post, flow, &eps)?.mean_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::kl_divergence;
    use crate::gradcheck::check_grads;
    use crate::params::{Init, ParamStore};
    use candle_core::{DType, Device, Var};

    fn store(dtype: DType) -> ParamStore {
        ParamStore::new(dtype, Device::Cpu, 1234)
    }

    fn rand_input(t: usize, d: usize, dtype: DType, seed: u64) -> Tensor {
        SeedRng::new(seed)
            .normal_tensor((t, d), dtype, &Device::Cpu)
            .unwrap()
    }

    /// LU determinant with partial pivoting, for the numerical Jacobian.
    fn det(mut m: Vec<Vec<f64>>) -> f64 {
        let n = m.len();
        let mut d = 1.0;
        for i in 0..n {
            let (mut p, mut best) = (i, m[i][i].abs());
            for r in i + 1..n {
                if m[r][i].abs() > best {
                    p = r;
                    best = m[r][i].abs();
                }
            }
            if p != i {
                m.swap(i, p);
                d = -d;
            }
            if m[i][i] == 0.0 {
                return 0.0;
            }
            d *= m[i][i];
            for r in i + 1..n {
                let f = m[r][i] / m[i][i];
                for c in i..n {
                    m[r][c] -= f * m[i][c];
                }
            }
        }
        d
    }

    #[test]
    fn identity_initialized_flow_is_identity() {
        let ps = store(DType::F64);
        let flow = FlowStack::new(&ps, "flow", &FlowConfig::new(4, 6)).unwrap();
        let z = rand_input(5, 6, DType::F64, 0);
        let (zt, ld) = flow.forward(&z).unwrap();
        assert_eq!(
            z.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            zt.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        assert_eq!(ld.to_vec1::<f64>().unwrap(), vec![0.0; 5]);
        let (zi, nld) = flow.inverse(&z).unwrap();
        assert_eq!(
            z.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            zi.flatten_all().unwrap().to_vec1::<f64>().unwrap()
        );
        assert_eq!(nld.to_vec1::<f64>().unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn single_layer_log_scale_bias_matches_jacobian() {
        let d = 4;
        let ps = store(DType::F64);
        let flow = FlowStack::new(&ps, "f", &FlowConfig::new(1, d)).unwrap();
        // conditioner output bias layout: [shift(2), log_scale(2)]
        let s = [0.3f64, -0.7];
        ps.get_or_init("f.layer0.cond2.b", 4, Init::Zeros)
            .unwrap()
            .set(&Tensor::from_vec(vec![0.0, 0.0, s[0], s[1]], 4, &Device::Cpu).unwrap())
            .unwrap();
        let z = rand_input(1, d, DType::F64, 3);
        let (_, ld) = flow.forward(&z).unwrap();
        let analytic = ld.to_vec1::<f64>().unwrap()[0];
        assert!((analytic - (s[0] + s[1])).abs() < 1e-12);

        // numerical Jacobian at this point
        let z0: Vec<f64> = z.flatten_all().unwrap().to_vec1().unwrap();
        let h = 1e-6;
        let eval = |v: &[f64]| -> Vec<f64> {
            let t = Tensor::from_vec(v.to_vec(), (1, d), &Device::Cpu).unwrap();
            flow.forward(&t).unwrap().0.flatten_all().unwrap().to_vec1().unwrap()
        };
        let mut jac = vec![vec![0.0; d]; d];
        for j in 0..d {
            let mut p = z0.clone();
            p[j] += h;
            let mut m = z0.clone();
            m[j] -= h;
            let fp = eval(&p);
            let fm = eval(&m);
            for i in 0..d {
                jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let numeric = det(jac).abs().ln();
        assert!((analytic - numeric).abs() < 1e-6, "analytic {analytic} numeric {numeric}");
    }

    #[test]
    fn random_stack_log_det_matches_jacobian() {
        for d in [4usize, 6, 8] {
            let ps = ParamStore::new(DType::F64, Device::Cpu, d as u64);
            let mut cfg = FlowConfig::new(4, d);
            cfg.identity_init = false;
            let flow = FlowStack::new(&ps, "f", &cfg).unwrap();
            let z = rand_input(1, d, DType::F64, 7 + d as u64);
            let (_, ld) = flow.forward(&z).unwrap();
            let analytic = ld.to_vec1::<f64>().unwrap()[0];
            let z0: Vec<f64> = z.flatten_all().unwrap().to_vec1().unwrap();
            let h = 1e-6;
            let mut jac = vec![vec![0.0; d]; d];
            for j in 0..d {
                let mut p = z0.clone();
                p[j] += h;
                let mut m = z0.clone();
                m[j] -= h;
                let tp = Tensor::from_vec(p, (1, d), &Device::Cpu).unwrap();
                let tm = Tensor::from_vec(m, (1, d), &Device::Cpu).unwrap();
                let fp: Vec<f64> = flow.forward(&tp).unwrap().0.flatten_all().unwrap().to_vec1().unwrap();
                let fm: Vec<f64> = flow.forward(&tm).unwrap().0.flatten_all().unwrap().to_vec1().unwrap();
                for i in 0..d {
                    jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            let numeric = det(jac).abs().ln();
            assert!(
                (analytic - numeric).abs() < 1e-5,
                "D={d}: analytic {analytic} numeric {numeric}"
            );
        }
    }

    #[test]
    fn composition_sums_log_dets() {
        let ps = ParamStore::new(DType::F64, Device::Cpu, 5);
        let mut cfg = FlowConfig::new(2, 6);
        cfg.identity_init = false;
        let flow = FlowStack::new(&ps, "f", &cfg).unwrap();
        let z = rand_input(3, 6, DType::F64, 11);
        let (zt, ld) = flow.forward(&z).unwrap();
        // apply layers one by one
        let (mid, ld0) = flow.layers[0].forward(&z).unwrap();
        let (zt2, ld1) = flow.layers[1].forward(&mid).unwrap();
        let sum = (&ld0 + &ld1).unwrap();
        let diff = (&ld - &sum).unwrap().abs().unwrap().max(0).unwrap().to_vec0::<f64>().unwrap();
        assert!(diff < 1e-12);
        let dz = (&zt - &zt2).unwrap().abs().unwrap().max(0).unwrap().max(0).unwrap().to_vec0::<f64>().unwrap();
        assert!(dz < 1e-12);
    }

    #[test]
    fn bijectivity_round_trip_f32() {
        for d in [4usize, 16, 64] {
            let ps = ParamStore::new(DType::F32, Device::Cpu, 21 + d as u64);
            let mut cfg = FlowConfig::new(8, d);
            cfg.identity_init = false;
            let flow = FlowStack::new(&ps, "f", &cfg).unwrap();
            let z = rand_input(8, d, DType::F32, 13);
            let (zt, ld) = flow.forward(&z).unwrap();
            let (zi, nld) = flow.inverse(&zt).unwrap();
            let err = (&z - &zi)
                .unwrap()
                .abs()
                .unwrap()
                .flatten_all()
                .unwrap()
                .max(0)
                .unwrap()
                .to_vec0::<f32>()
                .unwrap();
            assert!(err < 1e-5, "D={d} round-trip error {err}");
            let cancel = (&ld + &nld)
                .unwrap()
                .abs()
                .unwrap()
                .max(0)
                .unwrap()
                .to_vec0::<f32>()
                .unwrap();
            assert!(cancel < 1e-6 * ld.dims()[0] as f32 * 10.0, "log-det cancel {cancel}");
        }
    }

    #[test]
    fn kl_estimate_matches_closed_form_for_identity_flow() {
        let ps = store(DType::F64);
        let flow = FlowStack::new(&ps, "f", &FlowConfig::new(2, 2)).unwrap();
        // arbitrary Gaussian repeated over 10^4 frames: the per-frame mean is
        // a 10^4-draw MC estimate of KL(post, N(0,I))
        let t = 10_000;
        let mean = Tensor::from_vec(vec![0.7f64, -0.3], (1, 2), &Device::Cpu)
            .unwrap()
            .broadcast_as((t, 2))
            .unwrap()
            .copy()
            .unwrap();
        let lv = Tensor::from_vec(vec![0.5f64, -0.8], (1, 2), &Device::Cpu)
            .unwrap()
            .broadcast_as((t, 2))
            .unwrap()
            .copy()
            .unwrap();
        let post = DiagGaussianSeq::new(mean, lv).unwrap();
        let mut rng = SeedRng::new(99);
        let eps = rng.normal_tensor((t, 2), DType::F64, &Device::Cpu).unwrap();
        let per_frame = flow_kl_loss_per_frame(&post, &flow, &eps).unwrap();
        let vals: Vec<f64> = per_frame.to_vec1().unwrap();
        let mc = vals.iter().sum::<f64>() / t as f64;
        let var = vals.iter().map(|v| (v - mc) * (v - mc)).sum::<f64>() / t as f64;
        let se = (var / t as f64).sqrt();

        let p = post.frame(0).unwrap();
        let q = crate::gaussians::DiagGaussian::standard(2, DType::F64, &Device::Cpu).unwrap();
        let exact: f64 = kl_divergence(&p, &q).unwrap().to_vec0().unwrap();
        assert!((mc - exact).abs() < 3.0 * se, "mc {mc} exact {exact} se {se}");
    }

    #[test]
    fn kl_estimate_zero_for_prior_posterior() {
        let ps = store(DType::F64);
        let flow = FlowStack::new(&ps, "f", &FlowConfig::new(2, 4)).unwrap();
        let post = DiagGaussianSeq::standard(10_000, 4, DType::F64, &Device::Cpu).unwrap();
        let loss: f64 = flow_kl_loss(&post, &flow, &mut SeedRng::new(5))
            .unwrap()
            .to_vec0()
            .unwrap();
        assert!(loss.abs() < 0.02, "loss {loss}");
    }

    #[test]
    fn kl_estimator_is_frame_symmetric() {
        let ps = ParamStore::new(DType::F64, Device::Cpu, 31);
        let mut cfg = FlowConfig::new(3, 4);
        cfg.identity_init = false;
        let flow = FlowStack::new(&ps, "f", &cfg).unwrap();
        let t = 6;
        let means = rand_input(t, 4, DType::F64, 1);
        let lvs = rand_input(t, 4, DType::F64, 2).affine(0.3, -0.5).unwrap();
        let eps = rand_input(t, 4, DType::F64, 3);
        let post = DiagGaussianSeq::new(means.clone(), lvs.clone()).unwrap();
        let base = flow_kl_loss_per_frame(&post, &flow, &eps).unwrap().mean_all().unwrap();

        // reverse frame order (and the paired noise): mean is unchanged
        let perm: Vec<u32> = (0..t as u32).rev().collect();
        let idx = Tensor::from_vec(perm, t, &Device::Cpu).unwrap();
        let post_p = DiagGaussianSeq::new(
            means.index_select(&idx, 0).unwrap(),
            lvs.index_select(&idx, 0).unwrap(),
        )
        .unwrap();
        let eps_p = eps.index_select(&idx, 0).unwrap();
        let permuted = flow_kl_loss_per_frame(&post_p, &flow, &eps_p).unwrap().mean_all().unwrap();
        let a: f64 = base.to_vec0().unwrap();
        let b: f64 = permuted.to_vec0().unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn flow_kl_gradients_match_finite_differences() {
        let ps = ParamStore::new(DType::F64, Device::Cpu, 77);
        let mut cfg = FlowConfig::new(2, 4);
        cfg.identity_init = false;
        let flow = FlowStack::new(&ps, "f", &cfg).unwrap();
        let means = Var::from_tensor(&rand_input(3, 4, DType::F64, 8)).unwrap();
        let lvs = Var::from_tensor(&rand_input(3, 4, DType::F64, 9).affine(0.2, -0.3).unwrap()).unwrap();
        let eps = rand_input(3, 4, DType::F64, 10);
        let mut vars = ps.all_vars();
        vars.push(("post.means".to_string(), means.clone()));
        vars.push(("post.log_vars".to_string(), lvs.clone()));
        check_grads(
            &vars,
            || {
                let post = DiagGaussianSeq::new(means.as_tensor().clone(), lvs.as_tensor().clone())?;
                Ok(flow_kl_loss_per_frame(&post, &flow, &eps)?.mean_all()?)
            },
            2,
            1e-4,
            1e-4,
            &mut SeedRng::new(0),
        )
        .unwrap();
    }
}
