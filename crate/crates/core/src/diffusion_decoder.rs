//! Latent-conditioned denoising networks and their training losses.
//!
//! Networks predict the injected noise `eps`. The likelihood-weighted
//! score-matching loss is evaluated through the conversion
//! `s = -eps / sigma_t`, so one network serves both weightings.
//!
//! All batched functions take one [`Timestep`] per row.

use diffmvae_nn::{concat_cols, sinusoidal_embedding, Linear, ParamStore, Tape, Var};
use ndarray::Array2;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::noise_schedule::{lambda_weight, positive_sigma, NoiseSchedule, Timestep, WeightMode};

/// A differentiable map `(x_t, z, t) -> eps` recorded on a tape.
///
/// `times` holds one network time in `[0, 1]` per row (see
/// [`NoiseSchedule::network_time`]). Implementations must be deterministic
/// given their inputs and parameters and return an array shaped like `x_t`.
pub trait EpsNetwork: Send + Sync {
    fn data_dim(&self) -> usize;

    /// Width of the conditioning latent, 0 for unconditional networks.
    fn cond_dim(&self) -> usize;

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamStore,
        x_t: Var<'t>,
        z: Option<Var<'t>>,
        times: &[f64],
    ) -> Var<'t>;

    /// Evaluates the network outside of training.
    fn predict(&self, params: &ParamStore, x_t: &Array2<f64>, z: Option<&Array2<f64>>, times: &[f64]) -> Array2<f64> {
        let tape = Tape::new();
        let x = tape.constant(x_t.clone());
        let z = z.map(|z| tape.constant(z.clone()));
        self.forward(&tape, params, x, z, times).value()
    }
}

/// Residual MLP with the conditioning vector `[time embedding, z]`
/// concatenated into the input of every hidden layer.
#[derive(Clone, Debug)]
pub struct ConditionalEpsMlp {
    data_dim: usize,
    cond_dim: usize,
    time_dim: usize,
    input: Linear,
    blocks: Vec<Linear>,
    output: Linear,
}

impl ConditionalEpsMlp {
    /// Registers parameters under `name` in `store`. `time_dim` must be even.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        data_dim: usize,
        cond_dim: usize,
        hidden: usize,
        blocks: usize,
        time_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if data_dim == 0 || hidden == 0 {
            return Err(invalid("eps network widths must be positive"));
        }
        if time_dim < 2 || !time_dim.is_multiple_of(2) {
            return Err(invalid(format!("time embedding width must be even and >= 2, got {time_dim}")));
        }
        let c = time_dim + cond_dim;
        let input = Linear::new(store, &format!("{name}.in"), data_dim + c, hidden, rng);
        let blocks = (0..blocks)
            .map(|k| Linear::new(store, &format!("{name}.block{k}"), hidden + c, hidden, rng))
            .collect();
        let output = Linear::with_scale(store, &format!("{name}.out"), hidden, data_dim, 0.1, rng);
        Ok(Self { data_dim, cond_dim, time_dim, input, blocks, output })
    }

    pub fn num_params(&self) -> usize {
        self.input.num_params()
            + self.blocks.iter().map(Linear::num_params).sum::<usize>()
            + self.output.num_params()
    }
}

impl EpsNetwork for ConditionalEpsMlp {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamStore,
        x_t: Var<'t>,
        z: Option<Var<'t>>,
        times: &[f64],
    ) -> Var<'t> {
        assert_eq!(x_t.rows(), times.len(), "one time per row");
        let temb = tape.constant(sinusoidal_embedding(times, self.time_dim));
        let cond = match (z, self.cond_dim) {
            (Some(z), d) if d > 0 => {
                assert_eq!(z.shape(), (x_t.rows(), d), "conditioning latent shape");
                concat_cols(&[temb, z])
            }
            (None, 0) => temb,
            _ => panic!("conditioning latent presence must match cond_dim = {}", self.cond_dim),
        };
        let mut h = self.input.forward(tape, params, concat_cols(&[x_t, cond])).silu();
        for block in &self.blocks {
            h = h + block.forward(tape, params, concat_cols(&[h, cond])).silu();
        }
        self.output.forward(tape, params, h)
    }
}

fn check_rows(x0: &Array2<f64>, eps: &Array2<f64>, t: &[Timestep]) -> Result<()> {
    if x0.dim() != eps.dim() {
        return Err(invalid(format!("x0 has shape {:?} but eps has {:?}", x0.dim(), eps.dim())));
    }
    if t.len() != x0.nrows() {
        return Err(invalid(format!("{} timesteps for {} rows", t.len(), x0.nrows())));
    }
    Ok(())
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`, row by row.
pub fn forward_marginal(
    x0: &Array2<f64>,
    t: &[Timestep],
    eps: &Array2<f64>,
    s: &NoiseSchedule,
) -> Result<Array2<f64>> {
    check_rows(x0, eps, t)?;
    let mut out = Array2::zeros(x0.dim());
    for (r, &tr) in t.iter().enumerate() {
        let ab = s.alpha_bar(tr)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for c in 0..x0.ncols() {
            out[[r, c]] = a * x0[[r, c]] + b * eps[[r, c]];
        }
    }
    Ok(out)
}

fn predict_on_tape<'t, N: EpsNetwork + ?Sized>(
    net: &N,
    tape: &'t Tape,
    params: &ParamStore,
    x0: &Array2<f64>,
    z: Option<Var<'t>>,
    t: &[Timestep],
    eps: &Array2<f64>,
    s: &NoiseSchedule,
) -> Result<Var<'t>> {
    let x_t = forward_marginal(x0, t, eps, s)?;
    if x_t.ncols() != net.data_dim() {
        return Err(invalid(format!("data width {} but network expects {}", x_t.ncols(), net.data_dim())));
    }
    if let Some(z) = z {
        if z.rows() != x0.nrows() || z.cols() != net.cond_dim() {
            return Err(invalid(format!(
                "latent shape {:?} does not match {} rows x {} conditioning dims",
                z.shape(),
                x0.nrows(),
                net.cond_dim()
            )));
        }
    } else if net.cond_dim() != 0 {
        return Err(invalid("conditional network called without a latent"));
    }
    let times: Vec<f64> = t.iter().map(|&tr| s.network_time(tr)).collect();
    let x_t = tape.constant(x_t);
    Ok(net.forward(tape, params, x_t, z, &times))
}

/// Mean over elements and batch of `(eps - eps_theta(x_t, z, t))^2`.
pub fn simple_eps_loss<'t, N: EpsNetwork + ?Sized>(
    net: &N,
    tape: &'t Tape,
    params: &ParamStore,
    x0: &Array2<f64>,
    z: Option<Var<'t>>,
    t: &[Timestep],
    eps: &Array2<f64>,
    s: &NoiseSchedule,
) -> Result<Var<'t>> {
    let pred = predict_on_tape(net, tape, params, x0, z, t, eps, s)?;
    Ok((pred - tape.constant(eps.clone())).square().mean())
}

/// Score-matching loss `1/2 lambda(t) |grad log p_t - s_theta|^2` in its
/// eps form `1/2 (lambda(t) / sigma_t^2) |eps - eps_theta|^2`, averaged over
/// elements and batch.
pub fn likelihood_weighted_loss<'t, N: EpsNetwork + ?Sized>(
    net: &N,
    tape: &'t Tape,
    params: &ParamStore,
    x0: &Array2<f64>,
    z: Option<Var<'t>>,
    t: &[Timestep],
    eps: &Array2<f64>,
    s: &NoiseSchedule,
    mode: WeightMode,
) -> Result<Var<'t>> {
    let weights = row_weights(t, s, mode)?;
    let pred = predict_on_tape(net, tape, params, x0, z, t, eps, s)?;
    let per_row = (pred - tape.constant(eps.clone())).square().row_sum().scale(1.0 / x0.ncols() as f64);
    Ok(per_row.mul_col(tape.constant(weights)).mean())
}

/// `1/2 lambda(t_r) / sigma_{t_r}^2` as a `B x 1` column.
fn row_weights(t: &[Timestep], s: &NoiseSchedule, mode: WeightMode) -> Result<Array2<f64>> {
    let mut w = Array2::zeros((t.len(), 1));
    for (r, &tr) in t.iter().enumerate() {
        let sigma = positive_sigma(s, tr)?;
        w[[r, 0]] = 0.5 * lambda_weight(s, tr, mode)? / (sigma * sigma);
    }
    Ok(w)
}

/// `-eps_pred / sigma_t`.
pub fn eps_to_score(eps_pred: &Array2<f64>, t: Timestep, s: &NoiseSchedule) -> Result<Array2<f64>> {
    let sigma = positive_sigma(s, t)?;
    Ok(eps_pred.mapv(|e| -e / sigma))
}

/// `-sigma_t * score`, the inverse of [`eps_to_score`].
pub fn score_to_eps(score: &Array2<f64>, t: Timestep, s: &NoiseSchedule) -> Result<Array2<f64>> {
    let sigma = positive_sigma(s, t)?;
    Ok(score.mapv(|v| -v * sigma))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::Error;
    use diffmvae_nn::ParamId;
    use ndarray::Axis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    /// Returns a fixed array regardless of input.
    pub(crate) struct ConstNet {
        pub out: Array2<f64>,
        pub cond: usize,
    }

    impl EpsNetwork for ConstNet {
        fn data_dim(&self) -> usize {
            self.out.ncols()
        }
        fn cond_dim(&self) -> usize {
            self.cond
        }
        fn forward<'t>(&self, tape: &'t Tape, _: &ParamStore, _: Var<'t>, _: Option<Var<'t>>, _: &[f64]) -> Var<'t> {
            tape.constant(self.out.clone())
        }
    }

    /// Exact eps-predictor for standard-normal data: `eps = sigma_t x_t`.
    pub(crate) struct GaussianOptimal {
        pub schedule: NoiseSchedule,
        pub dim: usize,
    }

    impl EpsNetwork for GaussianOptimal {
        fn data_dim(&self) -> usize {
            self.dim
        }
        fn cond_dim(&self) -> usize {
            0
        }
        fn forward<'t>(&self, tape: &'t Tape, _: &ParamStore, x_t: Var<'t>, _: Option<Var<'t>>, times: &[f64]) -> Var<'t> {
            let sig = Array2::from_shape_fn((times.len(), 1), |(r, _)| {
                let t = self.schedule.timestep_from_network_time(times[r]);
                self.schedule.sigma(t).unwrap()
            });
            x_t.mul_col(tape.constant(sig))
        }
    }

    fn probe_times(s: &NoiseSchedule) -> Vec<Timestep> {
        [0.01, 0.2, 0.5, 0.8, 1.0].iter().map(|&x| s.timestep_from_network_time(x)).collect()
    }

    #[test]
    fn forward_marginal_examples() {
        let s = NoiseSchedule::default_continuous();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = normal(4, 5, &mut rng);
        let eps = normal(4, 5, &mut rng);
        let inf = eps.iter().fold(0.0f64, |m, v| m.max(v.abs()));

        let near0 = forward_marginal(&x0, &[Timestep::Continuous(1e-5); 4], &eps, &s).unwrap();
        assert!((&near0 - &x0).iter().all(|d| d.abs() < 0.02 * inf));

        let near1 = forward_marginal(&x0, &[Timestep::Continuous(1.0); 4], &eps, &s).unwrap();
        assert!((&near1 - &eps).iter().all(|d| d.abs() < 0.01 * (1.0 + inf)));

        let t = Timestep::Continuous(0.37);
        let zero = forward_marginal(&Array2::zeros((4, 5)), &[t; 4], &eps, &s).unwrap();
        assert_eq!(zero, eps.mapv(|e| s.sigma(t).unwrap() * e));

        assert!(forward_marginal(&x0, &[t; 4], &normal(4, 3, &mut rng), &s).is_err());
        assert!(forward_marginal(&x0, &[t; 3], &eps, &s).is_err());
    }

    #[test]
    fn forward_marginal_moments() {
        let n = 100_000;
        for s in [NoiseSchedule::default_continuous(), NoiseSchedule::default_discrete()] {
            for t in probe_times(&s) {
                let mut rng = ChaCha8Rng::seed_from_u64(11);
                let x0 = Array2::from_elem((n, 1), 0.7);
                let eps = normal(n, 1, &mut rng);
                let xt = forward_marginal(&x0, &vec![t; n], &eps, &s).unwrap();
                let ab = s.alpha_bar(t).unwrap();
                let mean = xt.mean().unwrap();
                let var = xt.var_axis(Axis(0), 1.0)[0];
                let want_var = 1.0 - ab;
                let se_mean = (want_var / n as f64).sqrt();
                let se_var = want_var * (2.0 / (n - 1) as f64).sqrt();
                assert!((mean - ab.sqrt() * 0.7).abs() < 4.0 * se_mean, "{t:?}: mean {mean}");
                assert!((var - want_var).abs() < 4.0 * se_var, "{t:?}: var {var} vs {want_var}");
            }
        }
    }

    #[test]
    fn stub_networks_give_known_losses() {
        let s = NoiseSchedule::default_continuous();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x0, eps) = (normal(6, 4, &mut rng), normal(6, 4, &mut rng));
        let t: Vec<_> = (0..6).map(|_| s.sample_timestep(&mut rng)).collect();
        let params = ParamStore::new();

        let exact = ConstNet { out: eps.clone(), cond: 0 };
        let tape = Tape::new();
        assert_eq!(simple_eps_loss(&exact, &tape, &params, &x0, None, &t, &eps, &s).unwrap().item(), 0.0);
        for mode in [WeightMode::Likelihood, WeightMode::Simple] {
            let l = likelihood_weighted_loss(&exact, &tape, &params, &x0, None, &t, &eps, &s, mode).unwrap();
            assert_eq!(l.item(), 0.0);
        }

        let c = 0.3;
        let shifted = ConstNet { out: eps.mapv(|e| e + c), cond: 0 };
        let l = simple_eps_loss(&shifted, &tape, &params, &x0, None, &t, &eps, &s).unwrap().item();
        assert!((l - c * c).abs() < 1e-12);
    }

    #[test]
    fn unit_weight_reduces_to_scaled_simple_loss() {
        let s = NoiseSchedule::default_continuous();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (x0, eps) = (normal(5, 3, &mut rng), normal(5, 3, &mut rng));
        let net = ConstNet { out: normal(5, 3, &mut rng), cond: 0 };
        let params = ParamStore::new();
        let tape = Tape::new();
        for tv in [0.05, 0.4, 0.9] {
            let t = vec![Timestep::Continuous(tv); 5];
            let sigma = s.sigma(t[0]).unwrap();
            let simple = simple_eps_loss(&net, &tape, &params, &x0, None, &t, &eps, &s).unwrap().item();
            let w = likelihood_weighted_loss(&net, &tape, &params, &x0, None, &t, &eps, &s, WeightMode::Simple)
                .unwrap()
                .item();
            assert!((w - 0.5 * simple / (sigma * sigma)).abs() < 1e-12 * w.max(1.0));
        }
    }

    #[test]
    fn score_space_evaluation_matches_eps_form() {
        let s = NoiseSchedule::default_continuous();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (b, d) = (8, 5);
        let (x0, eps) = (normal(b, d, &mut rng), normal(b, d, &mut rng));
        let pred = normal(b, d, &mut rng);
        let t: Vec<_> = (0..b).map(|_| s.sample_timestep(&mut rng)).collect();
        let net = ConstNet { out: pred.clone(), cond: 0 };
        let tape = Tape::new();
        let got = likelihood_weighted_loss(&net, &tape, &ParamStore::new(), &x0, None, &t, &eps, &s, WeightMode::Likelihood)
            .unwrap()
            .item();

        let mut total = 0.0;
        for r in 0..b {
            let sigma = s.sigma(t[r]).unwrap();
            let lambda = s.beta(t[r]).unwrap();
            let mut sq = 0.0;
            for c in 0..d {
                let target = -eps[[r, c]] / sigma;
                let model = -pred[[r, c]] / sigma;
                sq += (target - model).powi(2);
            }
            total += 0.5 * lambda * sq / d as f64;
        }
        let want = total / b as f64;
        assert!((got - want).abs() < 1e-10 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn zero_sigma_is_a_domain_error() {
        let s = NoiseSchedule::default_continuous();
        let x = Array2::zeros((1, 2));
        let net = ConstNet { out: x.clone(), cond: 0 };
        let tape = Tape::new();
        let t = [Timestep::Continuous(0.0)];
        let err = likelihood_weighted_loss(&net, &tape, &ParamStore::new(), &x, None, &t, &x, &s, WeightMode::Likelihood);
        assert!(matches!(err, Err(Error::Domain(_))));
        assert!(matches!(eps_to_score(&x, t[0], &s), Err(Error::Domain(_))));
    }

    #[test]
    fn score_conversion_examples() {
        let s = NoiseSchedule::default_continuous();
        let t = Timestep::Continuous(0.6);
        assert_eq!(eps_to_score(&Array2::zeros((2, 2)), t, &s).unwrap(), Array2::<f64>::zeros((2, 2)));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let e = normal(3, 4, &mut rng);
        let end = eps_to_score(&e, Timestep::Continuous(1.0), &s).unwrap();
        assert!((&end + &e).iter().all(|v| v.abs() < 1e-3 * (1.0 + e.iter().fold(0.0f64, |m, x| m.max(x.abs())))));
        let score = normal(3, 4, &mut rng);
        let back = eps_to_score(&score_to_eps(&score, t, &s).unwrap(), t, &s).unwrap();
        assert!((&back - &score).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn analytic_score_reaches_its_minimum() {
        let s = NoiseSchedule::default_continuous();
        let net = GaussianOptimal { schedule: s.clone(), dim: 1 };
        let n = 10_000;
        for tv in [0.1, 0.5, 0.9] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let t = Timestep::Continuous(tv);
            let x0 = normal(n, 1, &mut rng);
            let eps = normal(n, 1, &mut rng);
            let times = vec![t; n];
            let xt = forward_marginal(&x0, &times, &eps, &s).unwrap();
            let pred = net.predict(&ParamStore::new(), &xt, None, &vec![tv; n]);
            let ab = s.alpha_bar(t).unwrap();
            let sigma = s.sigma(t).unwrap();
            let w = 0.5 * s.beta(t).unwrap() / (sigma * sigma);
            let per: Vec<f64> = (0..n).map(|r| w * (eps[[r, 0]] - pred[[r, 0]]).powi(2)).collect();
            let mean = per.iter().sum::<f64>() / n as f64;
            let sd = (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            // E[(eps - sigma x_t)^2] = alpha_bar for standard-normal data.
            let minimum = w * ab;
            assert!((mean - minimum).abs() < 2.0 * sd / (n as f64).sqrt(), "t={tv}: {mean} vs {minimum}");

            let tape = Tape::new();
            let l = likelihood_weighted_loss(&net, &tape, &ParamStore::new(), &x0, None, &times, &eps, &s, WeightMode::Likelihood)
                .unwrap()
                .item();
            assert!((l - mean).abs() < 1e-12 * mean);
        }
    }

    fn toy_net(store: &mut ParamStore) -> ConditionalEpsMlp {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = ConditionalEpsMlp::new(store, "dec", 3, 2, 6, 1, 4, &mut rng).unwrap();
        // Larger output weights so gradients are not dominated by rounding.
        let out = store.id("dec.out.weight").unwrap();
        store.get_mut(out).mapv_inplace(|w| w * 10.0);
        net
    }

    fn loss_value(
        net: &ConditionalEpsMlp,
        params: &ParamStore,
        x0: &Array2<f64>,
        z: &Array2<f64>,
        t: &[Timestep],
        eps: &Array2<f64>,
        s: &NoiseSchedule,
        weighted: bool,
    ) -> f64 {
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let l = if weighted {
            likelihood_weighted_loss(net, &tape, params, x0, Some(zv), t, eps, s, WeightMode::Likelihood)
        } else {
            simple_eps_loss(net, &tape, params, x0, Some(zv), t, eps, s)
        };
        l.unwrap().item()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut params = ParamStore::new();
        let net = toy_net(&mut params);
        assert!(net.num_params() <= 200);
        let s = NoiseSchedule::default_continuous();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x0, eps, z) = (normal(4, 3, &mut rng), normal(4, 3, &mut rng), normal(4, 2, &mut rng));
        let t: Vec<_> = [0.1, 0.35, 0.6, 0.95].iter().map(|&v| Timestep::Continuous(v)).collect();
        let h = 1e-6;

        for weighted in [false, true] {
            let tape = Tape::new();
            let zv = tape.var(z.clone());
            let l = if weighted {
                likelihood_weighted_loss(&net, &tape, &params, &x0, Some(zv), &t, &eps, &s, WeightMode::Likelihood)
            } else {
                simple_eps_loss(&net, &tape, &params, &x0, Some(zv), &t, &eps, &s)
            }
            .unwrap();
            let grads = tape.backward(l);

            let gz = grads.wrt(zv).unwrap().clone();
            for (idx, &g) in gz.indexed_iter() {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[idx] += h;
                zm[idx] -= h;
                let fd = (loss_value(&net, &params, &x0, &zp, &t, &eps, &s, weighted)
                    - loss_value(&net, &params, &x0, &zm, &t, &eps, &s, weighted))
                    / (2.0 * h);
                assert!(rel_err(g, fd) < 1e-4, "dz{idx:?}: {g} vs {fd}");
            }

            let ids: Vec<ParamId> = params.ids().collect();
            for id in ids {
                let g = grads.param(id).unwrap().clone();
                for (idx, &gv) in g.indexed_iter() {
                    let orig = params.get(id)[idx];
                    params.get_mut(id)[idx] = orig + h;
                    let lp = loss_value(&net, &params, &x0, &z, &t, &eps, &s, weighted);
                    params.get_mut(id)[idx] = orig - h;
                    let lm = loss_value(&net, &params, &x0, &z, &t, &eps, &s, weighted);
                    params.get_mut(id)[idx] = orig;
                    let fd = (lp - lm) / (2.0 * h);
                    assert!(rel_err(gv, fd) < 1e-4, "{}{idx:?}: {gv} vs {fd}", params.name(id));
                }
            }
        }
    }

    #[test]
    fn network_shape_and_conditioning_checks() {
        let mut params = ParamStore::new();
        let net = toy_net(&mut params);
        let s = NoiseSchedule::default_continuous();
        let x = Array2::zeros((2, 3));
        let t = [Timestep::Continuous(0.5); 2];
        let tape = Tape::new();
        assert!(simple_eps_loss(&net, &tape, &params, &x, None, &t, &x, &s).is_err());
        let bad_z = tape.constant(Array2::zeros((2, 5)));
        assert!(simple_eps_loss(&net, &tape, &params, &x, Some(bad_z), &t, &x, &s).is_err());
        let wide = Array2::zeros((2, 4));
        let z = tape.constant(Array2::zeros((2, 2)));
        assert!(simple_eps_loss(&net, &tape, &params, &wide, Some(z), &t, &wide, &s).is_err());
        let out = net.predict(&params, &x, Some(&Array2::zeros((2, 2))), &[0.5, 0.5]);
        assert_eq!(out.dim(), (2, 3));
        assert!(ConditionalEpsMlp::new(&mut ParamStore::new(), "x", 3, 0, 4, 0, 3, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
