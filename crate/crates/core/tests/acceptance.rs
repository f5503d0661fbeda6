//! Acceptance run: prints one PASS/FAIL line per criterion.
//!
//! Criteria 6 to 8 train full models on the synthetic PolyMNIST-like data
//! and take most of an hour on one core. The process exits successfully
//! whether or not every criterion passes; the printed lines are the result.
//! Pass `--skip-training` to report criteria 6 to 8 as skipped.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use diffmvae::aux_prior::{collect_posterior_latents, train_aux_prior, AuxPrior, AuxPriorConfig};
use diffmvae::cli_persistence::{cli_main, load_checkpoint, save_checkpoint, Checkpoint, NamedArray, RngState};
use diffmvae::data_synth::{make_polymnist_like, train_probe_classifier, MultimodalDataset, ProbeClassifier, ProbeConfig};
use diffmvae::diffusion_decoder::{likelihood_weighted_loss, simple_eps_loss, ConditionalEpsMlp};
use diffmvae::evaluation::{
    coherence_accuracy, coherence_from_labels, f1_sample_average, frechet_feature_distance, frechet_gaussian_distance,
    CoherenceReference,
};
use diffmvae::gaussian_latent::{kl_divergence, product_of_experts, DiagonalGaussian, LOG_VAR_MAX, LOG_VAR_MIN};
use diffmvae::generation::{conditional_generate, unconditional_generate, SamplerConfig};
use diffmvae::multimodal_model::{
    mixture_elbo_gap, ArchConfig, DecoderKind, DiffMvae, Likelihood, LrSchedule, ModalitySpec, ModelConfig,
    SubsetStrategy, Trainer,
};
use diffmvae::noise_schedule::{NoiseSchedule, Timestep, WeightMode};
use diffmvae::sampling::{ddim_sample, standard_normal, Denoiser, EulerMaruyama};
use diffmvae::Error;
use diffmvae_nn::{ParamId, ParamStore, Tape};
use ndarray::{arr1, arr2, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one criterion: pass flag and a one-line detail.
type Outcome = (bool, String);

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("PoE/KL closed forms vs quadrature oracles", criterion_1),
        ("finite-difference gradient suite", criterion_2),
        ("single-modality bound equals a standard VAE", criterion_3),
        ("mixture-vs-subset bound gap is nonnegative", criterion_4),
        ("samplers reproduce N(0, I) from the exact score", criterion_5),
        ("end-to-end coherence, models 6-8", criteria_6_to_8_placeholder),
        ("determinism and checkpoint persistence", criterion_9),
        ("metric examples", criterion_10),
    ];
    let skip_training = std::env::args().any(|a| a == "--skip-training");
    let mut passed = 0;
    let mut total = 0;
    for (name, run) in criteria {
        if name.starts_with("end-to-end") {
            if skip_training {
                for idx in 6..=8 {
                    println!("criterion {idx:>2} SKIP training criteria not requested");
                }
                total += 3;
                continue;
            }
            let outcomes = match std::panic::catch_unwind(criteria_6_to_8) {
                Ok(outcomes) => outcomes,
                Err(_) => vec![(false, "training run panicked".to_string()); 3],
            };
            for (k, (ok, detail)) in outcomes.into_iter().enumerate() {
                report(6 + k, ok, &detail);
                total += 1;
                passed += ok as usize;
            }
            continue;
        }
        let idx = total + 1;
        let start = Instant::now();
        let (ok, detail) = match std::panic::catch_unwind(run) {
            Ok(outcome) => outcome,
            Err(_) => (false, "check panicked".to_string()),
        };
        report(idx, ok, &format!("{name}: {detail} [{:.1?}]", start.elapsed()));
        total += 1;
        passed += ok as usize;
    }
    println!("acceptance: {passed}/{total} criteria pass");
}

fn report(idx: usize, ok: bool, detail: &str) {
    println!("criterion {idx:>2} {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn criteria_6_to_8_placeholder() -> Outcome {
    unreachable!("criteria 6 to 8 are dispatched together")
}

// ---------------------------------------------------------------------------
// Criterion 1: closed-form PoE and KL against quadrature on a fine grid.

/// Normalized moments of the pointwise product of 1-D Gaussian densities.
fn grid_product_moments(parts: &[(f64, f64)]) -> (f64, f64) {
    let lo = parts.iter().map(|(m, v)| m - 14.0 * v.sqrt()).fold(f64::INFINITY, f64::min);
    let hi = parts.iter().map(|(m, v)| m + 14.0 * v.sqrt()).fold(f64::NEG_INFINITY, f64::max);
    let n = 200_001;
    let h = (hi - lo) / (n - 1) as f64;
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let x = lo + i as f64 * h;
        let w = parts.iter().map(|(m, v)| -0.5 * (x - m).powi(2) / v).sum::<f64>().exp();
        z += w;
        s1 += w * x;
        s2 += w * x * x;
    }
    let mean = s1 / z;
    (mean, s2 / z - mean * mean)
}

/// `int q log(q / p)` by the trapezoid rule over `q`'s effective support.
fn quadrature_kl(mq: f64, vq: f64, mp: f64, vp: f64) -> f64 {
    let ln_n = |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + (2.0 * PI * v).ln());
    let (lo, hi) = (mq - 16.0 * vq.sqrt(), mq + 16.0 * vq.sqrt());
    let n = 200_001;
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let x = lo + i as f64 * h;
            let lq = ln_n(x, mq, vq);
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            w * lq.exp() * (lq - ln_n(x, mp, vp))
        })
        .sum::<f64>()
        * h
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(2..=4);
        let parts: Vec<(f64, f64)> =
            (0..k).map(|_| (rng.random_range(-3.0..3.0), rng.random_range(0.1f64..3.0))).collect();
        let experts: Vec<DiagonalGaussian> =
            parts.iter().map(|&(m, v)| DiagonalGaussian::from_mean_var(vec![m], vec![v]).unwrap()).collect();
        let fused = product_of_experts(&experts, false).unwrap();
        let (gm, gv) = grid_product_moments(&parts);
        worst = worst.max((fused.mean()[0] - gm).abs()).max((fused.variance()[0] - gv).abs());

        let (mq, vq) = parts[0];
        let (mp, vp) = parts[1];
        let kl = kl_divergence(&experts[0], &experts[1]).unwrap();
        worst = worst.max((kl - quadrature_kl(mq, vq, mp, vp)).abs());
    }
    (worst < 1e-6, format!("max abs error {worst:.2e} over 100 instances (tol 1e-6)"))
}

// ---------------------------------------------------------------------------
// Criterion 2: analytic gradients against central differences.

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error over all parameters of `store` between the tape
/// gradient and a central difference of `eval`.
fn worst_param_error(store: &mut ParamStore, grads: &BTreeMap<ParamId, Array2<f64>>, eval: &dyn Fn(&ParamStore) -> f64) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (&id, g) in grads {
        for (idx, &gv) in g.indexed_iter() {
            let orig = store.get(id)[idx];
            store.get_mut(id)[idx] = orig + h;
            let lp = eval(store);
            store.get_mut(id)[idx] = orig - h;
            let lm = eval(store);
            store.get_mut(id)[idx] = orig;
            worst = worst.max(rel_err(gv, (lp - lm) / (2.0 * h)));
        }
    }
    worst
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut details = Vec::new();
    let mut worst_all = 0.0f64;

    // Diffusion losses on a toy conditional eps-network.
    let mut params = ParamStore::new();
    let net = ConditionalEpsMlp::new(&mut params, "toy", 3, 2, 6, 1, 4, &mut rng).unwrap();
    let n_params = params.num_scalars();
    let x0 = standard_normal(4, 3, &mut rng);
    let eps = standard_normal(4, 3, &mut rng);
    let z = standard_normal(4, 2, &mut rng);
    let s = NoiseSchedule::default_continuous();
    let t: Vec<Timestep> = [0.1, 0.35, 0.6, 0.95].iter().map(|&v| Timestep::Continuous(v)).collect();
    for weighted in [false, true] {
        let eval = |p: &ParamStore| {
            let tape = Tape::new();
            let zv = tape.constant(z.clone());
            let l = if weighted {
                likelihood_weighted_loss(&net, &tape, p, &x0, Some(zv), &t, &eps, &s, WeightMode::Likelihood)
            } else {
                simple_eps_loss(&net, &tape, p, &x0, Some(zv), &t, &eps, &s)
            };
            l.unwrap().item()
        };
        let tape = Tape::new();
        let zv = tape.constant(z.clone());
        let l = if weighted {
            likelihood_weighted_loss(&net, &tape, &params, &x0, Some(zv), &t, &eps, &s, WeightMode::Likelihood)
        } else {
            simple_eps_loss(&net, &tape, &params, &x0, Some(zv), &t, &eps, &s)
        }
        .unwrap();
        let g = tape.backward(l);
        let grads: BTreeMap<ParamId, Array2<f64>> = params.ids().map(|id| (id, g.param(id).unwrap().clone())).collect();
        let w = worst_param_error(&mut params, &grads, &eval);
        worst_all = worst_all.max(w);
        details.push(format!("{} {w:.1e}", if weighted { "likelihood" } else { "simple" }));
    }

    // Full bound on a tiny model with all three decoder types.
    let specs = vec![
        ModalitySpec::feed_forward("bits", vec![3], Likelihood::Bernoulli),
        ModalitySpec::feed_forward("label", vec![3], Likelihood::Categorical),
        ModalitySpec::diffusion("img", vec![2]),
    ];
    let cfg = ModelConfig {
        kl_weight: 0.5,
        arch: ArchConfig { encoder_hidden: vec![3], decoder_hidden: vec![3], eps_hidden: 4, eps_blocks: 1, time_dim: 2 },
        ..ModelConfig::diff_mvae(2)
    };
    let mut model = DiffMvae::new(cfg, specs, &mut rng).unwrap();
    let elbo_params = model.params().num_scalars();
    let mut one_hot = Array2::zeros((4, 3));
    for r in 0..4 {
        one_hot[[r, rng.random_range(0..3)]] = 1.0;
    }
    let data = vec![
        Array2::from_shape_fn((4, 3), |_| rng.random_range(0.0..1.0)),
        one_hot,
        Array2::from_shape_fn((4, 2), |_| rng.random_range(0.0..1.0)),
    ];
    let tape = Tape::new();
    let (loss, _) = model.elbo_loss(&tape, &data, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let g = tape.backward(loss);
    let grads: BTreeMap<ParamId, Array2<f64>> =
        model.params().ids().map(|id| (id, g.param(id).unwrap().clone())).collect();
    let skeleton = model.params().clone();
    let mut store = skeleton.clone();
    let eval = |p: &ParamStore| {
        let mut m = DiffMvae::new(model.config().clone(), model.specs(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        *m.params_mut() = p.clone();
        let tape = Tape::new();
        m.elbo_loss(&tape, &data, &mut ChaCha8Rng::seed_from_u64(10)).unwrap().0.item()
    };
    let w = worst_param_error(&mut store, &grads, &eval);
    *model.params_mut() = skeleton;
    worst_all = worst_all.max(w);
    details.push(format!("elbo {w:.1e}"));

    let elapsed = start.elapsed();
    let ok = worst_all < 1e-4 && n_params <= 500 && elbo_params <= 500 && elapsed < Duration::from_secs(60);
    (ok, format!("max rel error {worst_all:.1e} ({}) with {n_params}/{elbo_params} params (tol 1e-4, < 60 s)", details.join(", ")))
}

// ---------------------------------------------------------------------------
// Criterion 3: M = 1, feed-forward, kl_weight = 1 against a hand-coded VAE.

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn ref_mlp(params: &ParamStore, name: &str, x: &Array2<f64>) -> Array2<f64> {
    let mut h = x.clone();
    let mut k = 0;
    while let Some(w) = params.id(&format!("{name}.{k}.weight")) {
        let b = params.id(&format!("{name}.{k}.bias")).unwrap();
        h = h.dot(params.get(w)) + params.get(b);
        k += 1;
        if params.id(&format!("{name}.{k}.weight")).is_some() {
            h.mapv_inplace(silu);
        }
    }
    h
}

/// Negative ELBO of a one-modality VAE, coded directly: Bernoulli NLL
/// averaged over elements plus the KL summed over latent dimensions and
/// averaged over records.
fn reference_vae(params: &ParamStore, x: &Array2<f64>, d: usize, seed: u64) -> f64 {
    let (b, n) = x.dim();
    let out = ref_mlp(params, "m0.enc", x);
    let mean = out.slice(ndarray::s![.., ..d]).to_owned();
    let lv = out.slice(ndarray::s![.., d..]).mapv(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Array2::from_shape_fn((b, d), |_| rng.sample::<f64, _>(StandardNormal));
    let z = &mean + &(lv.mapv(|v| (0.5 * v).exp()) * noise);
    let logits = ref_mlp(params, "m0.dec", &z);
    let mut nll = 0.0;
    for r in 0..b {
        for c in 0..n {
            let l = logits[[r, c]];
            nll += x[[r, c]] * softplus(-l) + (1.0 - x[[r, c]]) * softplus(l);
        }
    }
    let mut kl = 0.0;
    for r in 0..b {
        for c in 0..d {
            kl += 0.5 * (lv[[r, c]].exp() + mean[[r, c]].powi(2) - 1.0 - lv[[r, c]]);
        }
    }
    nll / (b * n) as f64 + kl / b as f64
}

fn criterion_3() -> Outcome {
    let d = 2;
    let spec = ModalitySpec::feed_forward("x", vec![6], Likelihood::Bernoulli);
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let cfg = ModelConfig {
            kl_weight: 1.0,
            arch: ArchConfig { encoder_hidden: vec![5], decoder_hidden: vec![4], eps_hidden: 4, eps_blocks: 1, time_dim: 2 },
            ..ModelConfig::diff_mvae(d)
        };
        let model = DiffMvae::new(cfg, vec![spec.clone()], &mut rng).unwrap();
        let x = Array2::from_shape_fn((7, 6), |_| rng.random_range(0.0..1.0));
        let tape = Tape::new();
        let (loss, bd) = model.elbo_loss(&tape, std::slice::from_ref(&x), &mut ChaCha8Rng::seed_from_u64(trial)).unwrap();
        if bd.subsets.len() != 1 {
            return (false, format!("expected one subset, got {}", bd.subsets.len()));
        }
        worst = worst.max((loss.item() - reference_vae(model.params(), &x, d, trial)).abs());
    }
    (worst < 1e-10, format!("max abs difference {worst:.1e} over 50 draws (tol 1e-10)"))
}

// ---------------------------------------------------------------------------
// Criterion 4: mixture bound minus subset-sum bound is nonnegative.

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_z = f64::INFINITY;
    for _ in 0..10 {
        let x1: f64 = rng.random_range(-2.0..2.0);
        let x2: f64 = rng.random_range(-2.0..2.0);
        let s1: f64 = rng.random_range(0.3..2.0);
        let s2: f64 = rng.random_range(0.3..2.0);
        let mut q = || {
            DiagonalGaussian::from_mean_var(vec![rng.random_range(-1.0..1.0)], vec![rng.random_range(0.2..1.5)]).unwrap()
        };
        let (q1, q2) = (q(), q());
        let q12 = product_of_experts(&[q1.clone(), q2.clone()], false).unwrap();
        let log_joint = |z: &[f64]| {
            let ln = |x: f64, m: f64, v: f64| -0.5 * ((x - m).powi(2) / v + (2.0 * PI * v).ln());
            ln(z[0], 0.0, 1.0) + ln(x1, z[0], s1) + ln(x2, z[0], s2)
        };
        let est = mixture_elbo_gap(&[q1, q2, q12], &[1.0 / 3.0; 3], log_joint, 50_000, &mut rng).unwrap();
        worst_z = worst_z.min(est.gap / est.std_err.max(1e-300));
    }
    (worst_z > -3.0, format!("smallest gap / SE over 10 instances = {worst_z:.2} (must exceed -3)"))
}

// ---------------------------------------------------------------------------
// Criterion 5: samplers driven by the analytic score of N(0, I).

struct StandardNormalDenoiser<'a> {
    schedule: &'a NoiseSchedule,
    dim: usize,
}

impl Denoiser for StandardNormalDenoiser<'_> {
    fn data_dim(&self) -> usize {
        self.dim
    }

    fn predict_eps(&self, x_t: &Array2<f64>, times: &[f64]) -> Array2<f64> {
        let mut eps = x_t.clone();
        for (mut row, &tau) in eps.rows_mut().into_iter().zip(times) {
            row *= self.schedule.sigma(self.schedule.timestep_from_network_time(tau)).unwrap();
        }
        eps
    }
}

fn moments_ok(x: &Array2<f64>) -> (bool, String) {
    let mean = x.mean_axis(Axis(0)).unwrap();
    let var = x.var_axis(Axis(0), 1.0);
    let ok = mean.iter().all(|m| m.abs() < 0.04) && var.iter().all(|v| (0.95..=1.05).contains(v));
    let fmt = |a: &Array1<f64>| a.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(",");
    (ok, format!("mean [{}] var [{}]", fmt(&mean), fmt(&var)))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let continuous = NoiseSchedule::default_continuous();
    let em = EulerMaruyama::new(1000).sample(&continuous, standard_normal(n, 2, &mut rng), |x, _| Ok(-x), &mut rng).unwrap();
    let (em_ok, em_detail) = moments_ok(&em);
    let discrete = NoiseSchedule::default_discrete();
    let den = StandardNormalDenoiser { schedule: &discrete, dim: 2 };
    let ddim = ddim_sample(&den, &discrete, 50, standard_normal(n, 2, &mut rng)).unwrap();
    let (ddim_ok, ddim_detail) = moments_ok(&ddim);
    let elapsed = start.elapsed();
    let ok = em_ok && ddim_ok && elapsed < Duration::from_secs(120);
    (
        ok,
        format!(
            "EM-1000 {} {em_detail}; DDIM-50 {} {ddim_detail} (|mean| < 0.04, var in [0.95, 1.05])",
            if em_ok { "ok" } else { "out of tolerance" },
            if ddim_ok { "ok" } else { "out of tolerance" },
        ),
    )
}

// ---------------------------------------------------------------------------
// Criteria 6 to 8: trained models on the PolyMNIST-like data.

const DATA_N: usize = 20_000;
const TRAIN_N: usize = 18_000;
const EVAL_N: usize = 500;
const TRAIN_BUDGET: Duration = Duration::from_secs(15 * 60);
const SEEDS: [u64; 3] = [0, 1, 2];

fn acceptance_model_config() -> ModelConfig {
    ModelConfig {
        subset_strategy: SubsetStrategy::Sampled { k: 1 },
        arch: ArchConfig { encoder_hidden: vec![512], decoder_hidden: vec![512], eps_hidden: 512, eps_blocks: 2, time_dim: 32 },
        ..ModelConfig::diff_mvae_star(16)
    }
}

/// Optimizer steps per model; chosen so one training run stays inside the
/// 15-minute budget on one laptop core.
fn steps_for(modalities: usize) -> usize {
    match modalities {
        2 => 8500,
        _ => 5000,
    }
}

struct TrainedModel {
    model: DiffMvae,
    train_time: Duration,
}

fn train(train: &MultimodalDataset, seed: u64) -> TrainedModel {
    let steps = steps_for(train.num_modalities());
    let specs = train.specs(|_| DecoderKind::Diffusion);
    let model = DiffMvae::new(acceptance_model_config(), specs, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut trainer = Trainer::new(model, 1e-3, seed).with_lr_schedule(LrSchedule::Cosine { total_steps: steps as u64 });
    let start = Instant::now();
    trainer.fit(&train.data, 128, steps, |_| {}).unwrap();
    TrainedModel { model: trainer.into_model(), train_time: start.elapsed() }
}

fn fit_prior(model: &DiffMvae, train: &MultimodalDataset, seed: u64) -> AuxPrior {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let cfg = AuxPriorConfig::default();
    let latents = collect_posterior_latents(model, &train.data, cfg.num_latents, &mut rng).unwrap();
    let mut prior = AuxPrior::new(model.latent_dim(), cfg, &mut rng).unwrap();
    let steps = prior.config().train_steps;
    train_aux_prior(&mut prior, &latents, steps, &mut rng).unwrap();
    prior
}

fn probes_for(train: &MultimodalDataset) -> BTreeMap<String, ProbeClassifier> {
    train
        .names
        .iter()
        .map(|name| (name.clone(), train_probe_classifier(train, name, &ProbeConfig::default()).unwrap()))
        .collect()
}

/// Mean over targets of the coherence of each modality generated from all
/// the others.
fn conditional_coherence(model: &DiffMvae, eval: &MultimodalDataset, probes: &BTreeMap<String, ProbeClassifier>, seed: u64) -> f64 {
    let m = model.num_modalities();
    let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
    let scores: Vec<f64> = (0..m)
        .map(|target| {
            let observed: Vec<Option<&Array2<f64>>> = (0..m).map(|i| (i != target).then(|| &eval.data[i])).collect();
            let out = conditional_generate(model, &observed, &[target], &SamplerConfig::ddim(50), &mut rng).unwrap();
            coherence_accuracy(&out, probes, CoherenceReference::Conditioning(&eval.labels)).unwrap()
        })
        .collect();
    scores.iter().sum::<f64>() / m as f64
}

struct Unconditional {
    coherence: f64,
    /// Fréchet feature distance averaged over modalities.
    frechet: f64,
}

fn unconditional(
    model: &DiffMvae,
    aux: Option<&AuxPrior>,
    held_out: &MultimodalDataset,
    probes: &BTreeMap<String, ProbeClassifier>,
    seed: u64,
) -> Unconditional {
    let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
    let out = unconditional_generate(model, aux, EVAL_N, &SamplerConfig::ddim(50), &mut rng).unwrap();
    let coherence = coherence_accuracy(&out, probes, CoherenceReference::Mutual).unwrap();
    let frechet = held_out
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| frechet_feature_distance(&probes[name], &held_out.data[i], &out[name]).unwrap())
        .sum::<f64>()
        / held_out.num_modalities() as f64;
    Unconditional { coherence, frechet }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s[s.len() / 2]
}

struct Evaluated {
    conditional: f64,
    standard: Unconditional,
    aux: Unconditional,
    train_time: Duration,
}

fn train_and_evaluate(modalities: usize, seed: u64) -> Evaluated {
    let data = make_polymnist_like(DATA_N, modalities, 0).unwrap();
    let (train_set, held_out) = data.split(TRAIN_N);
    let probes = probes_for(&train_set);
    let trained = train(&train_set, seed);
    let eval = held_out.select(&(0..EVAL_N).collect::<Vec<_>>());
    let prior = fit_prior(&trained.model, &train_set, seed);
    let result = Evaluated {
        conditional: conditional_coherence(&trained.model, &eval, &probes, seed),
        standard: unconditional(&trained.model, None, &held_out, &probes, seed),
        aux: unconditional(&trained.model, Some(&prior), &held_out, &probes, seed),
        train_time: trained.train_time,
    };
    eprintln!(
        "M={modalities} seed {seed}: train {:.0?}, conditional {:.3}, unconditional N(0,I) {:.3} / aux {:.3}, \
         Fréchet N(0,I) {:.2} / aux {:.2}",
        result.train_time, result.conditional, result.standard.coherence, result.aux.coherence, result.standard.frechet,
        result.aux.frechet
    );
    result
}

fn criteria_6_to_8() -> Vec<Outcome> {
    let runs: Vec<Evaluated> = SEEDS.iter().map(|&s| train_and_evaluate(2, s)).collect();
    let slowest = runs.iter().map(|r| r.train_time).max().unwrap();
    let cond = median(&runs.iter().map(|r| r.conditional).collect::<Vec<_>>());
    let unc = median(&runs.iter().map(|r| r.aux.coherence).collect::<Vec<_>>());
    let c6 = (
        cond >= 0.80 && unc >= 0.60 && slowest <= TRAIN_BUDGET,
        format!(
            "end-to-end coherence (M=2, median of 3 seeds): conditional {cond:.3} (>= 0.80), unconditional with aux prior \
             {unc:.3} (>= 0.60), slowest training {slowest:.0?} (<= 15 min)"
        ),
    );

    let reductions: Vec<f64> = runs.iter().map(|r| 1.0 - r.aux.frechet / r.standard.frechet).collect();
    let reduction = median(&reductions);
    let std_fd = median(&runs.iter().map(|r| r.standard.frechet).collect::<Vec<_>>());
    let aux_fd = median(&runs.iter().map(|r| r.aux.frechet).collect::<Vec<_>>());
    let c7 = (
        reduction >= 0.20,
        format!(
            "aux prior vs N(0, I) Fréchet feature distance: {std_fd:.2} -> {aux_fd:.2}, median reduction {:.1}% (>= 20%)",
            100.0 * reduction
        ),
    );

    let four = train_and_evaluate(4, SEEDS[0]);
    let drop = 1.0 - four.aux.coherence / unc;
    let c8 = (
        drop < 0.15 && four.train_time <= TRAIN_BUDGET,
        format!(
            "modality scaling: unconditional coherence M=2 {unc:.3} vs M=4 {:.3}, relative drop {:.1}% (< 15%), \
             M=4 training {:.0?}",
            four.aux.coherence,
            100.0 * drop,
            four.train_time
        ),
    );
    vec![c6, c7, c8]
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism and persistence.

const TINY_CONFIG: &str = r#"
seed = 5

[data]
n = 2500
train = 2000

[model]
latent_dim = 4

[model.arch]
encoder_hidden = [16]
decoder_hidden = [16]
eps_hidden = 16
eps_blocks = 1
time_dim = 8

[train]
steps = 30
batch_size = 32
log_every = 10

[aux]
hidden = 16
num_latents = 500
train_steps = 30

[sampler]
steps = 10

"#;

fn cli(args: &[&str]) -> i32 {
    cli_main(std::iter::once("diffmvae").chain(args.iter().copied()))
}

/// `synth -> train -> train-aux -> sample (both modes) -> eval` in `dir`.
fn pipeline(dir: &Path, config: &Path) -> Result<(), String> {
    let p = |x: &Path| x.to_str().unwrap().to_string();
    let (cfg, run) = (p(config), p(dir));
    let ckpt = p(&dir.join("checkpoint.bin"));
    let uncond = p(&dir.join("uncond"));
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--config", &cfg, "--out", &run],
        vec!["train", "--config", &cfg, "--run-dir", &run],
        vec!["train-aux", "--run-dir", &run],
        vec!["sample", "--checkpoint", &ckpt, "--given", "m0", "--n", "70", "--seed", "3"],
        vec!["eval", "--run-dir", &run],
        vec!["sample", "--checkpoint", &ckpt, "--unconditional", "--use-aux-prior", "--n", "70", "--out", &uncond],
        vec!["eval", "--run-dir", &run, "--samples", &uncond],
    ];
    for args in steps {
        let code = cli(&args);
        if code != 0 {
            return Err(format!("`{}` exited with {code}", args.join(" ")));
        }
    }
    Ok(())
}

/// Every file under `dir`, relative path to bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().display().to_string(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY_CONFIG).unwrap();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ran = pipeline(&a, &config).and_then(|_| pipeline(&b, &config));
    if let Err(e) = ran {
        return (false, e);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    checks.push(("pipeline twice gives identical files", sa == sb && sa.len() > 10));
    checks.push(("checkpoint present", sa.contains_key("checkpoint.bin") && sa.contains_key("aux_checkpoint.bin")));

    // Bitwise round trip of a checkpoint with awkward values.
    let mut c = Checkpoint::new("h");
    c.step = 7;
    c.rng = Some(RngState::capture(&ChaCha8Rng::seed_from_u64(1)));
    let values = vec![0.0f32, -0.0, 1e-45, f32::MAX, -f32::MIN_POSITIVE, 1.234_567_9, f32::INFINITY, f32::NAN];
    c.arrays.push(NamedArray { name: "w".into(), shape: vec![2, 4], data: values.clone() });
    let path = tmp.path().join("rt.bin");
    save_checkpoint(&path, &c).unwrap();
    let back = load_checkpoint(&path, Some("h"), false).unwrap();
    let bitwise = back.arrays[0].data.iter().zip(&values).all(|(x, y)| x.to_bits() == y.to_bits());
    checks.push(("round trip bitwise", bitwise && back.step == 7 && back.rng == c.rng));

    let bytes = fs::read(&path).unwrap();
    let truncated = tmp.path().join("trunc.bin");
    fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    checks.push(("truncated file rejected", matches!(load_checkpoint(&truncated, None, false), Err(Error::Integrity(_)))));
    checks.push(("config mismatch rejected", matches!(load_checkpoint(&path, Some("other"), false), Err(Error::ConfigMismatch { .. }))));
    checks.push(("config mismatch forced", load_checkpoint(&path, Some("other"), true).is_ok()));

    // Editing the stored config makes later subcommands refuse without --force.
    let resolved = a.join("config.resolved");
    let text = fs::read_to_string(&resolved).unwrap();
    fs::write(&resolved, text.replacen("seed = 5", "seed = 6", 1)).unwrap();
    let ckpt = a.join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    let out = a.join("forced");
    let refused = cli(&["sample", "--checkpoint", ckpt, "--unconditional", "--n", "2", "--out", out.to_str().unwrap()]) == 2;
    let forced = cli(&["sample", "--checkpoint", ckpt, "--unconditional", "--n", "2", "--force", "--out", out.to_str().unwrap()]) == 0;
    checks.push(("edited config needs --force", refused && forced));
    checks.push(("missing --checkpoint is a usage error", cli(&["sample", "--unconditional"]) == 1));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    let passed = checks.len() - failed.len();
    (
        failed.is_empty(),
        if failed.is_empty() {
            format!("{passed}/{} checks pass", checks.len())
        } else {
            format!("{passed}/{} checks pass; failing: {}", checks.len(), failed.join(", "))
        },
    )
}

// ---------------------------------------------------------------------------
// Criterion 10: metric examples.

fn criterion_10() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();
    let i2 = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
    let zero = arr1(&[0.0, 0.0]);
    let fd = |m1: &Array1<f64>, c1: &Array2<f64>, m2: &Array1<f64>, c2: &Array2<f64>| {
        frechet_gaussian_distance(m1, c1, m2, c2).unwrap()
    };
    let c = arr2(&[[2.0, 0.3], [0.3, 0.5]]);
    checks.push(("Fréchet identical = 0", fd(&arr1(&[1.0, -2.0]), &c, &arr1(&[1.0, -2.0]), &c).abs() < 1e-9));
    checks.push(("Fréchet mean shift = |mu|^2", (fd(&zero, &i2, &arr1(&[3.0, 4.0]), &i2) - 25.0).abs() < 1e-9));
    let d14 = arr2(&[[1.0, 0.0], [0.0, 4.0]]);
    let d41 = arr2(&[[4.0, 0.0], [0.0, 1.0]]);
    checks.push(("Fréchet diag(1,4) vs diag(4,1) = 2", (fd(&zero, &d14, &zero, &d41) - 2.0).abs() < 1e-9));
    checks.push((
        "Fréchet asymmetric covariance rejected",
        frechet_gaussian_distance(&zero, &arr2(&[[1.0, 0.5], [0.0, 1.0]]), &zero, &i2).is_err(),
    ));

    let t = arr2(&[[1.0, 0.0, 1.0, 1.0], [0.0, 1.0, 0.0, 0.0]]);
    checks.push(("F1 perfect = 1", (f1_sample_average(&t, &t).unwrap() - 1.0).abs() < 1e-12));
    // Attributes indexed from 1: prediction {1, 3}, target {1, 2}.
    let f1 = f1_sample_average(&arr2(&[[1.0, 0.0, 1.0, 0.0]]), &arr2(&[[1.0, 1.0, 0.0, 0.0]])).unwrap();
    checks.push(("F1 {1,3} vs {1,2} = 0.5", (f1 - 0.5).abs() < 1e-12));
    let z = Array2::zeros((1, 4));
    checks.push(("F1 doubly empty = 1", (f1_sample_average(&z, &z).unwrap() - 1.0).abs() < 1e-12));
    checks.push(("F1 non-binary rejected", f1_sample_average(&arr2(&[[0.5]]), &arr2(&[[1.0]])).is_err()));

    checks.push(("coherence single modality = 1", coherence_from_labels(&[vec![1, 2, 3]], CoherenceReference::Mutual).unwrap() == 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let n = 10_000;
    let random: Vec<Vec<usize>> = (0..2).map(|_| (0..n).map(|_| rng.random_range(0..10)).collect()).collect();
    let chance = coherence_from_labels(&random, CoherenceReference::Mutual).unwrap();
    let se = (0.1 * 0.9 / n as f64).sqrt();
    checks.push(("coherence of random labels within 3 SE of 0.1", (chance - 0.1).abs() < 3.0 * se));

    let data = make_polymnist_like(3000, 2, 7).unwrap();
    let (train_set, held_out) = data.split(2500);
    let probes = probes_for(&train_set);
    let records: BTreeMap<String, Array2<f64>> =
        held_out.names.iter().cloned().zip(held_out.data.iter().cloned()).collect();
    let verbatim = coherence_accuracy(&records, &probes, CoherenceReference::Conditioning(&held_out.labels)).unwrap();
    let errors: f64 = held_out.names.iter().map(|name| 1.0 - probes[name].score(&records[name], &held_out.labels)).sum();
    checks.push(("verbatim records >= 0.9 and >= 1 - sum of probe errors", verbatim >= 0.9 && verbatim >= 1.0 - errors - 1e-12));
    let mut missing = probes;
    missing.remove("m1");
    checks.push(("missing probe rejected", coherence_accuracy(&records, &missing, CoherenceReference::Mutual).is_err()));

    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    (
        failed.is_empty(),
        format!("{}/{} examples exact{}", checks.len() - failed.len(), checks.len(), if failed.is_empty() {
            String::new()
        } else {
            format!("; failing: {}", failed.join(", "))
        }),
    )
}
