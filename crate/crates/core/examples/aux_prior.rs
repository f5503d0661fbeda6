//! Unconditional generation with and without the latent score prior.
//!
//! A model is trained briefly, a small diffusion model is fitted to its
//! posterior latents, and unconditional samples drawn from `N(0, I)` and
//! from that prior are compared by mutual coherence and Fréchet feature
//! distance to held-out data.
//!
//! Run with `cargo run --release --example aux_prior -- [steps]`.

use std::collections::BTreeMap;

use diffmvae::aux_prior::{collect_posterior_latents, train_aux_prior, AuxPrior, AuxPriorConfig};
use diffmvae::data_synth::{make_polymnist_like, train_probe_classifier, ProbeConfig};
use diffmvae::evaluation::{coherence_accuracy, frechet_feature_distance, CoherenceReference};
use diffmvae::generation::{unconditional_generate, SamplerConfig};
use diffmvae::multimodal_model::{ArchConfig, DecoderKind, DiffMvae, LrSchedule, ModelConfig, SubsetStrategy, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffmvae::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(1500, |s| s.parse().expect("steps"));
    let data = make_polymnist_like(20_000, 2, 0)?;
    let (train, test) = data.split(18_000);
    let config = ModelConfig {
        subset_strategy: SubsetStrategy::Sampled { k: 1 },
        arch: ArchConfig { encoder_hidden: vec![256], decoder_hidden: vec![256], eps_hidden: 256, eps_blocks: 2, time_dim: 32 },
        ..ModelConfig::diff_mvae_star(16)
    };
    let model = DiffMvae::new(config, train.specs(|_| DecoderKind::Diffusion), &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut trainer = Trainer::new(model, 1e-3, 0).with_lr_schedule(LrSchedule::Cosine { total_steps: steps as u64 });
    trainer.fit(&train.data, 128, steps, |_| {})?;
    let model = trainer.model();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let aux_config = AuxPriorConfig::default();
    let latents = collect_posterior_latents(model, &train.data, aux_config.num_latents, &mut rng)?;
    let mut prior = AuxPrior::new(model.latent_dim(), aux_config, &mut rng)?;
    let steps = prior.config().train_steps;
    let losses = train_aux_prior(&mut prior, &latents, steps, &mut rng)?;
    println!("aux prior loss: first {:.3}, last {:.3}", losses[0], losses[losses.len() - 1]);

    let probes: BTreeMap<_, _> = train
        .names
        .iter()
        .map(|name| Ok((name.clone(), train_probe_classifier(&train, name, &ProbeConfig::default())?)))
        .collect::<diffmvae::Result<_>>()?;
    let n = 500;
    for (label, aux) in [("N(0, I) prior", None), ("aux prior", Some(&prior))] {
        let out = unconditional_generate(model, aux, n, &SamplerConfig::ddim(50), &mut rng)?;
        let coherence = coherence_accuracy(&out, &probes, CoherenceReference::Mutual)?;
        let fd = frechet_feature_distance(&probes["m0"], &test.data[0], &out["m0"])?;
        println!("{label:<14} mutual coherence {coherence:.3}  Fréchet distance (m0) {fd:.2}");
    }
    Ok(())
}
