//! The full command-line pipeline on a tiny configuration, driven through
//! `cli_main` inside a temporary run directory:
//! `synth -> train -> train-aux -> sample -> eval`.
//!
//! Run with `cargo run --release --example cli_pipeline`. The same steps
//! work with the `diffmvae` binary.

use std::path::Path;

use diffmvae::cli_persistence::cli_main;

const CONFIG: &str = r#"
seed = 11

[data]
n = 2500
train = 2000

[model]
latent_dim = 8

[model.arch]
encoder_hidden = [64]
decoder_hidden = [64]
eps_hidden = 64
eps_blocks = 1
time_dim = 16

[train]
steps = 200
batch_size = 64
log_every = 50

[aux]
hidden = 32
num_latents = 1000
train_steps = 200

[sampler]
steps = 20

"#;

fn run(args: &[&str]) {
    println!("$ diffmvae {}", args.join(" "));
    let code = cli_main(std::iter::once("diffmvae").chain(args.iter().copied()));
    assert_eq!(code, 0, "diffmvae {args:?} failed");
}

fn main() -> std::io::Result<()> {
    let tmp = tempfile::tempdir()?;
    let dir = tmp.path();
    let config = dir.join("tiny.toml");
    std::fs::write(&config, CONFIG)?;
    let s = |p: &Path| p.to_str().expect("utf-8 path").to_string();
    let (cfg, run_dir, data) = (s(&config), s(dir), s(&dir.join("data")));
    let ckpt = s(&dir.join("checkpoint.bin"));

    run(&["synth", "--config", &cfg, "--out", &data]);
    run(&["train", "--config", &cfg, "--run-dir", &run_dir]);
    run(&["train-aux", "--run-dir", &run_dir]);
    run(&["sample", "--checkpoint", &ckpt, "--given", "m0", "--target", "m1", "--n", "100", "--seed", "1"]);
    run(&["eval", "--run-dir", &run_dir]);
    let uncond = s(&dir.join("uncond"));
    run(&["sample", "--checkpoint", &ckpt, "--unconditional", "--use-aux-prior", "--n", "100", "--out", &uncond]);
    run(&["eval", "--run-dir", &run_dir, "--samples", &uncond]);

    println!("\nrun directory contents:");
    for entry in std::fs::read_dir(dir)? {
        println!("  {}", entry?.file_name().to_string_lossy());
    }
    Ok(())
}
