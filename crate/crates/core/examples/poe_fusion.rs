//! Product-of-experts fusion of two 1-D encoders and the KL term it feeds.
//!
//! Run with `cargo run --example poe_fusion`.

use diffmvae::gaussian_latent::{kl_divergence, product_of_experts, DiagonalGaussian};

fn main() -> diffmvae::Result<()> {
    // Two experts that disagree: a confident one at -1 and a vague one at 2.
    let a = DiagonalGaussian::from_mean_var(vec![-1.0], vec![0.25])?;
    let b = DiagonalGaussian::from_mean_var(vec![2.0], vec![1.0])?;
    let fused = product_of_experts(&[a.clone(), b.clone()], false)?;
    let with_prior = product_of_experts(&[a.clone(), b], true)?;
    println!("expert a          mean {:+.3} var {:.3}", a.mean()[0], a.variance()[0]);
    println!("fused (a, b)      mean {:+.3} var {:.3}", fused.mean()[0], fused.variance()[0]);
    println!("fused (a, b, N01) mean {:+.3} var {:.3}", with_prior.mean()[0], with_prior.variance()[0]);

    // Precisions add, so the fused variance is below either expert's.
    assert!(fused.variance()[0] < a.variance()[0]);

    let prior = DiagonalGaussian::standard(1);
    println!("KL(a || N(0,1))     = {:.4}", kl_divergence(&a, &prior)?);
    println!("KL(fused || N(0,1)) = {:.4}", kl_divergence(&fused, &prior)?);
    Ok(())
}
