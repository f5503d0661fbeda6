//! The evaluation metrics on hand-made inputs: Gaussian Fréchet distance,
//! sample-averaged F1 and coherence.
//!
//! Run with `cargo run --example evaluate_metrics`.

use diffmvae::evaluation::{coherence_from_labels, f1_sample_average, frechet_gaussian_distance, CoherenceReference};
use ndarray::{arr1, arr2};

fn main() -> diffmvae::Result<()> {
    let identity = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
    let d = frechet_gaussian_distance(&arr1(&[0.0, 0.0]), &identity, &arr1(&[3.0, 4.0]), &identity)?;
    println!("Fréchet distance, unit covariances, means 5 apart: {d:.3}");
    let d = frechet_gaussian_distance(
        &arr1(&[0.0, 0.0]),
        &arr2(&[[1.0, 0.0], [0.0, 4.0]]),
        &arr1(&[0.0, 0.0]),
        &arr2(&[[4.0, 0.0], [0.0, 1.0]]),
    )?;
    println!("Fréchet distance, diag(1,4) vs diag(4,1):          {d:.3}");

    let predicted = arr2(&[[1.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
    let target = arr2(&[[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
    println!("sample-averaged F1:                                {:.3}", f1_sample_average(&predicted, &target)?);

    let labels = [3, 1, 4, 1];
    let predicted = vec![vec![3, 1, 4, 0], vec![3, 1, 0, 1]];
    println!(
        "coherence vs conditioning labels:                  {:.2}",
        coherence_from_labels(&predicted, CoherenceReference::Conditioning(&labels))?
    );
    println!(
        "mutual coherence:                                  {:.2}",
        coherence_from_labels(&predicted, CoherenceReference::Mutual)?
    );
    Ok(())
}
