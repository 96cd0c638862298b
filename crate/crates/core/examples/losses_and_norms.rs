//! Focal loss against cross entropy, and batch renormalization against
//! batch norm on a small batch.

use sddkit::nn::loss::binary_cross_entropy;
use sddkit::nn::{focal_sigmoid, NormMode, NormState, Phase, Tensor};

fn main() -> sddkit::Result<()> {
    println!("   p     CE       FL(g=2)  ratio");
    for p in [0.1, 0.5, 0.9, 0.99] {
        let ce = binary_cross_entropy(p, true);
        let (fl, _) = focal_sigmoid(p, true, 2.0);
        println!("{p:5.2}  {ce:8.5}  {fl:8.5}  {:.4}", fl / ce);
    }

    // one fixed two-image batch: once the moving statistics have converged
    // to the batch's, the renorm corrections are r = 1, d = 0 and training
    // output equals inference output
    let v: Vec<f64> = (0..8).map(|j| (j as f64 * 0.37).sin() * 2.0 + 1.0).collect();
    let x = Tensor::from_vec(&[2, 1, 2, 2], v)?;
    for mode in [NormMode::BatchNorm, NormMode::renorm()] {
        let mut n = NormState::<f64>::new(1, mode);
        for step in 0..=300 {
            let tr = n.forward(&x, Phase::Train)?;
            n.clear_cache();
            if step % 100 == 0 {
                let inf = n.forward(&x, Phase::Infer)?;
                n.clear_cache();
                let gap = tr.data().iter().zip(inf.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                println!("{mode:?} step {step:>3}: max train/infer gap {gap:.2e}");
            }
        }
    }
    Ok(())
}
