//! The similarity-smoothed contrastive loss on a toy batch: targets, loss in
//! both objective modes, and a finite-difference check of one gradient entry.
//! Targets are treated as constants during training, so the check freezes
//! them at their current value.

use histoexpr::contrastive::{
    contrastive_loss, loss_with_targets_f64, similarities, smoothed_targets, targets_f64, LossConfig,
    ObjectiveMode,
};
use histoexpr::math::DenseMatrix;

fn main() -> histoexpr::error::Result<()> {
    // three spots; image and expression embeddings roughly agree
    let h_v = DenseMatrix::from_rows(&[[1.0, 0.0, 0.2], [0.0, 1.0, 0.1], [0.7, 0.7, 0.0]])?;
    let h_x = DenseMatrix::from_rows(&[[0.9, 0.1, 0.0], [0.1, 1.1, 0.0], [0.6, 0.5, 0.3]])?;

    let block = similarities(&h_v, &h_x)?;
    for tau in [0.1f32, 1.0, 10.0] {
        let t = smoothed_targets(&block, tau)?;
        println!("targets at tau={tau}:");
        for row in t.iter_rows() {
            println!("  {row:.3?}");
        }
    }

    for mode in [ObjectiveMode::Smoothed, ObjectiveMode::OneHot] {
        let cfg = LossConfig { temperature: 1.0, mode };
        let out = contrastive_loss(&h_v, &h_x, &cfg)?;
        println!("{mode}: loss = {:.6}", out.loss);

        // central difference on h_v[0][1]
        let eps = 1e-6;
        let mut hv = h_v.to_f64();
        let hx = h_x.to_f64();
        let t = targets_f64(&hv, &hx, 3, 3, &cfg)?;
        hv[1] += eps;
        let up = loss_with_targets_f64(&hv, &hx, 3, 3, &t)?;
        hv[1] -= 2.0 * eps;
        let down = loss_with_targets_f64(&hv, &hx, 3, 3, &t)?;
        println!(
            "  dL/dh_v[0][1]: analytic {:.6}, numeric {:.6}",
            out.grad_h_v.get(0, 1),
            (up - down) / (2.0 * eps)
        );
    }
    Ok(())
}
