//! Trains the two encoders on a small synthetic dataset, saves the
//! checkpoint and reloads it.

use histoexpr::model::{evaluate_loss, train, ModelCheckpoint, TrainConfig};
use histoexpr::preprocess::normalize_dataset;
use histoexpr::synthgen::{generate, SynthConfig};

fn main() -> histoexpr::error::Result<()> {
    let (raw, _) = generate(&SynthConfig {
        n_spots: 600,
        n_query: 0,
        n_genes: 60,
        n_zonated: 20,
        d_img: 32,
        seed: 7,
        ..SynthConfig::default()
    })?;
    let ds = normalize_dataset(&raw, 1e4)?;

    let cfg = TrainConfig {
        batch_size: 128,
        epochs: 15,
        hidden_dims: vec![128],
        embed_dim: 64,
        seed: 42,
        ..TrainConfig::default()
    };
    let ckpt = train(&ds, &cfg)?;
    for (e, l) in ckpt.loss_trace.iter().enumerate().step_by(3) {
        println!("epoch {:>2}: loss {l:.4}", e + 1);
    }
    println!("held-in loss after training: {:.4}", evaluate_loss(&ckpt, &ds, 128)?);

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.blpc");
    ckpt.save(&path)?;
    let back = ModelCheckpoint::load(&path)?;
    assert_eq!(back.content_hash(), ckpt.content_hash());
    println!(
        "saved {} bytes, content hash {}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        ckpt.content_hash()
    );
    Ok(())
}
