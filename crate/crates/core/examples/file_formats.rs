//! On-disk formats: BMAT matrices, dataset manifests with hashes, and the
//! container layout shared by checkpoints and indexes.

use histoexpr::io::{bmat, sha256_hex, Manifest, MatrixFormat, Provenance};
use histoexpr::math::DenseMatrix;
use histoexpr::model::{train, ModelCheckpoint, TrainConfig};
use histoexpr::refindex::{build_index, IndexKey, ReferenceIndex};
use histoexpr::synthgen::{generate, SynthConfig};

fn main() -> histoexpr::error::Result<()> {
    let m = DenseMatrix::from_rows(&[[1.0, -2.5], [0.0, 3.25]])?;
    let bytes = bmat::encode(&m);
    println!("BMAT 2x2: {} bytes, header {:02x?}", bytes.len(), &bytes[..24]);
    println!("checker says {:?}", bmat::validate(&bytes)?);
    let mut bad = bytes.clone();
    bad.pop();
    println!("truncated: {}", bmat::validate(&bad).unwrap_err());

    let dir = tempfile::tempdir().expect("temp dir");
    let (ds, _) = generate(&SynthConfig {
        n_spots: 120,
        n_query: 20,
        n_genes: 12,
        n_zonated: 4,
        d_img: 6,
        seed: 4,
        ..SynthConfig::default()
    })?;
    let manifest = Manifest::write_dataset(dir.path(), &ds, Provenance::default(), MatrixFormat::Bmat)?;
    print!("{}", std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap_or_default());
    let back = Manifest::load(&dir.path().join("manifest.toml"))?.load_dataset()?;
    assert_eq!(back, ds);
    println!("manifest round trip ok ({} files)", manifest.files.len());

    let ckpt = train(
        &ds,
        &TrainConfig {
            batch_size: 32,
            epochs: 2,
            hidden_dims: vec![8],
            embed_dim: 4,
            seed: 1,
            ..TrainConfig::default()
        },
    )?;
    let blpc = ckpt.to_bytes()?;
    let header_len = u64::from_le_bytes(blpc[8..16].try_into().expect("8 bytes")) as usize;
    println!("BLPC header ({header_len} bytes):");
    println!("{}", String::from_utf8_lossy(&blpc[16..16 + header_len.min(400)]));
    assert_eq!(ModelCheckpoint::from_bytes(&blpc)?, ckpt);

    let index = build_index(&ckpt, &ds, IndexKey::Image)?;
    let blix = index.to_bytes()?;
    println!("BLIX {} bytes, sha256 {}", blix.len(), sha256_hex(&blix));
    assert_eq!(ReferenceIndex::from_bytes(&blix)?, index);
    Ok(())
}
