use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Encoder, EncoderSpec, Layer, TrainConfig};
use crate::error::{Error, Result};
use crate::io::{bmat, container, write_atomic};
use crate::math::DenseMatrix;

pub const BLPC_MAGIC: &[u8; 4] = b"BLPC";

/// Trained encoder pair plus everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub image: Encoder,
    pub expression: Encoder,
    /// Configuration actually used (after any batch-size clamp).
    pub config: TrainConfig,
    /// Mean batch loss per epoch.
    pub loss_trace: Vec<f64>,
    pub warnings: Vec<String>,
    /// Free-form creation stamp; the only field excluded from the content hash.
    pub created: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlobDecl {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Body {
    loss_trace: Vec<f64>,
    warnings: Vec<String>,
    config: TrainConfig,
    image: EncoderSpec,
    expression: EncoderSpec,
    blobs: Vec<BlobDecl>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    content_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    created: Option<String>,
    model: Body,
}

impl ModelCheckpoint {
    pub fn encode_image(&self, feats: &DenseMatrix) -> Result<DenseMatrix> {
        if feats.cols() != self.image.spec.input_dim {
            return Err(Error::shape(
                "image encoder",
                feats.shape(),
                (feats.rows(), self.image.spec.input_dim),
            ));
        }
        self.image.forward(feats)
    }

    pub fn encode_expression(&self, expr: &DenseMatrix) -> Result<DenseMatrix> {
        if expr.cols() != self.expression.spec.input_dim {
            return Err(Error::shape(
                "expression encoder",
                expr.shape(),
                (expr.rows(), self.expression.spec.input_dim),
            ));
        }
        self.expression.forward(expr)
    }

    fn blobs(&self) -> (Vec<BlobDecl>, Vec<&DenseMatrix>) {
        let mut decls = Vec::new();
        let mut mats = Vec::new();
        for (tag, enc) in [("image", &self.image), ("expression", &self.expression)] {
            for (i, l) in enc.layers.iter().enumerate() {
                for (kind, m) in [("weight", &l.weight), ("bias", &l.bias)] {
                    decls.push(BlobDecl {
                        name: format!("{tag}.{i}.{kind}"),
                        rows: m.rows(),
                        cols: m.cols(),
                    });
                    mats.push(m);
                }
            }
        }
        (decls, mats)
    }

    fn body(&self) -> (Body, Vec<&DenseMatrix>) {
        let (blobs, mats) = self.blobs();
        (
            Body {
                loss_trace: self.loss_trace.clone(),
                warnings: self.warnings.clone(),
                config: self.config.clone(),
                image: self.image.spec.clone(),
                expression: self.expression.spec.clone(),
                blobs,
            },
            mats,
        )
    }

    fn hash_body(body: &Body, mats: &[&DenseMatrix]) -> Result<String> {
        let text = toml::to_string(body).map_err(|e| Error::format("BLPC", e.to_string()))?;
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        for m in mats {
            h.update(bmat::encode(m));
        }
        Ok(hex::encode(h.finalize()))
    }

    /// SHA-256 over specs, config, loss trace and every weight, hex encoded.
    pub fn content_hash(&self) -> String {
        let (body, mats) = self.body();
        Self::hash_body(&body, &mats).expect("checkpoint header serializes")
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (body, mats) = self.body();
        let header = Header {
            format: "BLPC".into(),
            content_hash: Self::hash_body(&body, &mats)?,
            created: self.created.clone(),
            model: body,
        };
        let text = toml::to_string(&header).map_err(|e| Error::format("BLPC", e.to_string()))?;
        Ok(container::encode(BLPC_MAGIC, &text, &mats))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (text, mats) = container::decode("BLPC", BLPC_MAGIC, bytes)?;
        let header: Header =
            toml::from_str(&text).map_err(|e| Error::format("BLPC", e.to_string()))?;
        let body = header.model;
        if body.blobs.len() != mats.len() {
            return Err(Error::format(
                "BLPC",
                format!("header declares {} blobs, file holds {}", body.blobs.len(), mats.len()),
            ));
        }
        for (d, m) in body.blobs.iter().zip(&mats) {
            if m.shape() != (d.rows, d.cols) {
                return Err(Error::format(
                    "BLPC",
                    format!("blob {} is {}x{}, header says {}x{}", d.name, m.rows(), m.cols(), d.rows, d.cols),
                ));
            }
        }
        let found = Self::hash_body(&body, &mats.iter().collect::<Vec<_>>())?;
        if found != header.content_hash {
            return Err(Error::HashMismatch {
                what: "checkpoint".into(),
                expected: header.content_hash,
                found,
            });
        }
        let mut it = mats.into_iter();
        let mut take = |spec: &EncoderSpec| -> Result<Encoder> {
            let layers = (0..spec.layer_dims().len())
                .map(|_| {
                    let weight = it.next().ok_or_else(|| Error::format("BLPC", "missing weight"))?;
                    let bias = it.next().ok_or_else(|| Error::format("BLPC", "missing bias"))?;
                    Ok(Layer { weight, bias })
                })
                .collect::<Result<Vec<_>>>()?;
            Encoder::from_layers(spec.clone(), layers)
                .map_err(|e| Error::format("BLPC", e.to_string()))
        };
        let image = take(&body.image)?;
        let expression = take(&body.expression)?;
        Ok(Self {
            image,
            expression,
            config: body.config,
            loss_trace: body.loss_trace,
            warnings: body.warnings,
            created: header.created,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ckpt() -> ModelCheckpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        ModelCheckpoint {
            image: Encoder::init(EncoderSpec::new(5, vec![7, 3], 4), &mut rng).unwrap(),
            expression: Encoder::init(EncoderSpec::new(6, vec![7, 3], 4), &mut rng).unwrap(),
            config: TrainConfig {
                seed: u64::MAX,
                ..TrainConfig::default()
            },
            loss_trace: vec![1.25, 0.1 + 0.2, 1e-300],
            warnings: vec!["w".into()],
            created: None,
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = ckpt();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[0..4], b"BLPC");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn creation_stamp_does_not_change_hash() {
        let mut c = ckpt();
        let h = c.content_hash();
        c.created = Some("unix:1700000000".into());
        assert_eq!(c.content_hash(), h);
        let back = ModelCheckpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.created.as_deref(), Some("unix:1700000000"));
    }

    #[test]
    fn corrupted_weight_fails_hash() {
        let bytes = ckpt().to_bytes().unwrap();
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 2] ^= 0x40;
        let err = ModelCheckpoint::from_bytes(&bad).unwrap_err();
        assert!(matches!(err, Error::HashMismatch { .. }), "{err}");
    }

    #[test]
    fn encoder_dim_errors_name_the_encoder() {
        let c = ckpt();
        let e = c.encode_image(&DenseMatrix::zeros(2, 6)).unwrap_err().to_string();
        assert!(e.contains("image encoder"), "{e}");
        let e = c.encode_expression(&DenseMatrix::zeros(2, 5)).unwrap_err().to_string();
        assert!(e.contains("expression encoder"), "{e}");
    }
}
