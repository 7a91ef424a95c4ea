//! Dataset manifests: a TOML file naming the matrices and lists that make up
//! a [`PairedDataset`], with a SHA-256 per file checked at load time.
//!
//! ```toml
//! version = 1
//!
//! [provenance]
//! normalized = true
//! target_sum = 10000.0
//! batch_corrected = false
//! source = "preprocess"
//!
//! [files.features]
//! path = "features.bmat"
//! format = "bmat"
//! sha256 = "…"
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::PairedDataset;
use crate::error::{Error, Result};
use crate::io::{read_lines, sha256_file, table, write_atomic, write_lines};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixFormat {
    Bmat,
    Csv,
}

impl MatrixFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Bmat => "bmat",
            Self::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Bmat,
    Csv,
    Text,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub format: FileFormat,
    pub sha256: String,
}

/// How the expression matrix was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Provenance {
    /// Total-count scaled and `log1p` transformed.
    pub normalized: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_sum: Option<f64>,
    /// Batch correction applied upstream of this tool.
    pub batch_corrected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hvg_per_slice: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub provenance: Provenance,
    pub files: BTreeMap<String, FileEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const REQUIRED: [&str; 4] = ["features", "expression", "genes", "spots"];

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::format("manifest", format!("unsupported version {}", m.version)));
        }
        for key in REQUIRED {
            if !m.files.contains_key(key) {
                return Err(Error::format("manifest", format!("missing files.{key}")));
            }
        }
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn path_of(&self, key: &str) -> Option<PathBuf> {
        self.files.get(key).map(|f| self.base_dir.join(&f.path))
    }

    fn verified(&self, key: &str) -> Result<Option<PathBuf>> {
        let Some(entry) = self.files.get(key) else {
            return Ok(None);
        };
        let path = self.base_dir.join(&entry.path);
        let found = sha256_file(&path)?;
        if found != entry.sha256 {
            return Err(Error::HashMismatch {
                what: path.display().to_string(),
                expected: entry.sha256.clone(),
                found,
            });
        }
        Ok(Some(path))
    }

    /// Loads every referenced file after checking its hash.
    pub fn load_dataset(&self) -> Result<PairedDataset> {
        let req = |k: &str| -> Result<PathBuf> {
            self.verified(k)?
                .ok_or_else(|| Error::format("manifest", format!("missing files.{k}")))
        };
        let features = table::load_matrix(&req("features")?)?;
        let expression = table::load_matrix(&req("expression")?)?;
        let genes = read_lines(&req("genes")?)?;
        let spots = read_lines(&req("spots")?)?;
        let mut ds = PairedDataset::new(features, expression, genes, spots)?;
        if let Some(p) = self.verified("coords")? {
            ds = ds.with_coords(table::load_matrix(&p)?)?;
        }
        if let Some(p) = self.verified("split")? {
            ds = ds.with_split(read_lines(&p)?)?;
        }
        Ok(ds)
    }

    /// Writes `ds` into `dir` and a `manifest.toml` describing it.
    pub fn write_dataset(
        dir: &Path,
        ds: &PairedDataset,
        provenance: Provenance,
        format: MatrixFormat,
    ) -> Result<Self> {
        ds.validate()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = BTreeMap::new();
        let ext = format.extension();
        let ff = match format {
            MatrixFormat::Bmat => FileFormat::Bmat,
            MatrixFormat::Csv => FileFormat::Csv,
        };
        let mut put_matrix = |key: &str, m: &crate::math::DenseMatrix, header: Option<&[String]>| -> Result<()> {
            let name = format!("{key}.{ext}");
            let path = dir.join(&name);
            match format {
                MatrixFormat::Bmat => table::save_matrix(&path, m)?,
                MatrixFormat::Csv => write_atomic(&path, &table::matrix_to_csv(m, header)?)?,
            }
            files.insert(
                key.to_owned(),
                FileEntry {
                    path: name,
                    format: ff,
                    sha256: sha256_file(&path)?,
                },
            );
            Ok(())
        };
        put_matrix("features", &ds.features, None)?;
        put_matrix("expression", &ds.expression, Some(&ds.gene_names))?;
        if let Some(c) = &ds.coords {
            put_matrix("coords", c, Some(&["x".to_owned(), "y".to_owned()]))?;
        }
        let mut put_lines = |key: &str, lines: &[String]| -> Result<()> {
            let name = format!("{key}.txt");
            let path = dir.join(&name);
            write_lines(&path, lines)?;
            files.insert(
                key.to_owned(),
                FileEntry {
                    path: name,
                    format: FileFormat::Text,
                    sha256: sha256_file(&path)?,
                },
            );
            Ok(())
        };
        put_lines("genes", &ds.gene_names)?;
        put_lines("spots", &ds.spot_ids)?;
        if let Some(s) = &ds.split {
            put_lines("split", s)?;
        }
        let m = Manifest {
            version: MANIFEST_VERSION,
            provenance,
            files,
            base_dir: dir.to_path_buf(),
        };
        m.save(&dir.join("manifest.toml"))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            toml::to_string(self).map_err(|e| Error::format("manifest", e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }
}
