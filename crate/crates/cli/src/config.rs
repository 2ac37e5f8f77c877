use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use salience::backend::{MaskedLm, ReferenceConfig, ReferenceMlm, RemoteBackend, UniformBackend};
use salience::synthetic::SyntheticConfig;
use salience::templates::TemplateRegistry;
use salience::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    /// Vocabulary size of the uniform backend.
    pub uniform_vocab_size: usize,
    pub uniform_embedding_dim: usize,
    /// Saved reference model, as written by `pretrain`.
    pub model: Option<PathBuf>,
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            uniform_vocab_size: 10,
            uniform_embedding_dim: 16,
            model: None,
        }
    }
}

/// Contents of a `--config` TOML file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub train: TrainConfig,
    pub backend: BackendSection,
    pub reference: Option<ReferenceConfig>,
    pub synthetic: SyntheticConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Backend chosen by `SALIENCE_BACKEND` (or `--backend`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Uniform,
    Reference,
    Remote(String),
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(BackendChoice::Uniform),
            "reference" => Ok(BackendChoice::Reference),
            other => match other.strip_prefix("remote:") {
                Some(addr) if !addr.is_empty() => Ok(BackendChoice::Remote(addr.to_string())),
                _ => Err(format!("unknown backend `{other}`; expected uniform, reference or remote:<address>")),
            },
        }
    }
}

pub fn open_backend(
    choice: &BackendChoice,
    section: &BackendSection,
    model_flag: Option<&Path>,
) -> Result<Arc<dyn MaskedLm>> {
    Ok(match choice {
        BackendChoice::Uniform => Arc::new(UniformBackend::new(
            section.uniform_vocab_size,
            section.uniform_embedding_dim,
        )?),
        BackendChoice::Reference => {
            let Some(path) = model_flag.or(section.model.as_deref()) else {
                bail!(salience::backend::BackendError::Config(
                    "the reference backend needs --backend-model (see `pretrain`)".into()
                ));
            };
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Arc::new(ReferenceMlm::from_json(&text)?)
        }
        BackendChoice::Remote(addr) => Arc::new(RemoteBackend::connect(addr)?),
    })
}

pub fn registry(template_file: Option<&Path>) -> Result<TemplateRegistry> {
    Ok(match template_file {
        Some(path) => TemplateRegistry::load_file(path)?,
        None => TemplateRegistry::default(),
    })
}
