use std::path::PathBuf;

use canon_sampler::model_file::ModelFile;
use canon_sampler::{FermiSpec, Model};
use clap::Args;
use serde::Serialize;

use crate::commands::CliError;

/// A model file, or an inline Fermi model.
#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// JSON model file: {"fermi": {...}} or {"custom": {...}}.
    #[arg(value_name = "MODEL")]
    pub model: Option<PathBuf>,
    /// Number of particles.
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of levels (defaults to the length of --n).
    #[arg(long)]
    pub m: Option<usize>,
    /// Inverse temperature.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Level energies, comma separated (default all zero).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub v: Option<Vec<f64>>,
    /// Level degeneracies, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<u64>>,
}

impl ModelArgs {
    fn inline_given(&self) -> bool {
        self.k.is_some() || self.m.is_some() || self.beta.is_some() || self.v.is_some() || self.n.is_some()
    }

    pub fn is_given(&self) -> bool {
        self.model.is_some() || self.inline_given()
    }

    pub fn file(&self) -> Result<ModelFile, CliError> {
        if let Some(path) = &self.model {
            if self.inline_given() {
                return Err(CliError::Usage("give either a model file or inline --k/--m/--beta/--v/--n, not both".into()));
            }
            return Ok(ModelFile::load(path)?);
        }
        Ok(ModelFile::Fermi(self.fermi_inline()?))
    }

    fn fermi_inline(&self) -> Result<FermiSpec, CliError> {
        let (Some(k), Some(n)) = (self.k, self.n.clone()) else {
            return Err(CliError::Usage("a model file or at least --k and --n is required".into()));
        };
        let m = self.m.unwrap_or(n.len());
        let v = self.v.clone().unwrap_or_else(|| vec![0.0; m]);
        if n.len() != m || v.len() != m {
            return Err(CliError::Usage(format!(
                "--m {m} disagrees with {} degeneracies and {} energies",
                n.len(),
                v.len()
            )));
        }
        Ok(FermiSpec {
            k,
            m,
            beta: self.beta.unwrap_or(0.0),
            v,
            n,
        })
    }

    pub fn load(&self) -> Result<(ModelFile, Model), CliError> {
        let file = self.file()?;
        let model = file.build()?;
        Ok((file, model))
    }
}
