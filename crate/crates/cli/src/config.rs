use std::fs;
use std::path::{Path, PathBuf};

use htl_core::{
    make_source, make_target, Dataset, HtlError, KernelSpec, LossSpec, ScenarioConfig, SolverConfig,
    SourceHypothesis, SourceTrainer, Split,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::exit::Failure;

fn default_lambda() -> f64 {
    1.0
}

/// Settings shared by `fit`, `bounds`, `audit` and `loo`.
///
/// Data comes either from CSV files (`train`, `test`) or from a generated
/// `scenario`. The source scorer is given inline, read from `source_path`, or,
/// for a scenario, trained on the generated source sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub source: Option<SourceHypothesis>,
    #[serde(default)]
    pub source_path: Option<PathBuf>,
    #[serde(default)]
    pub source_trainer: SourceTrainer,
    pub loss: LossSpec,
    #[serde(default = "KernelSpec::linear")]
    pub kernel: KernelSpec,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Upper bound on the source loss; estimated when absent.
    #[serde(default)]
    pub m_s: Option<f64>,
    /// Where `audit` writes its per-index table.
    #[serde(default)]
    pub details_csv: Option<PathBuf>,
    /// Where `fit` writes the model when `--out` is not given.
    #[serde(default)]
    pub model_out: Option<PathBuf>,
}

pub struct Problem {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub source: SourceHypothesis,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|source| HtlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::from(HtlError::Parse(format!("{}: {e}", path.display()))))
}

/// Loads a dataset file. Any failure, including malformed content, is reported as an I/O failure.
fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    Dataset::from_csv_path(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

impl ProblemConfig {
    /// Resolves relative paths against `base`.
    pub fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.train,
            &mut self.test,
            &mut self.source_path,
            &mut self.details_csv,
            &mut self.model_out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn load(&self, seed: Option<u64>) -> Result<Problem, Failure> {
        self.loss.validate()?;
        self.kernel.validate()?;
        self.solver.validate()?;
        let scenario = self.scenario.map(|s| match seed {
            Some(seed) => s.with_seed(seed),
            None => s,
        });
        let (train, test) = match (&self.train, scenario) {
            (Some(train), _) => (
                load_dataset(train)?,
                self.test.as_deref().map(load_dataset).transpose()?,
            ),
            (None, Some(sc)) => (
                make_target(&sc, Split::Train)?,
                Some(make_target(&sc, Split::Test)?),
            ),
            (None, None) => {
                return Err(HtlError::Config("either `train` or `scenario` must be given".into()).into())
            }
        };
        let source = match (&self.source, &self.source_path, scenario) {
            (Some(s), None, _) => s.clone(),
            (None, Some(p), _) => read_json(p)?,
            (None, None, Some(sc)) => self.source_trainer.train(&make_source(&sc)?, &self.solver)?,
            (Some(_), Some(_), _) => {
                return Err(HtlError::Config("give only one of `source` and `source_path`".into()).into())
            }
            (None, None, None) => {
                return Err(HtlError::Config(
                    "a source hypothesis is required (`source` or `source_path`)".into(),
                )
                .into())
            }
        };
        source.check_dim(train.dim())?;
        Ok(Problem { train, test, source })
    }
}

impl Problem {
    pub fn require_test(&self) -> Result<&Dataset, Failure> {
        self.test
            .as_ref()
            .ok_or_else(|| HtlError::Config("this command needs a `test` dataset".into()).into())
    }

    /// Training and test features together.
    pub fn pooled(&self) -> Result<Dataset, Failure> {
        match &self.test {
            None => Ok(self.train.clone()),
            Some(t) => {
                let mut labels = self.train.labels().to_vec();
                labels.extend_from_slice(t.labels());
                Ok(Dataset::new(self.train.features().concat(t.features())?, labels)?)
            }
        }
    }
}
