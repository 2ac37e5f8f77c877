use crate::backend::BackendError;
use crate::data::DataError;
use crate::datatools::DataToolError;
use crate::eval::EvalError;
use crate::prompt::PromptError;
use crate::scoring::ScoringError;
use crate::synthetic::SyntheticError;
use crate::templates::TemplateError;
use crate::training::TrainingError;

/// Any library error, tagged with the module it came from.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    DataTool(#[from] DataToolError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
}

impl Error {
    /// Short category tag for reports and exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Template(_) => "template",
            Error::Backend(_) => "backend",
            Error::Scoring(_) => "scoring",
            Error::Prompt(_) => "prompt",
            Error::Training(_) => "training",
            Error::Eval(_) => "eval",
            Error::DataTool(_) => "datatools",
            Error::Synthetic(_) => "synthetic",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_follow_the_source_module() {
        let e: Error = EvalError::Empty.into();
        assert_eq!(e.category(), "eval");
        let e: Error = BackendError::Config("x".into()).into();
        assert_eq!(e.category(), "backend");
        assert_eq!(e.to_string(), "invalid backend configuration: x");
    }
}
