use std::fmt;

use serde::Serialize;

/// Pipeline step at which a run failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Ingest,
    Simulate,
    Estimate,
    Measure,
    Quantiles,
    Inference,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        write!(f, "{}", s.as_ref().and_then(|v| v.as_str()).unwrap_or("unknown"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Config,
    Data,
    Numerical,
}

#[derive(Clone, Debug, PartialEq, thiserror::Error, Serialize)]
#[error("{stage}: {message}")]
pub struct Failure {
    pub stage: Stage,
    pub class: Class,
    pub message: String,
}

impl Failure {
    pub fn config(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, class: Class::Config, message: message.into() }
    }

    pub fn data(stage: Stage, message: impl Into<String>) -> Self {
        Self { stage, class: Class::Data, message: message.into() }
    }

    /// Classifies a core error raised during `stage`.
    pub fn core(stage: Stage, e: specnorm::Error) -> Self {
        use specnorm::Error as E;
        let class = match e {
            E::InvalidPlan(_) | E::InvalidArgument(_) | E::Dimension(_) | E::MissingQuantile(_) => Class::Config,
            E::SeriesTooShort { .. } => Class::Data,
            E::Cache(_) => Class::Data,
            _ => Class::Numerical,
        };
        Self { stage, class, message: e.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            Class::Config => 2,
            Class::Data => 3,
            Class::Numerical => 4,
        }
    }
}

/// Attaches a stage to core results.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, Failure>;
}

impl<T> AtStage<T> for specnorm::Result<T> {
    fn at(self, stage: Stage) -> Result<T, Failure> {
        self.map_err(|e| Failure::core(stage, e))
    }
}
