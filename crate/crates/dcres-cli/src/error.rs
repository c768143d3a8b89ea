use dcres::metrics::MetricsError;
use dcres::model::ModelError;
use dcres::sim::SimError;
use dcres::sysid::SysidError;
use dcres::tf::TfError;
use thiserror::Error;

/// Top-level failure of a CLI command, bucketed by exit code.
///
/// Every library error collapses into one of four buckets so scripts can
/// branch on the process status alone: bad inputs (2), numerical trouble
/// (3), a physically unstable or collapsing scenario (4). Plain I/O failures
/// keep the conventional catch-all status 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Instability(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Instability(_) => 4,
        }
    }

    /// Short machine-parsable bucket name used on the first stderr line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io(_) => "io",
            CliError::Config(_) => "config",
            CliError::Numerical(_) => "numerical",
            CliError::Instability(_) => "instability",
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::InvalidParams(_) => CliError::Config(msg),
            ModelError::NonPhysicalState { .. } | ModelError::Infeasible { .. } => {
                CliError::Instability(msg)
            }
            ModelError::NotConverged => CliError::Numerical(msg),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        let msg = e.to_string();
        match e {
            SimError::InvalidSchedule(_)
            | SimError::InvalidSecondary(_)
            | SimError::TimeStepTooCoarse { .. }
            | SimError::EmptyWindow { .. }
            | SimError::InvalidTrajectory(_) => CliError::Config(msg),
            SimError::NonPhysicalState { .. } => CliError::Instability(msg),
            SimError::Model(m) => m.into(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<TfError> for CliError {
    fn from(e: TfError) -> Self {
        let msg = e.to_string();
        match e {
            TfError::UnstableModel { .. } | TfError::UnstablePoles { .. } => {
                CliError::Instability(msg)
            }
            TfError::InvalidGrid(_) => CliError::Config(msg),
            TfError::PoleOnAxis { .. }
            | TfError::ImproperTf { .. }
            | TfError::Unbounded { .. }
            | TfError::DefectiveMatrix { .. }
            | TfError::NotConjugateClosed(_)
            | TfError::NumericalFailure(_) => CliError::Numerical(msg),
        }
    }
}

impl From<SysidError> for CliError {
    fn from(e: SysidError) -> Self {
        let msg = e.to_string();
        match e {
            SysidError::InvalidPlan(_)
            | SysidError::InvalidSamples(_)
            | SysidError::TooFewSamples { .. }
            | SysidError::WindowTooShort { .. } => CliError::Config(msg),
            SysidError::NotSettled { .. }
            | SysidError::RankDeficient
            | SysidError::NumericalFailure(_) => CliError::Numerical(msg),
            SysidError::Model(m) => m.into(),
            SysidError::Sim(s) => s.into(),
            SysidError::Tf(t) => t.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_bucket() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(CliError::Instability("x".into()).exit_code(), 4);
        let io = CliError::from(std::io::Error::other("x"));
        assert_eq!(io.exit_code(), 1);
    }

    #[test]
    fn library_errors_land_in_the_right_bucket() {
        let infeasible: CliError = ModelError::Infeasible {
            p_load: 1.0,
            p_max: 0.5,
        }
        .into();
        assert_eq!(infeasible.exit_code(), 4);

        let collapse: CliError = SimError::NonPhysicalState {
            time: 1.0,
            v_bus: -2.0,
        }
        .into();
        assert_eq!(collapse.exit_code(), 4);

        let coarse: CliError = SimError::TimeStepTooCoarse {
            dt: 1.0,
            limit: 0.1,
        }
        .into();
        assert_eq!(coarse.exit_code(), 2);

        let singular: CliError = SysidError::RankDeficient.into();
        assert_eq!(singular.exit_code(), 3);

        let drift: CliError = SysidError::NotSettled {
            omega: 1.0,
            drift: 1.0,
            response: 1.0,
        }
        .into();
        assert_eq!(drift.exit_code(), 3);

        let unstable: CliError = TfError::UnstableModel { max_re: 0.1 }.into();
        assert_eq!(unstable.exit_code(), 4);

        let nested: CliError = SysidError::Model(ModelError::InvalidParams("bad".into())).into();
        assert_eq!(nested.exit_code(), 2);
    }
}
