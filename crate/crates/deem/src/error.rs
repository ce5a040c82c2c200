use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Cloneable so that cached factorization failures can be replayed to every caller.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DeemError {
    #[error("io error on '{path}': {message}")]
    Io { path: String, message: String },

    #[error("format error in '{path}': {message}")]
    Format { path: String, message: String },

    #[error("duplicate snp_id '{0}'")]
    Duplicate(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("harmonization error: {0}")]
    Harmonization(String),

    #[error("degenerate SNP '{0}': zero variance in reference genotypes")]
    DegenerateSnp(String),

    #[error("block '{block}' is not positive definite")]
    Singular { block: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("selection left no SNPs ({total} candidates, {pruned_pvalue} above the p-value threshold, {pruned_ld} pruned by LD)")]
    SelectionEmpty {
        total: usize,
        pruned_pvalue: usize,
        pruned_ld: usize,
    },

    #[error("estimating equation is undefined at beta = {beta}: Q denominator {denominator} at SNP index {index}")]
    Domain {
        beta: f64,
        index: usize,
        denominator: f64,
    },

    #[error("no sign change of the estimating equation in [{lo}, {hi}] ({evaluations} evaluations)")]
    NoRoot { lo: f64, hi: f64, evaluations: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("study failed: {failed} of {total} replicates failed (first error: {first})")]
    Study {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<DeemError>,
    },
}

impl DeemError {
    pub fn at(self, stage: &'static str) -> DeemError {
        DeemError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &DeemError {
        match self {
            DeemError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            DeemError::Singular { .. }
                | DeemError::Degenerate(_)
                | DeemError::Conditioning(_)
                | DeemError::SelectionEmpty { .. }
                | DeemError::Domain { .. }
                | DeemError::NoRoot { .. }
                | DeemError::Study { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, DeemError>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
