use thiserror::Error;

/// Errors raised while validating inputs, evaluating likelihoods, or running chains.
///
/// Respondent, question and category values carried in variants are 1-based,
/// matching the external data files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("CategoryOutOfRange: respondent {respondent}, question {question} has category {value} outside 1..={max}")]
    CategoryOutOfRange {
        respondent: usize,
        question: usize,
        value: i64,
        max: usize,
    },
    #[error("EmptyRow: respondent {0} has no observed responses")]
    EmptyRow(usize),
    #[error("EmptyColumn: question {0} has no observed responses")]
    EmptyColumn(usize),
    #[error("BadCategoryCount: question {question} declares {count} categories (need at least 2)")]
    BadCategoryCount { question: usize, count: usize },
    #[error("RaggedTable: row {row} has {found} columns, expected {expected}")]
    RaggedTable {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("NonFiniteInput: {0}")]
    NonFiniteInput(&'static str),
    #[error("UnorderedBins: interior bin edges must be strictly increasing")]
    UnorderedBins,
    #[error("NotABijection: permutation is not a bijection on 1..={0}")]
    NotABijection(usize),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidParameter: {0}")]
    InvalidParameter(String),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("NonFiniteLikelihood at iteration {0}")]
    NonFiniteLikelihood(usize),
    #[error("NoSamples: burn-in plus sampling iterations must be at least 1 and sampling iterations at least 1")]
    NoSamples,
    #[error("TooManyCategoriesForPermutationSearch: question {question} has {count} categories (max 8)")]
    TooManyCategoriesForPermutationSearch { question: usize, count: usize },
    #[error("InvalidDimensions: {0}")]
    InvalidDimensions(String),
    #[error("ZeroTruthNorm: ground-truth {0} vector has zero norm")]
    ZeroTruthNorm(&'static str),
    #[error("PunctureMakesRowEmpty: respondent {0} would lose every observation")]
    PunctureMakesRowEmpty(usize),
    #[error("PunctureMakesColumnEmpty: question {0} would lose every observation")]
    PunctureMakesColumnEmpty(usize),
    #[error("MissingPrediction: no imputed value for respondent {respondent}, question {question}")]
    MissingPrediction { respondent: usize, question: usize },
    #[error("NonFiniteIntegrand: mutual-information integrand is not finite")]
    NonFiniteIntegrand,
    #[error("repetition {repetition}: {source}")]
    Repetition {
        repetition: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("Parse: {0}")]
    Parse(String),
    #[error("Io: {0}")]
    Io(String),
}

impl Error {
    /// Short variant name, used by the CLI when reporting validation failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::CategoryOutOfRange { .. } => "CategoryOutOfRange",
            Error::EmptyRow(_) => "EmptyRow",
            Error::EmptyColumn(_) => "EmptyColumn",
            Error::BadCategoryCount { .. } => "BadCategoryCount",
            Error::RaggedTable { .. } => "RaggedTable",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::UnorderedBins => "UnorderedBins",
            Error::NotABijection(_) => "NotABijection",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::NonFiniteLikelihood(_) => "NonFiniteLikelihood",
            Error::NoSamples => "NoSamples",
            Error::TooManyCategoriesForPermutationSearch { .. } => {
                "TooManyCategoriesForPermutationSearch"
            }
            Error::InvalidDimensions(_) => "InvalidDimensions",
            Error::ZeroTruthNorm(_) => "ZeroTruthNorm",
            Error::PunctureMakesRowEmpty(_) => "PunctureMakesRowEmpty",
            Error::PunctureMakesColumnEmpty(_) => "PunctureMakesColumnEmpty",
            Error::MissingPrediction { .. } => "MissingPrediction",
            Error::NonFiniteIntegrand => "NonFiniteIntegrand",
            Error::Repetition { source, .. } => source.name(),
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFiniteLikelihood(_) | Error::NonFiniteIntegrand => true,
            Error::Repetition { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
