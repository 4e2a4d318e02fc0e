use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid score scale: {0}")]
    InvalidScale(String),
    #[error("label not on scale: {score} ({context})")]
    OffScale { score: f64, context: String },
    #[error("duplicate essay_id {0}")]
    DuplicateEssay(String),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("unknown prompt {0}")]
    UnknownPrompt(String),
    #[error("unknown trait {0}")]
    UnknownTrait(String),
    #[error("no score scale declared for trait {trait_id} on prompt {prompt_id}")]
    MissingScale { trait_id: String, prompt_id: String },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch { what: String, expected: usize, found: usize },
    #[error("missing feature vector for essay {0}")]
    MissingFeatures(String),
    #[error("feature vectors present on some essays but not others (first missing: {0})")]
    MixedFeatures(String),
    #[error("missing context embedding: {0}")]
    MissingContext(String),
    #[error("prompt {0} has no essays")]
    EmptyPrompt(String),
    #[error("class {0} has no support representations")]
    EmptyClass(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("label references class {label} but only {classes} classes exist")]
    UnknownClass { label: usize, classes: usize },
    #[error("episode unavailable: {0}")]
    EpisodeUnavailable(String),
    #[error("forward trace does not match the head configuration")]
    StaleTrace,
    #[error("meta-test task has no prototypes")]
    NoPrototypes,
    #[error("no annotated training essays for trait {trait_id} (query prompt {prompt_id})")]
    NoTrainingEssays { trait_id: String, prompt_id: String },
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("level {level} out of range for {n_levels} levels")]
    LevelOutOfRange { level: usize, n_levels: usize },
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}
