use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input waveform is silent (all samples zero)")]
    SilentInput,
    #[error("waveform is empty")]
    EmptyWaveform,
    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    SampleRate { got: u32, expected: u32 },
    #[error("segment too short: {got} available, {needed} required")]
    TooShort { got: usize, needed: usize },
    #[error("no voiced interval survived preprocessing")]
    NoSpeech,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("embedding has zero norm")]
    DegenerateEmbedding,
    #[error("centroid of speaker {0} has zero norm")]
    DegenerateCentroid(usize),
    #[error("zero-norm vector cannot be scored")]
    DegenerateInput,
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("speaker index {index} out of range for {len} speakers")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("at least 2 utterances per speaker are required, got {0}")]
    InsufficientUtterances(usize),
    #[error("speaker `{speaker}` has {have} utterances, M = {m} needs {}", 2 * m)]
    TooFewForEnrollment { speaker: String, have: usize, m: usize },
    #[error("corpus has {available} speakers, batch needs {needed}")]
    CorpusTooSmall { available: usize, needed: usize },
    #[error("no trials to score")]
    NoTrials,
    #[error("partition `{0}` has no utterances")]
    PartitionEmpty(&'static str),

    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("duplicate manifest entry ({speaker}, {utterance})")]
    DuplicateEntry { speaker: String, utterance: String },
    #[error("file referenced by manifest does not exist: {0}")]
    MissingFile(PathBuf),
    #[error("speaker `{0}` appears in both training and evaluation splits")]
    OpenSetViolation(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    /// True for failures caused by arithmetic breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_)
                | Error::DegenerateEmbedding
                | Error::DegenerateCentroid(_)
                | Error::DegenerateInput
        )
    }
}
