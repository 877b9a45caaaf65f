use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("audio file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported audio encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },
    #[error("zero-length audio stream: {0}")]
    EmptyAudio(PathBuf),
    #[error("refusing to write an empty clip to {0}")]
    EmptyClip(PathBuf),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),
    #[error("clip too short: need at least {need} samples, got {got}")]
    ClipTooShort { need: usize, got: usize },
    #[error("clip has no tonal energy (silent or near-silent)")]
    NoTonalEnergy,
    #[error("onset envelope is flat; cannot estimate tempo")]
    FlatOnsetEnvelope,
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("manifest error at line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("duplicate stem (song_id={song_id}, class={class})")]
    DuplicateStem { song_id: String, class: String },
    #[error("unknown song id: {0}")]
    UnknownSong(String),
    #[error("database index error: {0}")]
    DbIndex(String),
    #[error("no vocal stems in database")]
    NoVocalStems,
    #[error("no candidates for pinned seed {0}")]
    NoCandidates(String),
    #[error("retry budget exhausted after {0} seed redraws")]
    RetryBudgetExhausted(usize),
    #[error("stems have no temporal overlap after alignment")]
    EmptyOverlap,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) at step {0}")]
    Diverged(usize),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("too few beats: need {need}, got {got}")]
    TooFewBeats { need: usize, got: usize },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
