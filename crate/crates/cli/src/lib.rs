//! File formats and I/O around `latentfill-core`: PNG image/mask files,
//! the checkpoint archive, TOML run configuration, mask manifests, loss
//! logs and evaluation reports. The `latentfill` binary wires these into a
//! command line.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod imagefile;
pub mod losslog;
pub mod manifest;
pub mod report;

/// Error classes surfaced on the command line (one per exit code).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Input,
    Training,
    Internal,
}

impl ErrorClass {
    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config-error",
            ErrorClass::Io => "io-error",
            ErrorClass::Input => "input-error",
            ErrorClass::Training => "train-fault",
            ErrorClass::Internal => "internal-error",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Input => 4,
            ErrorClass::Training => 5,
            ErrorClass::Internal => 70,
        }
    }
}

/// Classify an error chain for exit-code reporting.
pub fn classify(err: &anyhow::Error) -> ErrorClass {
    for cause in err.chain() {
        if let Some(core_err) = cause.downcast_ref::<latentfill_core::Error>() {
            return match core_err {
                latentfill_core::Error::RejectedInput(_) => ErrorClass::Input,
                latentfill_core::Error::TrainingFault { .. } => ErrorClass::Training,
                latentfill_core::Error::FormatMismatch(_) => ErrorClass::Config,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return ErrorClass::Io;
        }
        if cause.downcast_ref::<toml::de::Error>().is_some() {
            return ErrorClass::Config;
        }
        if cause.downcast_ref::<image::ImageError>().is_some() {
            return ErrorClass::Io;
        }
    }
    ErrorClass::Internal
}
