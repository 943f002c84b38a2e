use std::fmt;
use std::path::Path;

use serde::Serialize;

/// Failure reported as one JSON object on stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        CliError { kind, message: message.to_string() }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::new("io", format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

macro_rules! from_lib {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e)
            }
        })*
    };
}

from_lib! {
    o2proxy::archsim::ArchError => "arch",
    o2proxy::kernels::KernelError => "kernel",
    o2proxy::initcomm::InitError => "initcomm",
    o2proxy::verify::VerifyError => "verify",
    o2proxy::profile::ProfileError => "profile",
    serde_json::Error => "json",
}

/// Line to stdout; a closed pipe is not an error worth panicking over.
macro_rules! emit {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}
