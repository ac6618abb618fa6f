use std::fmt;

pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// An error paired with the process exit code it maps to.
pub struct Failure {
    pub code: i32,
    pub err: anyhow::Error,
}

impl Failure {
    pub fn check(msg: impl fmt::Display) -> Self {
        Failure { code: EXIT_CHECK, err: anyhow::anyhow!("{msg}") }
    }

    pub fn diverged(err: anyhow::Error) -> Self {
        Failure { code: EXIT_DIVERGED, err }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        match err.downcast_ref::<sketchembed::Error>() {
            Some(sketchembed::Error::NonFinite(_)) => Failure { code: EXIT_DIVERGED, err },
            _ => Failure { code: EXIT_USAGE, err },
        }
    }
}

impl From<sketchembed::Error> for Failure {
    fn from(err: sketchembed::Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure { code: EXIT_USAGE, err: err.into() }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(err: serde_json::Error) -> Self {
        Failure { code: EXIT_USAGE, err: err.into() }
    }
}

pub type CmdResult = Result<(), Failure>;
