use std::fmt;

/// Command failure, mapped onto the process exit status.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    /// Invalid input: exit 2.
    Config(String),
    /// A mathematically impossible request: exit 3.
    Refused(String),
    /// The numerics failed: exit 4.
    Numeric(String),
    /// Filesystem trouble: exit 1.
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Refused(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            Failure::Io(_) => "io_error",
            Failure::Config(_) => "config_error",
            Failure::Refused(_) => "refused",
            Failure::Numeric(_) => "numeric_failure",
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) | Failure::Refused(m) | Failure::Numeric(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<rrde::Error> for Failure {
    fn from(e: rrde::Error) -> Self {
        use rrde::Error::*;
        let msg = e.to_string();
        match e {
            Domain(_) | Config(_) | Parse(_) | Backend(_) => Failure::Config(msg),
            Refused(_) => Failure::Refused(msg),
            Overflow(_)
            | Singularity(_)
            | Integrator(_)
            | Invariant(_)
            | Unbounded(_)
            | Method(_)
            | Construction { .. } => Failure::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Failure::from(rrde::Error::Config("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(rrde::Error::Backend("x".into())).exit_code(), 2);
        assert_eq!(Failure::from(rrde::Error::Refused("x".into())).exit_code(), 3);
        assert_eq!(Failure::from(rrde::Error::Singularity("x".into())).exit_code(), 4);
        assert_eq!(Failure::from(rrde::Error::Construction { step: 1, reason: "x".into() }).exit_code(), 4);
    }
}
