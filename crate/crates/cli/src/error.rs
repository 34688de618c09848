use serde::Serialize;

/// Process exit codes, as listed by `--help`.
pub const EXIT_CODES: &[(i32, &str)] = &[
    (0, "success"),
    (1, "other failure"),
    (2, "usage: unknown subcommand, flag or malformed argument"),
    (3, "invalid configuration"),
    (4, "I/O failure"),
    (5, "malformed or unusable data"),
    (6, "numeric failure (non-finite values, divergence)"),
    (7, "verification suite reported failures"),
];

/// An error with its exit code; printed to stderr as one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn new(code: i32, kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(2, "usage", message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(3, "config", message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(4, "io", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(5, "data", message)
    }

    pub fn verify(message: impl Into<String>) -> Self {
        Self::new(7, "verify", message)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

impl From<lockout::Error> for CliError {
    fn from(e: lockout::Error) -> Self {
        use lockout::Error as E;
        let message = e.to_string();
        match e {
            E::Config(_) => Self::new(3, "config", message),
            E::Io(_) => Self::new(4, "io", message),
            E::Shape(_)
            | E::Argument(_)
            | E::Format { .. }
            | E::MissingValue { .. }
            | E::Csv(_)
            | E::Json(_) => Self::new(5, "data", message),
            E::NonFinite { .. }
            | E::Numeric(_)
            | E::UndefinedMetric(_)
            | E::Diverged { .. }
            | E::PathDiverged { .. } => Self::new(6, "numeric", message),
            E::Oracle(_) => Self::new(1, "other", message),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_and_documented() {
        let mut codes: Vec<i32> = EXIT_CODES.iter().map(|c| c.0).collect();
        codes.dedup();
        assert_eq!(codes.len(), EXIT_CODES.len());
        let e: CliError = lockout::Error::Numeric("x".into()).into();
        assert_eq!(e.code, 6);
        let e: CliError = lockout::Error::Config("x".into()).into();
        assert_eq!(e.code, 3);
        assert!(e.to_json().starts_with("{\"code\":3"));
    }
}
