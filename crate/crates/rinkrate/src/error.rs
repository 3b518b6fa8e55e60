use std::path::Path;

/// Crate-wide error type. Variants map onto process exit codes so the CLI can
/// report failures uniformly: usage/config problems exit 1, bad input data
/// exits 2, numerical failures exit 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}{}: {message}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Data {
        path: String,
        /// 1-based line in the offending file, when attributable to one.
        line: Option<u64>,
        message: String,
    },

    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn data(path: &str, line: Option<u64>, message: impl Into<String>) -> Self {
        Error::Data {
            path: path.to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn numerical(context: &str, message: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code for this error class: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) => 1,
            Error::Io { .. } | Error::Data { .. } => 2,
            Error::Numerical { .. } => 3,
        }
    }

    /// Machine-readable form printed to stderr by the CLI.
    pub fn to_json(&self) -> String {
        let kind = match self {
            Error::Usage(_) => "usage",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Data { .. } => "data",
            Error::Numerical { .. } => "numerical",
        };
        let mut obj = serde_json::Map::new();
        obj.insert("error".into(), kind.into());
        obj.insert("message".into(), self.to_string().into());
        if let Error::Data { path, line, .. } = self {
            obj.insert("path".into(), path.as_str().into());
            if let Some(l) = line {
                obj.insert("line".into(), (*l).into());
            }
        }
        serde_json::Value::Object(obj).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(Error::Usage("x".into()).exit_code(), 1);
        assert_eq!(Error::Config("x".into()).exit_code(), 1);
        assert_eq!(Error::data("f.csv", Some(3), "bad field").exit_code(), 2);
        assert_eq!(Error::numerical("fit", "diverged").exit_code(), 3);
    }

    #[test]
    fn data_error_reports_file_and_line() {
        let e = Error::data("events.csv", Some(17), "duration must be positive");
        assert_eq!(e.to_string(), "events.csv:17: duration must be positive");
        let json: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(json["error"], "data");
        assert_eq!(json["line"], 17);
    }
}
