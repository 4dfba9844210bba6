//! TOML run configurations.
//!
//! The document mirrors [`RunConfig`]: top-level scalars plus `[es]`, `[td3]`,
//! `[buffer]` and `[buffer.ratio]` tables. Anything left out takes its
//! default, so an empty file is a complete configuration.

use std::path::{Path, PathBuf};

use estd3_core::{Error as CoreError, RunConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file `{}` does not exist", path.display())]
    Missing { path: PathBuf },
    #[error("cannot read config file `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config: {message}")]
    Malformed { message: String },
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value for `{key}`: {reason}")]
    OutOfRange { key: String, reason: String },
}

impl ConfigError {
    /// The dotted key the diagnostic is about, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key } | ConfigError::OutOfRange { key, .. } => Some(key),
            _ => None,
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ConfigError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            ConfigError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Malformed {
        message: e.message().to_string(),
    })?;
    // Unknown keys are found by walking the document against the default
    // configuration, which spells out every accepted key.
    let known = toml::Table::try_from(RunConfig::default()).expect("default config serializes");
    if let Some(key) = first_unknown(&doc, &known, "") {
        return Err(ConfigError::UnknownKey { key });
    }
    let config: RunConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Malformed {
            message: e.message().to_string(),
        })?;
    config.validate().map_err(|e| match e {
        CoreError::Config { key, reason } => ConfigError::OutOfRange { key, reason },
        other => ConfigError::Malformed {
            message: other.to_string(),
        },
    })?;
    Ok(config)
}

fn first_unknown(doc: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in doc {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (known.get(k), v) {
            (None, _) => return Some(path),
            (Some(toml::Value::Table(inner)), toml::Value::Table(sub)) => {
                if let Some(found) = first_unknown(sub, inner, &path) {
                    return Some(found);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use estd3_core::{EnvKind, SampleRatio};

    #[test]
    fn empty_document_is_default() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.buffer.ratio, SampleRatio::PAPER);
        assert_eq!(c.es.sigma, 0.005);
        assert_eq!(c.td3.tau, 0.005);
    }

    #[test]
    fn nested_values() {
        let c = parse_config_str(
            r#"
            env = "corridor"
            iterations = 3
            hidden_sizes = [16, 8]
            [es]
            offspring = 4
            shaping = "raw"
            [td3]
            batch_size = 64
            [buffer]
            threshold_mode = "offset"
            [buffer.ratio]
            good = 0.25
            bad = 0.25
            noisy = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.env, EnvKind::Corridor);
        assert_eq!(c.iterations, 3);
        assert_eq!(c.hidden_sizes, vec![16, 8]);
        assert_eq!(c.es.offspring, 4);
        assert_eq!(c.td3.batch_size, 64);
        assert_eq!(c.buffer.ratio.noisy, 0.5);
        assert_eq!(c.td3.gamma, 0.99);
    }

    #[test]
    fn diagnostics_are_distinct() {
        match parse_config_str("sigma = -1") {
            Err(ConfigError::UnknownKey { key }) => assert_eq!(key, "sigma"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("[es]\nsigma = -1") {
            Err(e @ ConfigError::OutOfRange { .. }) => assert_eq!(e.key(), Some("sigma")),
            other => panic!("{other:?}"),
        }
        match parse_config_str("[td3]\nmomentum = 0.9") {
            Err(ConfigError::UnknownKey { key }) => assert_eq!(key, "td3.momentum"),
            other => panic!("{other:?}"),
        }
        match parse_config_str("[buffer.ratio]\ngood = 0.5\nbad = 0.2\nnoisy = 0.2") {
            Err(ConfigError::OutOfRange { key, reason }) => {
                assert_eq!(key, "buffer.ratio");
                assert!(reason.contains("sum to 1"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_config_str("iterations = = 3"),
            Err(ConfigError::Malformed { .. })
        ));
        assert!(matches!(
            parse_config_str("env = \"mujoco\""),
            Err(ConfigError::Malformed { .. })
        ));
        assert!(matches!(
            parse_config("/definitely/not/here.toml"),
            Err(ConfigError::Missing { .. })
        ));
    }
}
