//! Configuration resolution and the run manifest.
//!
//! Every subcommand accepts an optional flat `key=value` config file plus
//! command-line flags; flags override file entries, file entries override
//! defaults. The fully resolved configuration is echoed into the manifest
//! together with a SHA-256 hash of its canonical serialization, so two runs
//! can be compared without diffing flag spellings.
//!
//! The output directory is deliberately excluded from the echo and the hash:
//! it determines where results land, not what they are.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};

use crate::errors::{Classify, CliError, CliResult};

/// Parses a flat `key=value` file. Blank lines and `#` comments are skipped;
/// duplicate keys are rejected so a file cannot silently contradict itself.
pub fn read_config_file(path: &Path) -> CliResult<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))
        .or_validation()?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| {
                CliError::validation(anyhow!(
                    "{}:{}: expected key=value, got {:?}",
                    path.display(),
                    idx + 1,
                    line
                ))
            })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(CliError::validation(anyhow!(
                "{}:{}: empty key",
                path.display(),
                idx + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(CliError::validation(anyhow!(
                "{}:{}: duplicate key {:?}",
                path.display(),
                idx + 1,
                key
            )));
        }
    }
    Ok(map)
}

/// Resolves each setting from flag, then config file, then default, recording
/// the outcome in canonical form. `finish` rejects unconsumed file keys, so a
/// typo in a config file is an error rather than a silent no-op.
pub struct Resolver {
    file: BTreeMap<String, String>,
    consumed: BTreeSet<String>,
    echo: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Resolver { file, consumed: BTreeSet::new(), echo: BTreeMap::new() }
    }

    fn file_value(&mut self, key: &str) -> Option<String> {
        let v = self.file.get(key).cloned();
        if v.is_some() {
            self.consumed.insert(key.to_string());
        }
        v
    }

    fn record(&mut self, key: &str, value: String) {
        self.echo.insert(key.to_string(), value);
    }

    /// Scalar with a default. The echoed form is the value's `Display`
    /// output, so equivalent spellings hash identically. A file entry
    /// counts as consumed even when a flag overrides it.
    pub fn scalar<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file_value(key);
        let value = match flag {
            Some(v) => v,
            None => match from_file {
                Some(raw) => parse_as(key, &raw)?,
                None => default,
            },
        };
        self.record(key, value.to_string());
        Ok(value)
    }

    /// Scalar that must come from a flag or the file.
    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file_value(key);
        let value = match flag {
            Some(v) => v,
            None => match from_file {
                Some(raw) => parse_as(key, &raw)?,
                None => {
                    return Err(CliError::validation(anyhow!(
                        "{key} must be given (flag --{} or config key {key})",
                        key.replace('_', "-")
                    )))
                }
            },
        };
        self.record(key, value.to_string());
        Ok(value)
    }

    /// Scalar that may stay unset (no default). Echoed only when present.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_file = self.file_value(key);
        let value = match flag {
            Some(v) => Some(v),
            None => match from_file {
                Some(raw) => Some(parse_as::<T>(key, &raw)?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.record(key, v.to_string());
        }
        Ok(value)
    }

    /// Comma-separated list of floats.
    pub fn list_f64(
        &mut self,
        key: &str,
        flag: Option<String>,
        default: &[f64],
    ) -> CliResult<Vec<f64>> {
        let from_file = self.file_value(key);
        let raw = flag.or(from_file);
        let values = match raw {
            Some(raw) => parse_list::<f64>(key, &raw)?,
            None => default.to_vec(),
        };
        self.record(key, join_display(&values));
        Ok(values)
    }

    /// Comma-separated list of unsigned integers.
    pub fn list_usize(
        &mut self,
        key: &str,
        flag: Option<String>,
        default: &[usize],
    ) -> CliResult<Vec<usize>> {
        let from_file = self.file_value(key);
        let raw = flag.or(from_file);
        let values = match raw {
            Some(raw) => parse_list::<usize>(key, &raw)?,
            None => default.to_vec(),
        };
        self.record(key, join_display(&values));
        Ok(values)
    }

    /// Boolean switch: the flag can only turn it on, the file may say
    /// true/false explicitly.
    pub fn switch(&mut self, key: &str, flag: bool) -> CliResult<bool> {
        let from_file = self.file_value(key);
        let value = if flag {
            true
        } else {
            match from_file {
                Some(raw) => match raw.as_str() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(CliError::validation(anyhow!(
                            "config key {key}: expected true or false, got {other:?}"
                        )))
                    }
                },
                None => false,
            }
        };
        self.record(key, value.to_string());
        Ok(value)
    }

    /// Normalization margin: the literal `auto` means "derive from the data
    /// range", anything else must parse as a non-negative float.
    pub fn margin(&mut self, flag: Option<String>) -> CliResult<Option<f64>> {
        let from_file = self.file_value("margin");
        let raw = flag.or(from_file).unwrap_or_else(|| "auto".to_string());
        let value = if raw == "auto" {
            None
        } else {
            let m: f64 = parse_as("margin", &raw)?;
            if !m.is_finite() || m < 0.0 {
                return Err(CliError::validation(anyhow!(
                    "margin must be a non-negative finite number or auto, got {raw}"
                )));
            }
            Some(m)
        };
        self.record("margin", match value {
            None => "auto".to_string(),
            Some(m) => m.to_string(),
        });
        Ok(value)
    }

    /// Validates that every file key was consumed and returns the canonical
    /// echo plus its hash.
    pub fn finish(self) -> CliResult<ResolvedConfig> {
        let unknown: Vec<&String> =
            self.file.keys().filter(|k| !self.consumed.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(CliError::validation(anyhow!(
                "unknown config key(s) for this command: {}",
                unknown.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        let sha256 = hash_config(&self.echo);
        Ok(ResolvedConfig { echo: self.echo, sha256 })
    }
}

pub struct ResolvedConfig {
    pub echo: BTreeMap<String, String>,
    pub sha256: String,
}

fn parse_as<T>(key: &str, raw: &str) -> CliResult<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse::<T>().map_err(|e| {
        CliError::validation(anyhow!("config key {key}: cannot parse {raw:?}: {e}"))
    })
}

fn parse_list<T>(key: &str, raw: &str) -> CliResult<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    let items: Result<Vec<T>, _> = raw
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>())
        .collect();
    match items {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => Err(CliError::validation(anyhow!("config key {key}: empty list"))),
        Err(e) => Err(CliError::validation(anyhow!(
            "config key {key}: cannot parse list {raw:?}: {e}"
        ))),
    }
}

fn join_display<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// SHA-256 over `key=value\n` lines in key order.
fn hash_config(echo: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in echo {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        use std::fmt::Write;
        write!(hex, "{byte:02x}").expect("writing to String cannot fail");
    }
    hex
}

/// Run manifest, written as `manifest.json` next to the outputs. Captures
/// everything needed to reproduce or audit the run: the exact resolved
/// configuration, its hash, the seed, and the artifact list.
#[derive(serde::Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub library_version: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_propensity_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_weight_draws: Option<usize>,
    pub config_sha256: String,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(command: &'static str, resolved: &ResolvedConfig) -> Self {
        Manifest {
            tool: "qte",
            tool_version: env!("CARGO_PKG_VERSION"),
            library_version: qte::VERSION,
            command,
            seed: None,
            n_propensity_draws: None,
            n_weight_draws: None,
            config_sha256: resolved.sha256.clone(),
            config: resolved.echo.clone(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join("manifest.json");
        let mut json = serde_json::to_string_pretty(self)
            .context("serializing manifest")
            .or_runtime()?;
        json.push('\n');
        std::fs::write(&path, json)
            .with_context(|| format!("writing {}", path.display()))
            .or_runtime()
    }
}
