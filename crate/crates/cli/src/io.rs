//! File plumbing, run provenance and exit codes.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use failmodel::pipeline::PipelineConfig;
use failmodel::testdata::{parse_shot_csv_with, TestCampaign};
use failmodel::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InsufficientData(_) | Error::NoFailures => 3,
            Error::Infeasible { .. } | Error::Optimization(_) | Error::Inference(_) => 4,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Provenance stamped into every output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub version: String,
}

impl RunInfo {
    pub fn new(command: &str, config: &PipelineConfig, master_seed: u64) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        Self {
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(&canonical)),
            master_seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// First line of every CSV output.
    pub fn csv_comment(&self) -> String {
        format!(
            "# failmodel {} command={} config_sha256={} master_seed={}\n",
            self.version, self.command, self.config_sha256, self.master_seed
        )
    }
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    serde_json::from_str(&read_to_string(path)?).map_err(|e| CliError::io(path, e))
}

pub fn load_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    let config = match path {
        Some(p) => read_json(p)?,
        None => PipelineConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

pub fn load_campaign(path: &Path, normalizer_kv: Option<f64>) -> CliResult<TestCampaign> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_shot_csv_with(file, normalizer_kv).map_err(|e| {
        let c = CliError::from(e);
        CliError {
            message: format!("{}: {}", path.display(), c.message),
            ..c
        }
    })
}

pub struct OutDir {
    dir: PathBuf,
    run: RunInfo,
}

impl OutDir {
    pub fn create(dir: &Path, run: RunInfo) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            run,
        })
    }

    pub fn run(&self) -> &RunInfo {
        &self.run
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let p = self.path(name);
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::io(&p, e))?;
        s.push('\n');
        fs::write(&p, s).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    /// Writes the provenance comment, then whatever `body` emits.
    pub fn write_csv<F>(&self, name: &str, body: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut Vec<u8>) -> failmodel::Result<()>,
    {
        let p = self.path(name);
        let mut buf = self.run.csv_comment().into_bytes();
        body(&mut buf)?;
        fs::write(&p, buf).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }
}

/// Voltages one per line; the first field of a CSV line is used.
pub fn parse_voltages(path: &Path, text: &str) -> CliResult<Vec<f64>> {
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() || field.starts_with('#') {
            continue;
        }
        let header = std::mem::take(&mut first);
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Err(_) if header => continue,
            _ => {
                return Err(CliError::usage(format!(
                    "{}: line {}: `{field}` is not a voltage",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}
