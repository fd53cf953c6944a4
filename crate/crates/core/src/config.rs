//! The run configuration document shared by the library and the CLI.

use std::path::Path;

use crate::error::{Error, Result};
pub use crate::trainer::TrainConfig as RunConfig;

/// Environment variable overriding the configured global seed.
pub const SEED_ENV: &str = "PEMORL_SEED";

/// Name of the resolved configuration written next to every run's outputs.
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Reads and validates a TOML run configuration; unknown keys are rejected.
pub fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Applies `PEMORL_SEED` when set to a valid integer.
pub fn apply_seed_env(cfg: &mut RunConfig, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        cfg.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
    }
    Ok(())
}

/// Writes the fully resolved configuration (with its hash as a comment) into
/// `dir`.
pub fn write_resolved(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(RESOLVED_CONFIG_FILE);
    let text = format!("# config_hash = {}\n{}", cfg.hash(), cfg.to_toml_string());
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
