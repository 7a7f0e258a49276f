//! Run configuration: TOML sections merged under command-line flags.
//!
//! A config file holds an optional `[source]` table shared by every
//! subcommand that samples a synthetic source, plus one table per subcommand
//! (`[sweep]`, `[wz]`, ...). Keys are the long flag names in snake case.
//! Precedence: explicit flag, then config file, then built-in default.

use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, Command, FromArgMatches};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::Failure;

pub fn read(path: &Path) -> Result<toml::Table, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("config {}: {e}", path.display())))?;
    text.parse::<toml::Table>().map_err(|e| Failure::Invalid(format!("config {}: {e}", path.display())))
}

fn section<'a>(cfg: &'a toml::Table, name: &str) -> Result<Option<&'a toml::Table>, Failure> {
    match cfg.get(name) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t)),
        Some(_) => Err(Failure::Invalid(format!("config key {name:?} must be a table"))),
    }
}

/// Checks that every top-level key names a known section.
pub fn check_sections(cfg: &toml::Table, known: &[&str]) -> Result<(), Failure> {
    for k in cfg.keys() {
        if k != "source" && !known.contains(&k.as_str()) {
            return Err(Failure::Invalid(format!("unknown config section [{k}]")));
        }
    }
    Ok(())
}

/// Parameters for subcommand `name` from its matches and an optional config.
pub fn resolve<P>(name: &str, sub: &ArgMatches, cfg: Option<&toml::Table>) -> Result<P, Failure>
where
    P: Args + FromArgMatches + Serialize + DeserializeOwned,
{
    let cli = P::from_arg_matches(sub).map_err(|e| Failure::Usage(e.to_string()))?;
    let Some(cfg) = cfg else { return Ok(cli) };
    let cmd = P::augment_args(Command::new("params"));
    let ids: Vec<String> = cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    let mut merged = toml::Table::new();
    if let Some(src) = section(cfg, "source")? {
        for (k, v) in src {
            if ids.contains(k) {
                merged.insert(k.clone(), v.clone());
            }
        }
    }
    if let Some(own) = section(cfg, name)? {
        for (k, v) in own {
            if !ids.contains(k) {
                return Err(Failure::Invalid(format!("unknown key {k:?} in [{name}]")));
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    let from_cli = toml::Table::try_from(&cli).map_err(|e| Failure::Invalid(e.to_string()))?;
    for id in &ids {
        let explicit = sub.value_source(id) == Some(ValueSource::CommandLine);
        if explicit || !merged.contains_key(id) {
            match from_cli.get(id) {
                Some(v) => {
                    merged.insert(id.clone(), v.clone());
                }
                None => {
                    if explicit {
                        merged.remove(id);
                    }
                }
            }
        }
    }
    merged.try_into().map_err(|e: toml::de::Error| Failure::Invalid(format!("config [{name}]: {}", e.message())))
}
