//! Writes a simulated world to disk as datasets, oracle registrations and an
//! experiment config that refers to them by relative path.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::dataset::write_dataset;
use crate::attacks::AttackKind;
use crate::error::{Error, Result};
use crate::oracle::{OracleRegistration, SimulatedDataset};

pub const CONFIG_FILE: &str = "experiment.toml";

/// Writes `data` under `dir` and returns the path of the config file.
pub fn write_simulated_workspace(dir: &Path, data: &SimulatedDataset, attack: AttackKind) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        ("targets.jsonl", data.target_pool()),
        ("reference_members.jsonl", data.reference_members.clone()),
        ("reference_nonmembers.jsonl", data.reference_nonmembers.clone()),
        ("shadow.jsonl", data.shadow_pool()),
    ];
    for (name, samples) in &files {
        write_dataset(&dir.join(name), samples)?;
    }
    for registration in [&data.target, &data.shadow] {
        OracleRegistration::Simulated(registration.clone()).save(&dir.join(format!("{}.json", registration.id)))?;
    }

    let mut config = ExperimentConfig::new(attack);
    config.oracles.target = data.target.id.clone();
    config.oracles.shadow = data.shadow.id.clone();
    config.oracles.registrations = vec![
        PathBuf::from(format!("{}.json", data.target.id)),
        PathBuf::from(format!("{}.json", data.shadow.id)),
    ];
    config.data.targets = Some("targets.jsonl".into());
    config.data.reference_members = Some("reference_members.jsonl".into());
    config.data.reference_nonmembers = Some("reference_nonmembers.jsonl".into());
    config.data.shadow = Some("shadow.jsonl".into());
    config.cache_dir = Some("cache".into());
    config.output_dir = Some("out".into());
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config.to_toml()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
