use std::fs;
use std::path::{Path, PathBuf};

use anoca::dms::Setpoint;
use anoca::network::{parse_network, NetworkModel, PhaseId};
use anoca::powerflow::InjectionSet;
use anoca::sim::Profiles;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::CliError;
use crate::manifest::RunManifest;

/// Reads a file and records it in the manifest under `role`.
pub fn read_input(path: &Path, role: &str, manifest: &mut RunManifest) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    manifest.input(role, path, &bytes);
    String::from_utf8(bytes).map_err(|_| CliError::Domain(format!("{}: not UTF-8 text", path.display())))
}

pub fn load_network(path: &Path, manifest: &mut RunManifest) -> Result<NetworkModel, CliError> {
    let text = read_input(path, "network", manifest)?;
    parse_network(&text, Some(path)).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// JSON for a `.json` extension, TOML otherwise.
pub fn parse_structured<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, CliError> {
    let parsed = if is_json(path) {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn read_csv<T: DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| CliError::Domain(format!("{} row {}: {e}", path.display(), i + 1))))
        .collect()
}

#[derive(Deserialize)]
struct InjectionRow {
    bus: String,
    phase: PhaseId,
    p_kw: f64,
    q_kvar: f64,
}

/// `bus,phase,p_kw,q_kvar` rows of net consumption; repeated node-phases add up.
pub fn load_injections(path: &Path, manifest: &mut RunManifest) -> Result<InjectionSet, CliError> {
    let text = read_input(path, "injections", manifest)?;
    let mut set = InjectionSet::new();
    for row in read_csv::<InjectionRow>(path, &text)? {
        set.add(&row.bus, row.phase, row.p_kw, row.q_kvar);
    }
    Ok(set)
}

/// A JSON array of setpoints, or `bus,phase,oes_kw,ois_kw` CSV rows.
pub fn load_setpoints(path: &Path, manifest: &mut RunManifest) -> Result<Vec<Setpoint>, CliError> {
    let text = read_input(path, "setpoints", manifest)?;
    if is_json(path) {
        serde_json::from_str(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
    } else {
        read_csv(path, &text)
    }
}

/// `synthetic`, `no-pv`, or a CSV path relative to `base_dir`.
pub fn load_profiles(
    profile: &str,
    base_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<Profiles, CliError> {
    match profile {
        "synthetic" => Ok(Profiles::synthetic()),
        "no-pv" => Ok(Profiles::without_pv()),
        file => {
            let path = resolve(base_dir, file);
            let text = read_input(&path, "profile", manifest)?;
            Profiles::from_csv(&text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
        }
    }
}

pub fn resolve(base_dir: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

pub fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}
