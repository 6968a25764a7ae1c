use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use regime_hjm::config::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{self, Action, Stage};
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "regime-hjm";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Everything needed to rerun a command and check its outputs byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub run: Action,
    pub config_path: Option<String>,
    pub config_sha256: String,
    pub config_text: String,
    pub seed: u64,
    pub overrides: Overrides,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
    pub stages: Vec<Stage>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest(path: &Path, label: String) -> CliResult<FileDigest> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(FileDigest { file: label, sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

pub fn manifest_file(action: &Action) -> String {
    format!("manifest-{}.json", action.name())
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// A command together with its configuration text and overrides.
pub struct Invocation {
    pub action: Action,
    pub config_path: Option<String>,
    pub config_text: String,
    pub overrides: Overrides,
    pub out: PathBuf,
}

/// Runs the command, writes its manifest, and returns it together with any
/// verification failure (outputs are written either way).
pub fn execute(inv: &Invocation) -> CliResult<(Manifest, Option<CliError>)> {
    let started_at = now();
    let mut cfg = ModelConfig::from_json(&inv.config_text)?;
    if let Some(seed) = inv.overrides.seed {
        cfg.sim.seed = seed;
    }
    if let Some(paths) = inv.overrides.paths {
        cfg.sim.n_paths = paths;
        cfg.verify.mc_paths = paths;
    }
    cfg.validate()?;
    let inputs = match &inv.action {
        Action::Verify { override_curves: Some(p) } => {
            let abs = std::fs::canonicalize(p).map_err(|e| CliError::io(p, e))?;
            vec![digest(p, abs.display().to_string())?]
        }
        _ => Vec::new(),
    };
    let outcome = commands::run(&inv.action, &cfg, &inv.out)?;
    let outputs = outcome
        .outputs
        .iter()
        .map(|p| {
            let label = p.strip_prefix(&inv.out).unwrap_or(p).display().to_string();
            digest(p, label)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        run: inv.action.clone(),
        config_path: inv.config_path.clone(),
        config_sha256: sha256_hex(inv.config_text.as_bytes()),
        config_text: inv.config_text.clone(),
        seed: cfg.sim.seed,
        overrides: inv.overrides.clone(),
        started_at,
        finished_at: now(),
        exit_code: outcome.failure.as_ref().map_or(0, CliError::exit_code),
        stages: outcome.stages,
        inputs,
        outputs,
    };
    let path = inv.out.join(manifest_file(&inv.action));
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok((manifest, outcome.failure))
}

pub fn load(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Reruns a recorded command into `out` and compares every output digest.
/// Returns the per-file comparison lines.
pub fn replay(recorded: &Manifest, out: &Path) -> CliResult<Vec<String>> {
    if sha256_hex(recorded.config_text.as_bytes()) != recorded.config_sha256 {
        return Err(CliError::Invalid("manifest config text does not match its sha256".into()));
    }
    for input in &recorded.inputs {
        let now = digest(Path::new(&input.file), input.file.clone())?;
        if now.sha256 != input.sha256 {
            return Err(CliError::Invalid(format!("input {} changed since the recorded run", input.file)));
        }
    }
    let mut action = recorded.run.clone();
    if let Action::Simulate { paths_out: Some(p) } = &mut action {
        if p.is_absolute() {
            *p = p.file_name().map(PathBuf::from).unwrap_or_else(|| p.clone());
        }
    }
    let inv = Invocation {
        action,
        config_path: recorded.config_path.clone(),
        config_text: recorded.config_text.clone(),
        overrides: recorded.overrides.clone(),
        out: out.to_path_buf(),
    };
    let (fresh, failure) = execute(&inv)?;
    let code = failure.as_ref().map_or(0, CliError::exit_code);
    if code != recorded.exit_code {
        return Err(CliError::Verification(format!("exit code {code} differs from recorded {}", recorded.exit_code)));
    }
    let mut lines = Vec::new();
    let mut mismatched = Vec::new();
    let name = |f: &FileDigest| Path::new(&f.file).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for old in &recorded.outputs {
        let name = name(old);
        match fresh.outputs.iter().find(|f| Path::new(&f.file).ends_with(&name)) {
            Some(f) if f.sha256 == old.sha256 => lines.push(format!("identical {} {}", name, f.sha256)),
            _ => {
                lines.push(format!("differs {name}"));
                mismatched.push(name);
            }
        }
    }
    if mismatched.is_empty() {
        Ok(lines)
    } else {
        Err(CliError::Verification(format!("replayed outputs differ: {}", mismatched.join(", "))))
    }
}
