//! Tables, plot data and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use radtrial_core::{Arm, OperatingCharacteristics};
use radtrial_core::simulate::SweepPoint;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const OC_HEADER: [&str; 11] = [
    "design",
    "scenario",
    "subgroup",
    "dose",
    "selection_pct",
    "mean_n_treated",
    "mean_dp",
    "mean_nc",
    "early_stop_pct",
    "n_reps",
    "seed",
];

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

fn oc_fields(oc: &OperatingCharacteristics, arm: Arm) -> Vec<String> {
    let a = oc.arm(arm);
    vec![
        oc.design.label().to_string(),
        oc.scenario.clone(),
        arm.subgroup().label().to_string(),
        arm.dose().label().to_string(),
        fixed(100.0 * a.selection),
        fixed(a.mean_treated),
        fixed(a.mean_progression),
        fixed(a.mean_complication),
        fixed(100.0 * oc.early_stop(arm.subgroup())),
        oc.n_replicates.to_string(),
        oc.master_seed.to_string(),
    ]
}

/// Operating-characteristics table, one row per arm.
pub fn oc_table(oc: &OperatingCharacteristics) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(OC_HEADER)?;
    for arm in Arm::ALL {
        w.write_record(oc_fields(oc, arm))?;
    }
    Ok(w.into_inner()?)
}

/// Sweep table: the OC columns prefixed with the axis and grid value.
pub fn sweep_table(axis: &str, points: &[SweepPoint]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["axis", "value"];
    header.extend(OC_HEADER);
    w.write_record(&header)?;
    for p in points {
        for arm in Arm::ALL {
            let mut row = vec![axis.to_string(), p.value.to_string()];
            row.extend(oc_fields(&p.oc, arm));
            w.write_record(row)?;
        }
    }
    Ok(w.into_inner()?)
}

/// Plot data: two columns (x, y) per series, one row per grid point.
/// Series are each arm's selection probability and its share of the
/// subgroup's patients.
pub fn plot_table(points: &[SweepPoint]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = Vec::new();
    for what in ["selection", "allocation"] {
        for arm in Arm::ALL {
            header.push(format!("x_{}_{what}", arm.key()));
            header.push(format!("{}_{what}", arm.key()));
        }
    }
    w.write_record(&header)?;
    for p in points {
        let mut row = Vec::new();
        for what in ["selection", "allocation"] {
            for arm in Arm::ALL {
                let y = if what == "selection" { p.oc.arm(arm).selection } else { allocation_share(&p.oc, arm) };
                row.push(p.value.to_string());
                row.push(fixed(y));
            }
        }
        w.write_record(row)?;
    }
    Ok(w.into_inner()?)
}

fn allocation_share(oc: &OperatingCharacteristics, arm: Arm) -> f64 {
    let total: f64 = arm.subgroup().arms().iter().map(|a| oc.arm(*a).mean_treated).sum();
    if total > 0.0 {
        oc.arm(arm).mean_treated / total
    } else {
        0.0
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

/// Collects written files and emits the manifest next to the primary output.
pub struct Recorder {
    command: String,
    config_digest: String,
    master_seed: Option<u64>,
    started: u64,
    outputs: Vec<OutputEntry>,
}

impl Recorder {
    pub fn new(command: &str, config_digest: String, master_seed: Option<u64>) -> Self {
        Recorder { command: command.into(), config_digest, master_seed, started: unix_now(), outputs: Vec::new() }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
        std::fs::write(path, bytes).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        self.outputs.push(OutputEntry { path: path.display().to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn finish(self, primary: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            config_digest: self.config_digest,
            master_seed: self.master_seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs: self.outputs,
        };
        let path = manifest_path(primary);
        let mut f = std::fs::File::create(&path).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        serde_json::to_writer_pretty(&mut f, &manifest)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Digest over the labelled inputs of a run.
pub fn config_digest(parts: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (label, bytes) in parts {
        h.update(label.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
