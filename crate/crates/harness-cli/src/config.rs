//! Scenario files: a human-editable TOML schema describing one machine, its
//! tenants, and the defense settings, plus the validation that turns a parsed
//! file into something the runner can trust.

use std::path::Path;

use defense::MonitorSchedule;
use memsim_core::TopologyConfig;
use serde::{Deserialize, Serialize};
use workloads::{AtomicKind, ChannelPattern, Locality, Pulse};

use crate::HarnessError;

/// One tenant's place in the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Protected,
    Benign,
    Attacker,
}

/// Workload selection for one VM. Mirrors the generator functions in
/// `workloads`; kinds that depend on discovered machine structure carry a
/// `probe` switch choosing between timing discovery and the topology oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadConfig {
    Idle,
    Stream {
        footprint: u64,
        locality: Locality,
        #[serde(default = "one")]
        stride_lines: u64,
        #[serde(default)]
        pulse: Option<Pulse>,
    },
    LlcCleanse {
        #[serde(default = "one_u32")]
        threads: u32,
        /// Map the slice groups by timing instead of asking the oracle.
        #[serde(default)]
        probe: bool,
    },
    AdaptiveCleanse {
        #[serde(default = "one_u32")]
        threads: u32,
        /// Map the slice groups by timing; the victim-set discovery stage
        /// always runs live either way.
        #[serde(default)]
        probe: bool,
    },
    AtomicLock { atomic: AtomicKind },
    MemFlood {
        #[serde(default = "one_u32")]
        threads: u32,
        mode: FloodModeConfig,
        /// Explicit channel targets; targeted mode discovers the victim's hot
        /// channels by timing when this is absent.
        #[serde(default)]
        patterns: Option<Vec<ChannelPattern>>,
    },
}

fn one() -> u64 {
    1
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodModeConfig {
    Full,
    Targeted,
}

impl WorkloadConfig {
    pub fn threads(&self) -> u32 {
        match self {
            WorkloadConfig::Idle | WorkloadConfig::Stream { .. } | WorkloadConfig::AtomicLock { .. } => 1,
            WorkloadConfig::LlcCleanse { threads, .. }
            | WorkloadConfig::AdaptiveCleanse { threads, .. }
            | WorkloadConfig::MemFlood { threads, .. } => *threads,
        }
    }

    /// Whether resolving this workload consults the hidden-mapping oracle.
    pub fn uses_oracle(&self) -> bool {
        matches!(
            self,
            WorkloadConfig::LlcCleanse { probe: false, .. }
                | WorkloadConfig::AdaptiveCleanse { probe: false, .. }
        )
    }

    /// Whether resolving this workload runs timing discovery on a probe
    /// machine before the scenario starts.
    pub fn uses_probe(&self) -> bool {
        match self {
            WorkloadConfig::LlcCleanse { probe, .. } => *probe,
            WorkloadConfig::AdaptiveCleanse { .. } => true,
            WorkloadConfig::MemFlood { mode: FloodModeConfig::Targeted, patterns, .. } => {
                patterns.is_none()
            }
            _ => false,
        }
    }
}

/// One tenant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmConfig {
    pub vm_id: String,
    /// Defaults to the workload's thread count.
    #[serde(default)]
    pub vcpus: Option<u32>,
    #[serde(default = "benign")]
    pub role: Role,
    #[serde(default)]
    pub start_time_ms: u64,
    pub workload: WorkloadConfig,
}

fn benign() -> Role {
    Role::Benign
}

impl VmConfig {
    pub fn vcpus(&self) -> u32 {
        self.vcpus.unwrap_or_else(|| self.workload.threads())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Scaled-down machine: 512 KB LLC over 4 slices, 100 cycles/ms.
    #[default]
    Desk,
    /// Two-socket server package: 15 MB LLC over 6 slices, 10^5 cycles/ms.
    Server,
}

/// Machine selection: a named preset plus field-level overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    pub preset: Preset,
    /// Re-draw the hidden bank/channel bit positions from the seed instead of
    /// using the preset's fixed ones.
    pub randomize_bits: bool,
    /// Any `TopologyConfig` fields to override on top of the preset.
    pub overrides: Option<toml::Table>,
}

impl TopologySection {
    /// The fully resolved machine description.
    pub fn build_config(&self, seed: u64) -> Result<TopologyConfig, HarnessError> {
        let base = match self.preset {
            Preset::Desk => TopologyConfig::desk_scale(),
            Preset::Server => TopologyConfig::default(),
        };
        let mut cfg = match &self.overrides {
            None => base,
            Some(overrides) => {
                let mut table = toml::Table::try_from(&base)
                    .map_err(|e| HarnessError::Internal(format!("preset serialization: {e}")))?;
                merge(&mut table, overrides);
                table.try_into().map_err(|e| HarnessError::Config {
                    field: "topology.overrides".into(),
                    message: format!("{e}"),
                })?
            }
        };
        if self.randomize_bits {
            cfg.randomize_mapping_bits(seed);
        }
        cfg.validate().map_err(|e| HarnessError::Config {
            field: "topology".into(),
            message: format!("{e}"),
        })?;
        Ok(cfg)
    }
}

/// Overlays `patch` onto `base`, recursing into nested tables.
fn merge(base: &mut toml::Table, patch: &toml::Table) {
    for (key, value) in patch {
        match (base.get_mut(key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}

/// Defense pipeline settings; the schedule fields sit inline in the TOML
/// `[defense]` table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefenseSection {
    #[serde(default)]
    pub enabled: bool,
    /// Monitoring begins here, letting services warm up first — a provider
    /// attaching the monitor to an already-running machine.
    #[serde(default)]
    pub start_ms: u64,
    #[serde(flatten)]
    pub schedule: MonitorSchedule,
}

impl Default for DefenseSection {
    fn default() -> Self {
        DefenseSection { enabled: false, start_ms: 0, schedule: MonitorSchedule::default() }
    }
}

/// A whole experiment: one machine, its tenants, the defense, and how long to
/// run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Label used in reports and output file names; defaults to the file stem.
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: u64,
    /// Throughput and slowdown are measured from here to the end of the run,
    /// skipping warm-up and attacker ramp-in.
    #[serde(default)]
    pub measure_from_ms: u64,
    #[serde(default)]
    pub topology: TopologySection,
    #[serde(default)]
    pub vm: Vec<VmConfig>,
    #[serde(default)]
    pub defense: DefenseSection,
    /// Allows oracle-backed workload construction and records ground-truth
    /// checks of probe results into the trace.
    #[serde(default)]
    pub oracle_checks: bool,
}

impl ScenarioConfig {
    /// Checks every cross-field invariant, naming the offending field.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |field: &str, message: String| {
            Err(HarnessError::Config { field: field.into(), message })
        };
        if self.duration_ms == 0 {
            return invalid("duration_ms", "must be nonzero".into());
        }
        if self.measure_from_ms >= self.duration_ms {
            return invalid(
                "measure_from_ms",
                format!("{} is not before duration_ms = {}", self.measure_from_ms, self.duration_ms),
            );
        }
        if self.vm.is_empty() {
            return invalid("vm", "at least one VM is required".into());
        }
        for (i, vm) in self.vm.iter().enumerate() {
            if vm.vm_id.is_empty() {
                return invalid("vm_id", format!("vm[{i}] has an empty vm_id"));
            }
            if self.vm[..i].iter().any(|other| other.vm_id == vm.vm_id) {
                return invalid("vm_id", format!("\"{}\" appears more than once", vm.vm_id));
            }
            if vm.start_time_ms >= self.duration_ms {
                return invalid(
                    "start_time_ms",
                    format!(
                        "vm \"{}\" starts at {} ms, at or past duration_ms = {}",
                        vm.vm_id, vm.start_time_ms, self.duration_ms
                    ),
                );
            }
            if vm.vcpus() == 0 {
                return invalid("vcpus", format!("vm \"{}\" has zero vcpus", vm.vm_id));
            }
            if vm.vcpus() < vm.workload.threads() {
                return invalid(
                    "vcpus",
                    format!(
                        "vm \"{}\" has {} vcpus but its workload runs {} threads",
                        vm.vm_id,
                        vm.vcpus(),
                        vm.workload.threads()
                    ),
                );
            }
            if let WorkloadConfig::MemFlood {
                mode: FloodModeConfig::Full, patterns: Some(_), ..
            } = &vm.workload
            {
                return invalid(
                    "patterns",
                    format!("vm \"{}\": a full flood takes no channel patterns", vm.vm_id),
                );
            }
            if vm.workload.uses_oracle() && !self.oracle_checks {
                return invalid(
                    "oracle_checks",
                    format!(
                        "vm \"{}\" builds its workload from the topology oracle (probe = false); \
                         set oracle_checks = true to allow that",
                        vm.vm_id
                    ),
                );
            }
        }
        if self.defense.enabled {
            let protected = self.vm.iter().filter(|v| v.role == Role::Protected).count();
            if protected != 1 {
                return invalid(
                    "role",
                    format!("defense needs exactly one protected VM, found {protected}"),
                );
            }
            if self.defense.start_ms >= self.duration_ms {
                return invalid(
                    "defense.start_ms",
                    format!(
                        "{} is not before duration_ms = {}",
                        self.defense.start_ms, self.duration_ms
                    ),
                );
            }
            self.defense.schedule.validate().map_err(|e| HarnessError::Config {
                field: "defense".into(),
                message: format!("{e}"),
            })?;
        }
        Ok(())
    }

    pub fn protected_vm(&self) -> Option<&VmConfig> {
        self.vm.iter().find(|v| v.role == Role::Protected)
    }

    pub fn attackers(&self) -> Vec<String> {
        self.vm.iter().filter(|v| v.role == Role::Attacker).map(|v| v.vm_id.clone()).collect()
    }
}

/// Reads and validates one scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io { path: path.display().to_string(), source: e })?;
    let mut config: ScenarioConfig =
        toml::from_str(&text).map_err(|e| HarnessError::Parse(format!("{e}")))?;
    if config.name.is_empty() {
        config.name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
    }
    config.validate()?;
    Ok(config)
}
