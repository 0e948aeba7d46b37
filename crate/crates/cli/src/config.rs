//! Experiment config files: versioned TOML where every key is spelled out
//! and unknown keys are hard errors — a silently ignored typo in a
//! threshold name would invalidate an experiment without a trace.
//!
//! Every section is optional except `version` and `[script]`; omitted keys
//! fall back to the built-in defaults, so a config only states what it
//! changes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use rabs_core::abs::AbsParams;
use rabs_core::features::{load_spec, FeatureSpec, Flag, Label, Transport};
use rabs_core::harness::{
    baseline_script, four_phase_script, normal_only_script, three_phase_script, two_phase_script,
    ExperimentSetup, ModelKind, NamedScript,
};
use rabs_core::synth::{default_profiles, PhaseScript, TrafficProfile};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// A fully resolved experiment: everything a command needs to run.
pub struct Experiment {
    pub setup: ExperimentSetup,
    pub models: Vec<ModelKind>,
    pub script: NamedScript,
    pub replicates: usize,
    pub base_seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    version: u32,
    /// "abs", "rabs", or "both".
    #[serde(default = "default_model")]
    model: String,
    #[serde(default = "default_replicates")]
    replicates: usize,
    #[serde(default)]
    base_seed: u64,
    #[serde(default = "default_out_dir")]
    out_dir: PathBuf,
    /// Feature schema file; the built-in schema when absent.
    #[serde(default)]
    spec_path: Option<PathBuf>,
    script: ScriptSection,
    #[serde(default)]
    abs: AbsSection,
    #[serde(default)]
    rabs: RabsSection,
    /// Energy dynamics of the reactive model's agents.
    #[serde(default)]
    energy: EnergySection,
    #[serde(default)]
    observer: ObserverSection,
    /// Extra traffic profiles, merged over the built-in set by name.
    #[serde(default)]
    profiles: BTreeMap<String, ProfileSection>,
}

fn default_model() -> String {
    "both".to_string()
}

fn default_replicates() -> usize {
    10
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Either a standard script by name or explicit segments, never both.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptSection {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    segments: Option<Vec<SegmentRow>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRow {
    profile: String,
    count: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AbsSection {
    phi: Option<f64>,
    epsilon: Option<f64>,
    e_r: Option<f64>,
    e_init: Option<f64>,
    e_max: Option<f64>,
    population_size: Option<usize>,
    particle_capacity: Option<u32>,
}

impl AbsSection {
    fn apply(&self, p: &mut AbsParams) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { p.$f = v; } )* };
        }
        set!(
            phi,
            epsilon,
            e_r,
            e_init,
            e_max,
            population_size,
            particle_capacity
        );
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RabsSection {
    n_size: Option<usize>,
    r_size: Option<usize>,
    ds_thres: Option<u32>,
    n_mem_size: Option<usize>,
    as_count_thres: Option<u32>,
    as_energy_thres: Option<f64>,
    sigma_rec: Option<f64>,
    sigma_insa: Option<f64>,
    consolidate_after: Option<u32>,
    m_keep: Option<usize>,
    seed_window: Option<usize>,
    reproduction_fraction: Option<f64>,
    offspring_mutation_rate: Option<f64>,
    spawn_mutation_rate: Option<f64>,
    gc_after: Option<u64>,
}

impl RabsSection {
    fn apply(&self, c: &mut rabs_core::rabs::RabsConfig) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            n_size,
            r_size,
            ds_thres,
            n_mem_size,
            as_count_thres,
            as_energy_thres,
            sigma_rec,
            sigma_insa,
            consolidate_after,
            m_keep,
            seed_window,
            reproduction_fraction,
            offspring_mutation_rate,
            spawn_mutation_rate,
            gc_after
        );
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnergySection {
    e_init: Option<f64>,
    e_max: Option<f64>,
    gain: Option<f64>,
    break_even: Option<f64>,
    energy_thres: Option<f64>,
    mem_thres: Option<f64>,
}

impl EnergySection {
    fn apply(&self, e: &mut rabs_core::genetics::EnergyParams) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { e.$f = v; } )* };
        }
        set!(e_init, e_max, gain, break_even, energy_thres, mem_thres);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObserverSection {
    /// Trailing means the baseline observer calibrates on.
    window: Option<usize>,
    /// Deviation multiplier of its under-shoot rule.
    k: Option<f64>,
}

/// A traffic profile in config form: weights keyed by human-readable
/// names ("tcp", "SYN,ACK", "80"). Keys sort deterministically, so the
/// same config always produces the same draw order.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileSection {
    /// "normal" or "attack:<name>", as in trace files.
    label: String,
    transport: BTreeMap<String, f64>,
    /// Keys are comma-separated flag lists; "-" is the empty set.
    flags: BTreeMap<String, f64>,
    ports: BTreeMap<String, f64>,
}

impl ProfileSection {
    fn build(&self, name: &str) -> Result<TrafficProfile, ConfigError> {
        let label = match self.label.as_str() {
            "normal" => Label::Normal,
            s => match s.strip_prefix("attack:") {
                Some(n) if !n.is_empty() => Label::Attack(n.to_string()),
                _ => {
                    return Err(invalid(format!(
                        "profile {name}: label must be \"normal\" or \"attack:<name>\", got {s:?}"
                    )))
                }
            },
        };

        let transport_mix = self
            .transport
            .iter()
            .map(|(k, &w)| {
                let t = match k.to_ascii_lowercase().as_str() {
                    "tcp" => Transport::Tcp,
                    "udp" => Transport::Udp,
                    _ => return Err(invalid(format!("profile {name}: unknown transport {k:?}"))),
                };
                Ok((t, w))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let flag_mix = self
            .flags
            .iter()
            .map(|(k, &w)| {
                let set = parse_flag_list(k)
                    .map_err(|f| invalid(format!("profile {name}: unknown flag {f:?}")))?;
                Ok((set, w))
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let port_mix = self
            .ports
            .iter()
            .map(|(k, &w)| {
                let p: u16 = k
                    .parse()
                    .map_err(|_| invalid(format!("profile {name}: bad port {k:?}")))?;
                Ok((p, w))
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;

        let profile = TrafficProfile {
            name: name.to_string(),
            label,
            transport_mix,
            flag_mix,
            port_mix,
        };
        profile
            .validate()
            .map_err(|e| invalid(format!("profile {name}: {e}")))?;
        Ok(profile)
    }
}

fn parse_flag_list(s: &str) -> Result<Vec<Flag>, String> {
    if s.trim() == "-" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let name = part.trim().to_ascii_uppercase();
            Flag::from_name(&name).ok_or_else(|| part.trim().to_string())
        })
        .collect()
}

fn standard_script(name: &str) -> Option<NamedScript> {
    match name {
        "baseline" => Some(baseline_script()),
        "two-phase" => Some(two_phase_script()),
        "three-phase" => Some(three_phase_script()),
        "four-phase" => Some(four_phase_script()),
        "normal-only" => Some(normal_only_script()),
        _ => None,
    }
}

pub fn load(path: &Path) -> Result<Experiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ConfigFile = toml::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_path_buf(),
        source,
    })?;

    if file.version != 1 {
        return Err(invalid(format!(
            "unsupported config version {} (this build reads version 1)",
            file.version
        )));
    }
    if file.replicates == 0 {
        return Err(invalid("replicates must be at least 1"));
    }

    let models = match file.model.as_str() {
        "both" => vec![ModelKind::Abs, ModelKind::Rabs],
        s => vec![s.parse::<ModelKind>().map_err(|_| {
            invalid(format!(
                "model must be \"abs\", \"rabs\", or \"both\", got {s:?}"
            ))
        })?],
    };

    let spec = match &file.spec_path {
        Some(p) => load_spec(p).map_err(|e| invalid(format!("spec {}: {e}", p.display())))?,
        None => FeatureSpec::default_spec(),
    };

    let mut profiles = default_profiles();
    for (name, section) in &file.profiles {
        profiles.insert(name.clone(), section.build(name)?);
    }

    let script = match (&file.script.name, &file.script.segments) {
        (Some(name), None) => standard_script(name).ok_or_else(|| {
            invalid(format!(
                "unknown script {name:?}; standard scripts: baseline, two-phase, three-phase, four-phase, normal-only"
            ))
        })?,
        (None, Some(rows)) => {
            if rows.is_empty() {
                return Err(invalid("script.segments must not be empty"));
            }
            for row in rows {
                if row.count == 0 {
                    return Err(invalid(format!(
                        "script segment {:?} has zero packets",
                        row.profile
                    )));
                }
                if !profiles.contains_key(&row.profile) {
                    return Err(invalid(format!("unknown profile {:?}", row.profile)));
                }
            }
            NamedScript {
                name: "custom".to_string(),
                phases: rows.len() as u32,
                script: PhaseScript::new(
                    rows.iter().map(|r| (r.profile.as_str(), r.count)).collect(),
                ),
            }
        }
        _ => {
            return Err(invalid(
                "script needs exactly one of `name` or `segments`",
            ))
        }
    };

    let mut setup = ExperimentSetup {
        spec,
        profiles,
        ..ExperimentSetup::default()
    };
    file.abs.apply(&mut setup.abs);
    file.rabs.apply(&mut setup.rabs);
    file.energy.apply(&mut setup.rabs.energy);
    if let Some(w) = file.observer.window {
        setup.observer_window = w;
    }
    if let Some(k) = file.observer.k {
        setup.observer_k = k;
    }

    setup
        .abs
        .validate()
        .map_err(|e| invalid(format!("[abs]: {e}")))?;
    setup
        .rabs
        .validate()
        .map_err(|e| invalid(format!("[rabs]/[energy]: {e}")))?;
    if setup.observer_window == 0 {
        return Err(invalid("[observer]: window must be at least 1"));
    }
    if !(setup.observer_k.is_finite() && setup.observer_k > 0.0) {
        return Err(invalid("[observer]: k must be positive"));
    }

    Ok(Experiment {
        setup,
        models,
        script,
        replicates: file.replicates,
        base_seed: file.base_seed,
        out_dir: file.out_dir,
    })
}
