//! Phased experiments over seeded replicas.
//!
//! A run generates one synthetic trace, feeds it packet-by-packet to one of
//! the two detectors, and records the confusion matrix, per-attack reaction
//! times, and the full verdict log. Replicas differ only in seed; the trace
//! stream is derived from the run seed alone, so both models can be compared
//! on bit-identical traffic.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abs::{
    abs_step, observer_calibrate, observer_classify, AbsError, AbsParams, AbsPopulation,
    Classification, ObserverState,
};
use crate::features::{featurize, FeatureSpec};
use crate::rabs::{RabsConfig, RabsEngine, RabsError};
use crate::synth::{assemble, default_profiles, PhaseScript, SynthError, TrafficProfile};

/// Decouples the model's random stream from the trace's: same run seed,
/// different streams.
pub const MODEL_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{which} undefined: denominator is zero")]
    ZeroDenominator { which: &'static str },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Abs(#[from] AbsError),
    #[error(transparent)]
    Rabs(#[from] RabsError),
}

/// Prediction counts; f64 so aggregates can hold means.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: f64,
    pub false_neg: f64,
    pub true_neg: f64,
    pub false_pos: f64,
}

impl ConfusionMatrix {
    pub fn record(&mut self, actual_attack: bool, predicted_attack: bool) {
        match (actual_attack, predicted_attack) {
            (true, true) => self.true_pos += 1.0,
            (true, false) => self.false_neg += 1.0,
            (false, false) => self.true_neg += 1.0,
            (false, true) => self.false_pos += 1.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.true_pos + self.false_neg + self.true_neg + self.false_pos
    }

    /// TP / (TP + FN); absent without any actual positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let pos = self.true_pos + self.false_neg;
        (pos > 0.0).then(|| self.true_pos / pos)
    }

    /// TN / (TN + FP); absent without any actual negatives.
    pub fn specificity(&self) -> Option<f64> {
        let neg = self.true_neg + self.false_pos;
        (neg > 0.0).then(|| self.true_neg / neg)
    }
}

/// Both rates at once, erroring on the undefined side.
pub fn sens_spec(m: &ConfusionMatrix) -> Result<(f64, f64), HarnessError> {
    let sens = m.sensitivity().ok_or(HarnessError::ZeroDenominator {
        which: "sensitivity (TP + FN)",
    })?;
    let spec = m.specificity().ok_or(HarnessError::ZeroDenominator {
        which: "specificity (TN + FP)",
    })?;
    Ok((sens, spec))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Abs,
    Rabs,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Abs => write!(f, "abs"),
            ModelKind::Rabs => write!(f, "rabs"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "abs" => Ok(ModelKind::Abs),
            "rabs" | "r-abs" => Ok(ModelKind::Rabs),
            other => Err(format!("unknown model {other:?} (expected abs or rabs)")),
        }
    }
}

/// A script plus the protocol shape it realizes (the per-attack phase count,
/// not the raw segment count).
#[derive(Clone, Debug, PartialEq)]
pub struct NamedScript {
    pub name: String,
    pub phases: u32,
    pub script: PhaseScript,
}

/// Attack profiles of the standard suite with their unbounded segment
/// lengths. Each is long enough for detection, training, and consolidation
/// to complete well inside a single exposure.
pub fn suite_attacks() -> &'static [(&'static str, usize)] {
    &[
        ("dos-land-like", 1100),
        ("dos-storm-like", 1667),
        ("r2l-tunnel-like", 1196),
        ("u2r-quiet-like", 1533),
    ]
}

const BOUNDED_ATTACK: usize = 150;

fn strung(
    name: &str,
    phases: u32,
    per_attack: impl Fn(&str, usize) -> Vec<(String, usize)>,
) -> NamedScript {
    let mut segments: Vec<(String, usize)> = Vec::new();
    for (profile, len) in suite_attacks() {
        segments.extend(per_attack(profile, *len));
    }
    let refs: Vec<(&str, usize)> = segments.iter().map(|(p, c)| (p.as_str(), *c)).collect();
    NamedScript {
        name: name.to_string(),
        phases,
        script: PhaseScript::new(refs),
    }
}

/// Normal traffic, then a short bounded burst of each attack.
pub fn baseline_script() -> NamedScript {
    strung("baseline", 2, |profile, _| {
        vec![("normal".into(), 5000), (profile.into(), BOUNDED_ATTACK)]
    })
}

/// Normal traffic, then each attack running unbounded.
pub fn two_phase_script() -> NamedScript {
    strung("two-phase", 2, |profile, len| {
        vec![("normal".into(), 3500), (profile.into(), len)]
    })
}

/// Adds a normal recovery window after each unbounded attack.
pub fn three_phase_script() -> NamedScript {
    strung("three-phase", 3, |profile, len| {
        vec![
            ("normal".into(), 2000),
            (profile.into(), len),
            ("normal".into(), 2000),
        ]
    })
}

/// Re-exposes each attack after its recovery window.
pub fn four_phase_script() -> NamedScript {
    strung("four-phase", 4, |profile, len| {
        vec![
            ("normal".into(), 1100),
            (profile.into(), len),
            ("normal".into(), 1100),
            (profile.into(), len),
        ]
    })
}

/// Nothing but normal traffic: a calibration segment plus a measured body.
pub fn normal_only_script() -> NamedScript {
    NamedScript {
        name: "normal-only".to_string(),
        phases: 1,
        script: PhaseScript::new(vec![("normal", 1100), ("normal", 5000)]),
    }
}

/// The four comparison scripts.
pub fn standard_suite() -> Vec<NamedScript> {
    vec![
        baseline_script(),
        two_phase_script(),
        three_phase_script(),
        four_phase_script(),
    ]
}

/// Everything a run needs besides the script and seed.
#[derive(Clone, Debug)]
pub struct ExperimentSetup {
    pub spec: FeatureSpec,
    pub profiles: BTreeMap<String, TrafficProfile>,
    pub abs: AbsParams,
    /// Trailing population means the observer calibrates on.
    pub observer_window: usize,
    /// Deviation multiplier of the observer's under-shoot rule.
    pub observer_k: f64,
    pub rabs: RabsConfig,
}

impl Default for ExperimentSetup {
    fn default() -> Self {
        ExperimentSetup {
            spec: FeatureSpec::default_spec(),
            profiles: default_profiles(),
            abs: AbsParams::default(),
            observer_window: 50,
            observer_k: 3.0,
            rabs: RabsConfig::default(),
        }
    }
}

/// One script segment resolved against the profile table.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentInfo {
    pub start: usize,
    pub end: usize,
    pub profile: String,
    /// Ground-truth attack name, absent for normal segments.
    pub attack: Option<String>,
    /// 1-based occurrence of this attack name in the script; 0 for normal.
    pub exposure: usize,
}

pub fn segment_infos(
    script: &PhaseScript,
    profiles: &BTreeMap<String, TrafficProfile>,
) -> Result<Vec<SegmentInfo>, HarnessError> {
    let mut infos = Vec::with_capacity(script.segments.len());
    let mut start = 0usize;
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for seg in &script.segments {
        let profile = profiles
            .get(&seg.profile)
            .ok_or_else(|| SynthError::UnknownProfile(seg.profile.clone()))?;
        let attack = profile.label.attack_name().map(str::to_string);
        let exposure = match &attack {
            Some(name) => {
                let e = seen.entry(name.clone()).or_insert(0);
                *e += 1;
                *e
            }
            None => 0,
        };
        infos.push(SegmentInfo {
            start,
            end: start + seg.count,
            profile: seg.profile.clone(),
            attack,
            exposure,
        });
        start += seg.count;
    }
    Ok(infos)
}

/// Reaction to one attack segment: the 1-based index, within the segment, of
/// the first packet flagged as an attack; absent if the whole segment passed
/// unflagged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactionRecord {
    pub attack: String,
    pub exposure: usize,
    pub reaction: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub seq_no: u64,
    pub actual: bool,
    pub predicted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub model: ModelKind,
    pub script: String,
    pub phases: u32,
    pub seed: u64,
    pub matrix: ConfusionMatrix,
    pub reactions: Vec<ReactionRecord>,
    /// Per classified packet. The baseline model starts logging after its
    /// calibration segment; the reactive model logs from packet 0.
    pub verdict_log: Vec<VerdictEntry>,
}

/// Run one model over one scripted trace.
pub fn run_experiment(
    setup: &ExperimentSetup,
    model: ModelKind,
    script: &NamedScript,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let mut trace_rng = ChaCha8Rng::seed_from_u64(seed);
    let packets = assemble(&script.script, &setup.profiles, &mut trace_rng)?;
    let infos = segment_infos(&script.script, &setup.profiles)?;
    let model_seed = seed ^ MODEL_SEED_SALT;

    let mut verdict_log: Vec<VerdictEntry> = Vec::with_capacity(packets.len());
    match model {
        ModelKind::Abs => {
            let mut rng = ChaCha8Rng::seed_from_u64(model_seed);
            let mut pop = AbsPopulation::new(&setup.abs, setup.spec.lv(), &mut rng)?;
            let calib_end = infos.first().map_or(0, |i| i.end);
            let mut means: Vec<f64> = Vec::with_capacity(calib_end);
            let mut observer: Option<ObserverState> = None;
            for (i, p) in packets.iter().enumerate() {
                let v = featurize(p, &setup.spec);
                let stats = abs_step(&mut pop, &v, &setup.abs, &mut rng)?;
                if i < calib_end {
                    means.push(stats.mean_energy);
                    if i + 1 == calib_end {
                        observer = Some(observer_calibrate(&means, setup.observer_window)?);
                    }
                    continue;
                }
                let obs = observer
                    .as_mut()
                    .expect("calibrated after the first segment");
                let predicted = observer_classify(obs, stats.mean_energy, setup.observer_k)
                    == Classification::Attack;
                obs.observe(stats.mean_energy);
                verdict_log.push(VerdictEntry {
                    seq_no: p.seq_no,
                    actual: p.label.is_attack(),
                    predicted,
                });
            }
        }
        ModelKind::Rabs => {
            let mut engine = RabsEngine::new(setup.rabs.clone(), setup.spec.clone(), model_seed)?;
            for p in &packets {
                let out = engine.process_packet(p)?;
                verdict_log.push(VerdictEntry {
                    seq_no: p.seq_no,
                    actual: p.label.is_attack(),
                    predicted: out.verdict.is_attack(),
                });
            }
        }
    }

    let mut matrix = ConfusionMatrix::default();
    for e in &verdict_log {
        matrix.record(e.actual, e.predicted);
    }

    let first_seq = verdict_log.first().map_or(0, |e| e.seq_no) as usize;
    let mut reactions = Vec::new();
    for info in &infos {
        let Some(attack) = &info.attack else { continue };
        // A segment the model could not classify end to end (inside the
        // calibration window) has no defined reaction.
        let reaction = if info.start < first_seq {
            None
        } else {
            verdict_log[info.start - first_seq..info.end - first_seq]
                .iter()
                .position(|e| e.predicted)
                .map(|pos| pos as u64 + 1)
        };
        reactions.push(ReactionRecord {
            attack: attack.clone(),
            exposure: info.exposure,
            reaction,
        });
    }

    Ok(RunResult {
        model,
        script: script.name.clone(),
        phases: script.phases,
        seed,
        matrix,
        reactions,
        verdict_log,
    })
}

/// Seeded replicas of one experiment, in parallel, results in seed order.
pub fn run_replicas(
    setup: &ExperimentSetup,
    model: ModelKind,
    script: &NamedScript,
    base_seed: u64,
    replicas: usize,
) -> Result<Vec<RunResult>, HarnessError> {
    (0..replicas)
        .into_par_iter()
        .map(|i| run_experiment(setup, model, script, base_seed + i as u64))
        .collect()
}

/// The cross product scripts × models × seeds, in parallel, in canonical
/// order (script-major, then model, then seed).
pub fn run_suite(
    setup: &ExperimentSetup,
    scripts: &[NamedScript],
    models: &[ModelKind],
    base_seed: u64,
    replicas: usize,
) -> Result<Vec<RunResult>, HarnessError> {
    let mut combos: Vec<(&NamedScript, ModelKind, u64)> = Vec::new();
    for script in scripts {
        for &model in models {
            for i in 0..replicas {
                combos.push((script, model, base_seed + i as u64));
            }
        }
    }
    combos
        .into_par_iter()
        .map(|(script, model, seed)| run_experiment(setup, model, script, seed))
        .collect()
}

/// Reaction statistics pooled over runs for one (attack, exposure) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateReaction {
    pub attack: String,
    pub exposure: usize,
    pub runs: usize,
    pub detected: usize,
    /// Median/mean reaction over the detected runs only.
    pub median_reaction: Option<f64>,
    pub mean_reaction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub runs: usize,
    pub mean_matrix: ConfusionMatrix,
    /// Rates of the mean matrix. Segment lengths are fixed per script, so
    /// this equals the mean of the per-run rates.
    pub sens: Option<f64>,
    pub spec: Option<f64>,
    pub reactions: Vec<AggregateReaction>,
}

/// Median of an unsorted sample.
pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

pub fn aggregate(results: &[RunResult]) -> Aggregate {
    let n = results.len().max(1) as f64;
    let mut mean = ConfusionMatrix::default();
    for r in results {
        mean.true_pos += r.matrix.true_pos;
        mean.false_neg += r.matrix.false_neg;
        mean.true_neg += r.matrix.true_neg;
        mean.false_pos += r.matrix.false_pos;
    }
    mean.true_pos /= n;
    mean.false_neg /= n;
    mean.true_neg /= n;
    mean.false_pos /= n;

    let mut groups: BTreeMap<(String, usize), Vec<Option<u64>>> = BTreeMap::new();
    for r in results {
        for rec in &r.reactions {
            groups
                .entry((rec.attack.clone(), rec.exposure))
                .or_default()
                .push(rec.reaction);
        }
    }
    let reactions = groups
        .into_iter()
        .map(|((attack, exposure), vals)| {
            let detected: Vec<f64> = vals.iter().flatten().map(|&t| t as f64).collect();
            AggregateReaction {
                attack,
                exposure,
                runs: vals.len(),
                detected: detected.len(),
                median_reaction: median(&detected),
                mean_reaction: (!detected.is_empty())
                    .then(|| detected.iter().sum::<f64>() / detected.len() as f64),
            }
        })
        .collect();

    Aggregate {
        runs: results.len(),
        mean_matrix: mean,
        sens: mean.sensitivity(),
        spec: mean.specificity(),
        reactions,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub matrix: ConfusionMatrix,
    pub sens: Option<f64>,
    pub spec: Option<f64>,
    pub reactions: Vec<ReactionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub model: ModelKind,
    pub script: String,
    pub phases: u32,
    pub runs: Vec<RunSummary>,
    pub aggregate: Aggregate,
}

/// The structured results file: one group per (model, script) in first-seen
/// order, each with per-run records and an aggregate block. Verdict logs are
/// deliberately left out; they live in the per-packet event log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub groups: Vec<GroupReport>,
}

pub fn build_report(results: &[RunResult]) -> Report {
    let mut order: Vec<(ModelKind, &str)> = Vec::new();
    for r in results {
        let key = (r.model, r.script.as_str());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    let groups = order
        .into_iter()
        .map(|(model, script)| {
            let members: Vec<RunResult> = results
                .iter()
                .filter(|r| r.model == model && r.script == script)
                .cloned()
                .collect();
            GroupReport {
                model,
                script: script.to_string(),
                phases: members[0].phases,
                runs: members
                    .iter()
                    .map(|r| RunSummary {
                        seed: r.seed,
                        matrix: r.matrix,
                        sens: r.matrix.sensitivity(),
                        spec: r.matrix.specificity(),
                        reactions: r.reactions.clone(),
                    })
                    .collect(),
                aggregate: aggregate(&members),
            }
        })
        .collect();
    Report { groups }
}

/// Flat per-run rows for plotting: one row per attack segment (second and
/// later exposures carry a `*` suffix, undetected segments say "no"), or a
/// single `none` row for scripts without attacks.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = String::from("model,script,phases,seed,sens,spec,attack,reaction_time\n");
    for r in results {
        let sens = r
            .matrix
            .sensitivity()
            .map_or(String::new(), |s| format!("{s:.4}"));
        let spec = r
            .matrix
            .specificity()
            .map_or(String::new(), |s| format!("{s:.4}"));
        let mut row = |attack: &str, reaction: &str| {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.model, r.script, r.phases, r.seed, sens, spec, attack, reaction
            ));
        };
        if r.reactions.is_empty() {
            row("none", "");
            continue;
        }
        for rec in &r.reactions {
            let name = if rec.exposure >= 2 {
                format!("{}*", rec.attack)
            } else {
                rec.attack.clone()
            };
            let reaction = rec
                .reaction
                .map_or_else(|| "no".to_string(), |t| t.to_string());
            row(&name, &reaction);
        }
    }
    out
}
