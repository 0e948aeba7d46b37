//! The reactive detector.
//!
//! One *normality* population characterizes ordinary traffic; when its memory
//! agents start starving the detector reads that as a danger signal (DS). Per
//! threat, a *reactive* population is trained on the offending packets; once
//! enough of its mature agents stay activated the detector reads that as an
//! attack signal (AS). A four-rule table over (DS, AS) produces the verdict,
//! spawns new reactive populations, and occasionally triggers an inverse
//! negative-selection purge of the normality population. Trained populations
//! consolidate into small immutable signatures that short-circuit detection
//! of repeat attacks; see [`RabsEngine`] for the per-packet driver.

mod engine;

pub use engine::{EngineSnapshot, PacketOutcome, RabsEngine, SNAPSHOT_VERSION};

use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
use crate::genetics::{
    affinity, bitflip_mutate, fps_select_ref, genome_affinity, uniform_crossover, Agent,
    BinaryAgent, BinaryGenome, EnergyParams, GeneticsError,
};
use rand::Rng;

/// Identifier of a reactive population, unique within one engine run.
pub type PopId = u32;

/// Attempts at re-drawing a replacement genome that falls outside the purged
/// region before giving up and keeping the (always-outside) parent genome.
const INSA_RESAMPLE_TRIES: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum RabsError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("population {0} is consolidated and no longer evolves")]
    NotTraining(PopId),
    #[error(transparent)]
    Genetics(#[from] GeneticsError),
    #[error("snapshot version {found} not supported (this build reads version {expected})")]
    SnapshotVersion { found: u32, expected: u32 },
    #[error("corrupt snapshot: {0}")]
    BadSnapshot(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Knobs of the reactive detector. `Default` gives the tuned values used by
/// the experiment suite; everything is overridable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RabsConfig {
    /// Normality population size (held constant across steps).
    pub n_size: usize,
    /// Reactive population size at spawn.
    pub r_size: usize,
    /// Danger is signalled when more than this many memory agents starve.
    pub ds_thres: u32,
    /// Bound on the normality population's memory set.
    pub n_mem_size: usize,
    /// Attack is signalled when at least this many matures are activated.
    pub as_count_thres: u32,
    /// A mature agent counts as activated at or above this energy.
    pub as_energy_thres: f64,
    /// Signature affinity at or above which a packet is recognized outright.
    pub sigma_rec: f64,
    /// Purge radius: normality agents this close to a signature are removed.
    pub sigma_insa: f64,
    /// Activation streak (in exposed packets) required to consolidate.
    pub consolidate_after: u32,
    /// Signature genomes kept at consolidation.
    pub m_keep: usize,
    /// Captured vectors retained for seeding fresh populations.
    pub seed_window: usize,
    /// Offspring per step, as a fraction of the population size.
    pub reproduction_fraction: f64,
    /// Bit-flip rate applied to offspring genomes.
    pub offspring_mutation_rate: f64,
    /// Bit-flip rate applied when seeding a population from captured traffic.
    pub spawn_mutation_rate: f64,
    /// Training populations idle (no danger) this many packets are dropped.
    pub gc_after: u64,
    pub energy: EnergyParams,
}

impl Default for RabsConfig {
    fn default() -> Self {
        RabsConfig {
            n_size: 200,
            r_size: 100,
            ds_thres: 10,
            n_mem_size: 20,
            as_count_thres: 3,
            as_energy_thres: 90.0,
            sigma_rec: 0.9,
            sigma_insa: 0.9,
            consolidate_after: 50,
            m_keep: 5,
            seed_window: 25,
            reproduction_fraction: 0.1,
            offspring_mutation_rate: 0.01,
            spawn_mutation_rate: 0.05,
            gc_after: 2000,
            energy: EnergyParams::default(),
        }
    }
}

impl RabsConfig {
    pub fn validate(&self) -> Result<(), RabsError> {
        let bad = |msg: &str| Err(RabsError::BadConfig(msg.to_string()));
        self.energy.validate()?;
        if self.n_size == 0 || self.r_size == 0 {
            return bad("population sizes must be positive");
        }
        if self.n_mem_size == 0 {
            return bad("n_mem_size must be positive");
        }
        if self.as_count_thres == 0 {
            return bad("as_count_thres must be positive");
        }
        if !(self.as_energy_thres > 0.0 && self.as_energy_thres <= self.energy.e_max) {
            return bad("require 0 < as_energy_thres <= e_max");
        }
        // Below 0.5 a signature would also "recognize" its own complement.
        if !(0.5..=1.0).contains(&self.sigma_rec) {
            return bad("require sigma_rec in [0.5, 1]");
        }
        if !(self.sigma_insa > 0.0 && self.sigma_insa <= 1.0) {
            return bad("require sigma_insa in (0, 1]");
        }
        if self.consolidate_after == 0 {
            return bad("consolidate_after must be positive");
        }
        if self.m_keep == 0 {
            return bad("m_keep must be positive");
        }
        if self.seed_window == 0 {
            return bad("seed_window must be positive");
        }
        if !(self.reproduction_fraction > 0.0 && self.reproduction_fraction <= 1.0) {
            return bad("require reproduction_fraction in (0, 1]");
        }
        for (name, rate) in [
            ("offspring_mutation_rate", self.offspring_mutation_rate),
            ("spawn_mutation_rate", self.spawn_mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
                return Err(RabsError::BadConfig(format!("{name} must be in [0, 1]")));
            }
        }
        if self.gc_after == 0 {
            return bad("gc_after must be positive");
        }
        Ok(())
    }
}

/// The two per-packet signals and where the attack signal came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signals {
    /// Starving memory agents in the normality population.
    pub danger: u32,
    /// Activated matures in the strongest reactive population.
    pub attack: u32,
    /// Population that produced `attack`; present iff `attack > 0`.
    pub attack_source: Option<PopId>,
}

/// Outcome of the rule table for one packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReactionState {
    Normal,
    /// Danger without a recognized culprit: generic alert, and the manager
    /// spawns a fresh training population if none is in training.
    SoftReaction,
    FullReaction {
        source: Option<PopId>,
    },
    /// Attack signalled while the normality population is unperturbed: the
    /// self-characterization is inconsistent and gets purged.
    FullReactionWithInsa {
        source: Option<PopId>,
    },
}

/// What the detector tells the outside world about one packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Normal,
    /// An attack; the id names the reactive population (or signature) that
    /// recognized it, absent for generic (soft) alerts.
    Attack(Option<PopId>),
}

impl Verdict {
    pub fn is_attack(&self) -> bool {
        matches!(self, Verdict::Attack(_))
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Normal => write!(f, "normal"),
            Verdict::Attack(None) => write!(f, "attack"),
            Verdict::Attack(Some(id)) => write!(f, "attack({id})"),
        }
    }
}

/// Rule table over the two signals. Exactly one arm applies to every pair.
pub fn evaluate_rules(signals: &Signals, cfg: &RabsConfig) -> ReactionState {
    let danger_hi = signals.danger > cfg.ds_thres;
    let attack_hi = signals.attack >= cfg.as_count_thres;
    match (danger_hi, attack_hi) {
        (true, true) => ReactionState::FullReaction {
            source: signals.attack_source,
        },
        (true, false) => ReactionState::SoftReaction,
        (false, true) => ReactionState::FullReactionWithInsa {
            source: signals.attack_source,
        },
        (false, false) => ReactionState::Normal,
    }
}

/// Offspring demanded of one evolution step: enough to cover the dead, and
/// never less than the configured fraction of the population.
pub fn offspring_quota(dead: usize, size: usize, fraction: f64) -> usize {
    dead.max((fraction * size as f64).ceil() as usize)
}

/// Seed `count` agents from captured traffic: each genome is a uniformly
/// chosen vector from `recent` pushed through a bit-flip, or uniform random
/// bits when nothing has been captured yet.
fn seed_agents<R: Rng + ?Sized>(
    recent: &[FeatureVector],
    lv: usize,
    count: usize,
    rate: f64,
    e_init: f64,
    rng: &mut R,
) -> Result<Vec<BinaryAgent>, RabsError> {
    let mut agents = Vec::with_capacity(count);
    for _ in 0..count {
        let genome = if recent.is_empty() {
            BinaryGenome::random(lv, rng)
        } else {
            let pick = &recent[rng.gen_range(0..recent.len())];
            bitflip_mutate(&BinaryGenome::new(pick.bits.clone()), rate, rng)?
        };
        agents.push(Agent::new(genome, e_init));
    }
    Ok(agents)
}

/// One generation: breed offspring from the fit set and replace the
/// lowest-energy agents in place (the dead always sort first, so they are
/// covered whenever breeding happens). Returns true when there were no fit
/// parents and the generation was skipped (starvation).
fn evolve_agents<R: Rng + ?Sized>(
    agents: &mut [BinaryAgent],
    cfg: &RabsConfig,
    rng: &mut R,
) -> Result<bool, RabsError> {
    let dead = agents.iter().filter(|a| a.is_dead()).count();
    let quota = offspring_quota(dead, agents.len(), cfg.reproduction_fraction).min(agents.len());
    let offspring = {
        let fit: Vec<&BinaryAgent> = agents
            .iter()
            .filter(|a| a.energy >= cfg.energy.energy_thres)
            .collect();
        if fit.is_empty() {
            return Ok(true);
        }
        let mut out: Vec<BinaryAgent> = Vec::with_capacity(quota + 1);
        while out.len() < quota {
            let p1 = fps_select_ref(&fit, rng)?;
            let p2 = fps_select_ref(&fit, rng)?;
            let (g1, g2) = uniform_crossover(&p1.genome, &p2.genome, rng)?;
            for g in [g1, g2] {
                let child = bitflip_mutate(&g, cfg.offspring_mutation_rate, rng)?;
                out.push(Agent::new(child, cfg.energy.e_init));
            }
        }
        out.truncate(agents.len());
        out
    };
    let mut slots: Vec<usize> = (0..agents.len()).collect();
    slots.sort_by(|&i, &j| agents[i].energy.total_cmp(&agents[j].energy));
    for (slot, child) in slots.into_iter().zip(offspring) {
        agents[slot] = child;
    }
    Ok(false)
}

/// What one normality step reported back to the engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NStepOutcome {
    pub danger: u32,
    /// Evolution was due but there were no fit parents.
    pub starved: bool,
    /// False when the attack signal inhibited evolution this step.
    pub evolved: bool,
}

/// The population that characterizes ordinary traffic. Its agents are seeded
/// lazily from the first captured packets (the opening of the stream is taken
/// as the normality sample), so a fresh population starts empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NPopulation {
    pub agents: Vec<BinaryAgent>,
    /// Mature self-characterizers; the danger signal counts starvation here.
    pub memory: Vec<BinaryAgent>,
    /// Danger count of the most recent step (reported on packets that skip
    /// the dynamics).
    pub last_danger: u32,
}

impl Default for NPopulation {
    fn default() -> Self {
        Self::new()
    }
}

impl NPopulation {
    pub fn new() -> Self {
        NPopulation {
            agents: Vec::new(),
            memory: Vec::new(),
            last_danger: 0,
        }
    }

    /// Seed the agents from captured traffic (see [`seed_agents`]).
    pub fn prime<R: Rng + ?Sized>(
        &mut self,
        recent: &[FeatureVector],
        lv: usize,
        cfg: &RabsConfig,
        rng: &mut R,
    ) -> Result<(), RabsError> {
        self.agents = seed_agents(
            recent,
            lv,
            cfg.n_size,
            cfg.spawn_mutation_rate,
            cfg.energy.e_init,
            rng,
        )?;
        Ok(())
    }

    /// Memory agents currently starving.
    pub fn danger_count(&self, cfg: &RabsConfig) -> u32 {
        self.memory
            .iter()
            .filter(|m| m.energy < cfg.energy.energy_thres)
            .count() as u32
    }

    /// One packet: expose agents and memory, read the danger signal, and —
    /// unless `attack_signal` inhibits it — admit matures to memory and run
    /// a generation. `attack_signal` is the count in force for this step;
    /// the engine passes the previous packet's value because this packet's
    /// attack signal only exists after the reactive populations have stepped.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        v: &FeatureVector,
        attack_signal: u32,
        cfg: &RabsConfig,
        rng: &mut R,
    ) -> Result<NStepOutcome, RabsError> {
        for a in &mut self.agents {
            a.expose(v, &cfg.energy)?;
        }
        for m in &mut self.memory {
            m.expose(v, &cfg.energy)?;
        }
        let danger = self.danger_count(cfg);
        self.last_danger = danger;

        let inhibited = attack_signal >= cfg.as_count_thres;
        let mut starved = false;
        if !inhibited {
            // Memory admissions: strictly stronger candidates displace the
            // weakest member once the bound is reached.
            for i in 0..self.agents.len() {
                if self.agents[i].energy < cfg.energy.mem_thres {
                    continue;
                }
                if self.memory.len() < cfg.n_mem_size {
                    self.memory.push(self.agents[i].clone());
                    continue;
                }
                let weakest = self
                    .memory
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| a.energy.total_cmp(&b.energy))
                    .map(|(j, m)| (j, m.energy));
                if let Some((j, e)) = weakest {
                    if self.agents[i].energy > e {
                        self.memory[j] = self.agents[i].clone();
                    }
                }
            }
            starved = evolve_agents(&mut self.agents, cfg, rng)?;
        }
        Ok(NStepOutcome {
            danger,
            starved,
            evolved: !inhibited,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RPopState {
    Training,
    Consolidated,
}

/// A per-threat reactive population. While training it evolves only on
/// danger packets; once consolidated it is nothing but its signature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RPopulation {
    pub id: PopId,
    pub state: RPopState,
    pub agents: Vec<BinaryAgent>,
    /// Matures: admitted on crossing the maturity bar, never removed.
    pub matures: Vec<BinaryAgent>,
    /// Non-empty exactly when consolidated; immutable from then on.
    pub signature: Vec<BinaryGenome>,
    pub created_at: u64,
    /// Last packet seq_no on which this population saw danger (drives GC).
    pub last_danger_at: u64,
    /// Consecutive exposed packets with the attack signal held high.
    pub streak: u32,
}

impl RPopulation {
    /// Activated matures right now, without stepping anything.
    pub fn attack_signal(&self, cfg: &RabsConfig) -> u32 {
        self.matures
            .iter()
            .filter(|m| m.energy >= cfg.as_energy_thres)
            .count() as u32
    }

    /// One packet. Quiet packets (danger at or below the threshold) leave
    /// the population untouched and report the attack signal read off the
    /// current matures; danger packets expose agents and matures, read the
    /// signal, admit agents that crossed the maturity bar, and run a
    /// generation.
    ///
    /// `self_model` carries the normality population's memory genomes:
    /// a crossing agent within `sigma_insa` of any of them is censored
    /// rather than admitted. Danger can outlive an attack while memory
    /// recovers, and without this negative selection a population spawned
    /// in that window matures on ordinary traffic and eventually
    /// consolidates a signature of normality itself.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        v: &FeatureVector,
        danger: u32,
        now: u64,
        self_model: &[BinaryGenome],
        cfg: &RabsConfig,
        rng: &mut R,
    ) -> Result<u32, RabsError> {
        if self.state != RPopState::Training {
            return Err(RabsError::NotTraining(self.id));
        }
        if danger <= cfg.ds_thres {
            return Ok(self.attack_signal(cfg));
        }
        self.last_danger_at = now;

        let pre: Vec<f64> = self.agents.iter().map(|a| a.energy).collect();
        for a in &mut self.agents {
            a.expose(v, &cfg.energy)?;
        }
        for m in &mut self.matures {
            m.expose(v, &cfg.energy)?;
        }
        // The signal is read before this packet's admissions count.
        let attack = self.attack_signal(cfg);
        'crossing: for (i, a) in self.agents.iter().enumerate() {
            if pre[i] < cfg.energy.mem_thres && a.energy >= cfg.energy.mem_thres {
                for s in self_model {
                    if genome_affinity(&a.genome, s)? >= cfg.sigma_insa {
                        continue 'crossing;
                    }
                }
                self.matures.push(a.clone());
            }
        }
        evolve_agents(&mut self.agents, cfg, rng)?;

        if attack >= cfg.as_count_thres {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        Ok(attack)
    }

    /// Collapse into a signature once the activation streak has held long
    /// enough and there are enough matures to keep. Returns whether the
    /// population consolidated on this call.
    pub fn try_consolidate(&mut self, cfg: &RabsConfig) -> Result<bool, RabsError> {
        if self.state != RPopState::Training {
            return Err(RabsError::NotTraining(self.id));
        }
        if self.streak < cfg.consolidate_after || self.matures.len() < cfg.m_keep {
            return Ok(false);
        }
        let mut ranked: Vec<&BinaryAgent> = self.matures.iter().collect();
        ranked.sort_by(|a, b| b.energy.total_cmp(&a.energy));
        self.signature = ranked[..cfg.m_keep]
            .iter()
            .map(|a| a.genome.clone())
            .collect();
        self.agents.clear();
        self.matures.clear();
        self.state = RPopState::Consolidated;
        Ok(true)
    }
}

/// Spawn a training population seeded from the captured window.
pub fn spawn_r_population<R: Rng + ?Sized>(
    id: PopId,
    recent: &[FeatureVector],
    now: u64,
    lv: usize,
    cfg: &RabsConfig,
    rng: &mut R,
) -> Result<RPopulation, RabsError> {
    let agents = seed_agents(
        recent,
        lv,
        cfg.r_size,
        cfg.spawn_mutation_rate,
        cfg.energy.e_init,
        rng,
    )?;
    Ok(RPopulation {
        id,
        state: RPopState::Training,
        agents,
        matures: Vec::new(),
        signature: Vec::new(),
        created_at: now,
        last_danger_at: now,
        streak: 0,
    })
}

/// The strongest signature match for a packet, if any reaches the bar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignatureMatch {
    pub pop: PopId,
    pub affinity: f64,
    /// Signature genomes of that population at or above the bar.
    pub matching: u32,
}

/// Best consolidated population whose signature recognizes `v`; ties go to
/// the lowest population id.
pub fn match_signatures(
    v: &FeatureVector,
    pops: &[RPopulation],
    sigma_rec: f64,
) -> Result<Option<SignatureMatch>, RabsError> {
    let mut best: Option<SignatureMatch> = None;
    for pop in pops.iter().filter(|p| p.state == RPopState::Consolidated) {
        let mut top = 0.0f64;
        let mut matching = 0u32;
        for g in &pop.signature {
            let a = affinity(g, v)?;
            if a > top {
                top = a;
            }
            if a >= sigma_rec {
                matching += 1;
            }
        }
        if top >= sigma_rec && best.map_or(true, |b| top > b.affinity) {
            best = Some(SignatureMatch {
                pop: pop.id,
                affinity: top,
                matching,
            });
        }
    }
    Ok(best)
}

/// What an inverse negative-selection purge did.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsaReport {
    pub removed_agents: usize,
    pub removed_memory: usize,
    /// The purge left no survivors and the population was re-seeded blind.
    pub catastrophic: bool,
}

/// Remove every normality agent (live or memory) within `sigma_insa` of any
/// signature genome, then refill the live set to `n_size` by cloning the
/// highest-energy survivors with a bit-flip (re-drawn if the mutation lands
/// back inside the purged region). Removed memory is not replaced. With no
/// survivors the live set is re-seeded uniformly at random (catastrophic).
pub fn insa_purge<R: Rng + ?Sized>(
    npop: &mut NPopulation,
    signatures: &[&BinaryGenome],
    cfg: &RabsConfig,
    rng: &mut R,
) -> Result<InsaReport, RabsError> {
    let lv = match signatures.first() {
        Some(g) => g.len(),
        None => {
            return Ok(InsaReport {
                removed_agents: 0,
                removed_memory: 0,
                catastrophic: false,
            })
        }
    };
    let hits = |g: &BinaryGenome| -> Result<bool, RabsError> {
        for s in signatures {
            if genome_affinity(g, s)? >= cfg.sigma_insa {
                return Ok(true);
            }
        }
        Ok(false)
    };

    let before_agents = npop.agents.len();
    let mut kept = Vec::with_capacity(before_agents);
    for a in npop.agents.drain(..) {
        if !hits(&a.genome)? {
            kept.push(a);
        }
    }
    npop.agents = kept;
    let removed_agents = before_agents - npop.agents.len();

    let before_memory = npop.memory.len();
    let mut kept = Vec::with_capacity(before_memory);
    for m in npop.memory.drain(..) {
        if !hits(&m.genome)? {
            kept.push(m);
        }
    }
    npop.memory = kept;
    let removed_memory = before_memory - npop.memory.len();

    let catastrophic = npop.agents.is_empty();
    if catastrophic {
        while npop.agents.len() < cfg.n_size {
            let mut g = BinaryGenome::random(lv, rng);
            for _ in 0..INSA_RESAMPLE_TRIES {
                if !hits(&g)? {
                    break;
                }
                g = BinaryGenome::random(lv, rng);
            }
            npop.agents.push(Agent::new(g, cfg.energy.e_init));
        }
    } else if npop.agents.len() < cfg.n_size {
        let mut survivors = npop.agents.clone();
        survivors.sort_by(|a, b| b.energy.total_cmp(&a.energy));
        let mut next = 0usize;
        while npop.agents.len() < cfg.n_size {
            let parent = &survivors[next % survivors.len()];
            next += 1;
            let mut child = bitflip_mutate(&parent.genome, cfg.spawn_mutation_rate, rng)?;
            for _ in 0..INSA_RESAMPLE_TRIES {
                if !hits(&child)? {
                    break;
                }
                child = bitflip_mutate(&parent.genome, cfg.spawn_mutation_rate, rng)?;
            }
            if hits(&child)? {
                // The parent survived the purge, so its genome is safe.
                child = parent.genome.clone();
            }
            npop.agents.push(Agent::new(child, cfg.energy.e_init));
        }
    }
    npop.last_danger = npop.danger_count(cfg);
    Ok(InsaReport {
        removed_agents,
        removed_memory,
        catastrophic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitString;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn vec_of(s: &str) -> FeatureVector {
        FeatureVector {
            bits: s.parse::<BitString>().unwrap(),
        }
    }

    fn genome_of(s: &str) -> BinaryGenome {
        BinaryGenome::new(s.parse::<BitString>().unwrap())
    }

    fn agent_of(s: &str, energy: f64) -> BinaryAgent {
        Agent::new(genome_of(s), energy)
    }

    fn tiny_cfg() -> RabsConfig {
        RabsConfig {
            n_size: 6,
            r_size: 4,
            n_mem_size: 2,
            seed_window: 4,
            ..RabsConfig::default()
        }
    }

    fn genome_multiset(agents: &[BinaryAgent]) -> Vec<String> {
        let mut v: Vec<String> = agents.iter().map(|a| a.genome.bits.to_string()).collect();
        v.sort();
        v
    }

    #[test]
    fn default_config_validates() {
        RabsConfig::default().validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_fields() {
        for cfg in [
            RabsConfig {
                n_size: 0,
                ..RabsConfig::default()
            },
            RabsConfig {
                sigma_rec: 0.4,
                ..RabsConfig::default()
            },
            RabsConfig {
                sigma_insa: 0.0,
                ..RabsConfig::default()
            },
            RabsConfig {
                as_energy_thres: 101.0,
                ..RabsConfig::default()
            },
            RabsConfig {
                reproduction_fraction: 0.0,
                ..RabsConfig::default()
            },
            RabsConfig {
                offspring_mutation_rate: 1.5,
                ..RabsConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(RabsError::BadConfig(_))));
        }
    }

    #[test]
    fn danger_counts_starving_memory() {
        let cfg = RabsConfig::default(); // energy_thres = 60
        let mut npop = NPopulation::new();
        for e in [50.0, 70.0, 40.0] {
            npop.memory.push(agent_of("1010", e));
        }
        assert_eq!(npop.danger_count(&cfg), 2);
    }

    #[test]
    fn quota_covers_dead_and_fraction() {
        assert_eq!(offspring_quota(3, 100, 0.1), 10);
        assert_eq!(offspring_quota(17, 100, 0.1), 17);
        assert_eq!(offspring_quota(0, 15, 0.1), 2); // ceil(1.5)
    }

    #[test]
    fn rules_cover_all_quadrants() {
        let cfg = RabsConfig {
            ds_thres: 5,
            as_count_thres: 3,
            ..RabsConfig::default()
        };
        let sig = |danger, attack| Signals {
            danger,
            attack,
            attack_source: if attack > 0 { Some(7) } else { None },
        };
        assert_eq!(
            evaluate_rules(&sig(10, 5), &cfg),
            ReactionState::FullReaction { source: Some(7) }
        );
        assert_eq!(
            evaluate_rules(&sig(10, 0), &cfg),
            ReactionState::SoftReaction
        );
        assert_eq!(
            evaluate_rules(&sig(0, 5), &cfg),
            ReactionState::FullReactionWithInsa { source: Some(7) }
        );
        assert_eq!(evaluate_rules(&sig(0, 0), &cfg), ReactionState::Normal);
        // Boundaries: danger is strict, attack is inclusive.
        assert_eq!(evaluate_rules(&sig(5, 2), &cfg), ReactionState::Normal);
        assert_eq!(
            evaluate_rules(&sig(5, 3), &cfg),
            ReactionState::FullReactionWithInsa { source: Some(7) }
        );
        assert_eq!(
            evaluate_rules(&sig(6, 2), &cfg),
            ReactionState::SoftReaction
        );
    }

    #[test]
    fn n_step_inhibited_keeps_genomes() {
        let cfg = tiny_cfg();
        let mut rng = rng(1);
        let mut npop = NPopulation::new();
        let v = vec_of("11110000");
        npop.prime(std::slice::from_ref(&v), 8, &cfg, &mut rng)
            .unwrap();
        npop.memory.push(agent_of("11110000", 95.0));
        let before_agents = genome_multiset(&npop.agents);
        let before_memory = genome_multiset(&npop.memory);
        let energies: Vec<f64> = npop.agents.iter().map(|a| a.energy).collect();

        let out = npop
            .step(&vec_of("00001111"), cfg.as_count_thres, &cfg, &mut rng)
            .unwrap();
        assert!(!out.evolved);
        assert_eq!(genome_multiset(&npop.agents), before_agents);
        assert_eq!(genome_multiset(&npop.memory), before_memory);
        // Exposure effects still stand.
        assert!(npop
            .agents
            .iter()
            .zip(&energies)
            .any(|(a, &e)| a.energy != e));
    }

    #[test]
    fn n_step_starves_without_fit_parents() {
        let cfg = tiny_cfg();
        let mut rng = rng(2);
        let mut npop = NPopulation::new();
        for _ in 0..cfg.n_size {
            npop.agents.push(agent_of("10101010", 10.0));
        }
        let before = genome_multiset(&npop.agents);
        let out = npop.step(&vec_of("01010101"), 0, &cfg, &mut rng).unwrap();
        assert!(out.starved && out.evolved);
        assert_eq!(genome_multiset(&npop.agents), before);
    }

    #[test]
    fn n_step_breeds_and_fills_memory() {
        let cfg = tiny_cfg();
        let mut rng = rng(3);
        let mut npop = NPopulation::new();
        let v = vec_of("11110000");
        // Four strong matches (two already mature) and two starving agents.
        npop.agents.push(agent_of("11110000", 95.0));
        npop.agents.push(agent_of("11110000", 91.0));
        npop.agents.push(agent_of("11110000", 80.0));
        npop.agents.push(agent_of("11110001", 70.0));
        npop.agents.push(agent_of("00001111", 1.0));
        npop.agents.push(agent_of("00001111", 1.0));

        let out = npop.step(&v, 0, &cfg, &mut rng).unwrap();
        assert_eq!(out.danger, 0);
        assert!(!out.starved);
        assert_eq!(npop.agents.len(), cfg.n_size);
        // Memory admitted the two matures, bounded at n_mem_size.
        assert_eq!(npop.memory.len(), 2);
        for m in &npop.memory {
            assert!(m.energy >= cfg.energy.mem_thres);
        }
        // The starving pair was overwritten by fresh offspring.
        let newborn = npop.agents.iter().filter(|a| a.age == 0).count();
        assert_eq!(newborn, 2); // quota = max(2 dead, ceil(0.1 * 6)) = 2
    }

    #[test]
    fn n_memory_replaces_only_weaker_members() {
        let cfg = RabsConfig {
            n_mem_size: 1,
            ..tiny_cfg()
        };
        let mut rng = rng(4);
        let mut npop = NPopulation::new();
        let v = vec_of("11110000");
        npop.memory.push(agent_of("11110000", 99.0));
        npop.agents.push(agent_of("11110000", 93.0));
        for _ in 0..5 {
            npop.agents.push(agent_of("11110000", 70.0));
        }
        npop.step(&v, 0, &cfg, &mut rng).unwrap();
        // Candidate ended below the sitting member: no replacement.
        assert_eq!(npop.memory.len(), 1);
        assert!(npop.memory[0].energy > 99.0);
    }

    #[test]
    fn r_step_quiet_packet_freezes_population() {
        let cfg = tiny_cfg();
        let mut rng = rng(5);
        let mut pop = spawn_r_population(0, &[vec_of("11110000")], 0, 8, &cfg, &mut rng).unwrap();
        pop.matures.push(agent_of("11110000", 95.0));
        pop.matures.push(agent_of("11110000", 85.0));
        pop.streak = 7;
        let before = pop.clone();

        let attack = pop
            .step(&vec_of("11110000"), cfg.ds_thres, 9, &[], &cfg, &mut rng)
            .unwrap();
        assert_eq!(attack, 1); // 95 activated, 85 not
        assert_eq!(pop, before);
    }

    #[test]
    fn r_step_admits_on_crossing_and_keeps_matures() {
        let cfg = RabsConfig {
            r_size: 4,
            ..tiny_cfg()
        };
        let mut rng = rng(6);
        let v = vec_of("11110000");
        let mut pop = spawn_r_population(0, &[v.clone()], 0, 8, &cfg, &mut rng).unwrap();
        pop.agents.clear();
        pop.agents.push(agent_of("11110000", 89.0)); // crosses on a perfect match
        pop.agents.push(agent_of("11110000", 70.0));
        pop.agents.push(agent_of("11110000", 50.0));
        pop.agents.push(agent_of("11110000", 50.0));

        let danger = cfg.ds_thres + 1;
        pop.step(&v, danger, 1, &[], &cfg, &mut rng).unwrap();
        assert_eq!(pop.matures.len(), 1);
        let admitted = pop.matures[0].clone();
        assert!(admitted.energy >= cfg.energy.mem_thres);
        assert!(pop.agents[0].energy >= cfg.energy.mem_thres); // the original stays live

        // Next danger packet: the agent is already above the bar, so it is
        // not admitted a second time.
        pop.step(&v, danger, 2, &[], &cfg, &mut rng).unwrap();
        assert_eq!(pop.matures.len(), 1);
        // And the mature was exposed, never removed.
        assert!(pop.matures[0].energy >= admitted.energy);
    }

    #[test]
    fn r_step_censors_self_reactive_matures() {
        let cfg = RabsConfig {
            r_size: 4,
            ..tiny_cfg()
        };
        let mut rng1 = rng(6);
        let v = vec_of("11110000");
        let mut pop = spawn_r_population(0, &[v.clone()], 0, 8, &cfg, &mut rng1).unwrap();
        pop.agents.clear();
        pop.agents.push(agent_of("11110000", 89.0)); // would cross this packet
        pop.agents.push(agent_of("11110000", 70.0));
        pop.agents.push(agent_of("11110000", 50.0));
        pop.agents.push(agent_of("11110000", 50.0));

        // The crossing genome sits inside the self model's radius: censored.
        let self_model = vec![genome_of("11110000")];
        pop.step(&v, cfg.ds_thres + 1, 1, &self_model, &cfg, &mut rng1)
            .unwrap();
        assert!(pop.matures.is_empty());

        // A distant self model does not block admission.
        let mut rng2 = rng(6);
        let mut pop = spawn_r_population(0, &[v.clone()], 0, 8, &cfg, &mut rng2).unwrap();
        pop.agents.clear();
        pop.agents.push(agent_of("11110000", 89.0));
        pop.agents.push(agent_of("11110000", 70.0));
        pop.agents.push(agent_of("11110000", 50.0));
        pop.agents.push(agent_of("11110000", 50.0));
        let far_model = vec![genome_of("00001111")];
        pop.step(&v, cfg.ds_thres + 1, 1, &far_model, &cfg, &mut rng2)
            .unwrap();
        assert_eq!(pop.matures.len(), 1);
    }

    #[test]
    fn r_step_errors_on_consolidated() {
        let cfg = tiny_cfg();
        let mut rng = rng(7);
        let mut pop = spawn_r_population(3, &[], 0, 8, &cfg, &mut rng).unwrap();
        pop.state = RPopState::Consolidated;
        let err = pop.step(&vec_of("11110000"), 99, 1, &[], &cfg, &mut rng);
        assert!(matches!(err, Err(RabsError::NotTraining(3))));
    }

    #[test]
    fn consolidation_needs_streak_and_matures() {
        let cfg = RabsConfig {
            consolidate_after: 3,
            m_keep: 2,
            ..tiny_cfg()
        };
        let mut rng = rng(8);
        let mut pop = spawn_r_population(1, &[], 0, 8, &cfg, &mut rng).unwrap();
        pop.matures.push(agent_of("11110000", 97.0));
        pop.matures.push(agent_of("11110001", 93.0));
        pop.matures.push(agent_of("11110011", 99.0));

        pop.streak = 2;
        assert!(!pop.try_consolidate(&cfg).unwrap());
        pop.streak = 3;
        assert!(pop.try_consolidate(&cfg).unwrap());
        assert_eq!(pop.state, RPopState::Consolidated);
        // The two highest-energy matures became the signature.
        let sigs: Vec<String> = pop.signature.iter().map(|g| g.bits.to_string()).collect();
        assert_eq!(sigs, vec!["11110011".to_string(), "11110000".to_string()]);
        assert!(pop.agents.is_empty() && pop.matures.is_empty());
        // Consolidating twice violates the precondition.
        assert!(matches!(
            pop.try_consolidate(&cfg),
            Err(RabsError::NotTraining(1))
        ));
    }

    #[test]
    fn consolidation_blocked_below_m_keep() {
        let cfg = RabsConfig {
            consolidate_after: 1,
            m_keep: 5,
            ..tiny_cfg()
        };
        let mut rng = rng(9);
        let mut pop = spawn_r_population(0, &[], 0, 8, &cfg, &mut rng).unwrap();
        pop.streak = 10;
        for _ in 0..4 {
            pop.matures.push(agent_of("11110000", 95.0));
        }
        assert!(!pop.try_consolidate(&cfg).unwrap());
        assert_eq!(pop.state, RPopState::Training);
    }

    #[test]
    fn spawn_from_single_vector_without_mutation_copies_it() {
        let cfg = RabsConfig {
            r_size: 8,
            spawn_mutation_rate: 0.0,
            ..tiny_cfg()
        };
        let mut rng = rng(10);
        let v = vec_of("11001100");
        let pop = spawn_r_population(0, &[v.clone()], 5, 8, &cfg, &mut rng).unwrap();
        assert_eq!(pop.agents.len(), 8);
        for a in &pop.agents {
            assert_eq!(a.genome.bits, v.bits);
            assert_eq!(a.energy, cfg.energy.e_init);
        }
        assert!(pop.matures.is_empty() && pop.signature.is_empty());
        assert_eq!((pop.created_at, pop.last_danger_at), (5, 5));
    }

    #[test]
    fn spawn_from_empty_window_is_uniform_random() {
        let cfg = RabsConfig {
            r_size: 200,
            ..tiny_cfg()
        };
        let mut rng = rng(11);
        let pop = spawn_r_population(0, &[], 0, 64, &cfg, &mut rng).unwrap();
        let ones: usize = pop
            .agents
            .iter()
            .map(|a| a.genome.bits.ones() as usize)
            .sum();
        let total = 200 * 64;
        // Binomial(12800, 0.5): 4 sigma ≈ 226.
        assert!((ones as i64 - (total / 2) as i64).unsigned_abs() < 300);
    }

    #[test]
    fn spawn_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let window = [vec_of("11110000"), vec_of("00001111")];
        let a = spawn_r_population(0, &window, 0, 8, &cfg, &mut rng(12)).unwrap();
        let b = spawn_r_population(0, &window, 0, 8, &cfg, &mut rng(12)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn signature_match_takes_best_and_lowest_id() {
        let cfg = tiny_cfg();
        let mk = |id: PopId, sig: &str| RPopulation {
            id,
            state: RPopState::Consolidated,
            agents: Vec::new(),
            matures: Vec::new(),
            signature: vec![genome_of(sig)],
            created_at: 0,
            last_danger_at: 0,
            streak: 0,
        };
        let pops = vec![
            mk(0, "1111100000"),
            mk(1, "1111111111"),
            mk(2, "1111111111"),
        ];
        let v = vec_of("1111111111");
        let hit = match_signatures(&v, &pops, cfg.sigma_rec).unwrap().unwrap();
        assert_eq!(hit.pop, 1); // ties on affinity 1.0 break to lower id
        assert_eq!(hit.affinity, 1.0);
        assert_eq!(hit.matching, 1);

        // 0.5 affinity reaches nobody at the 0.9 bar.
        assert!(
            match_signatures(&vec_of("0000011111"), &pops, cfg.sigma_rec)
                .unwrap()
                .is_none()
        );
        // Training populations are invisible to the matcher.
        let mut training = mk(5, "0000011111");
        training.state = RPopState::Training;
        assert!(
            match_signatures(&vec_of("0000011111"), &[training], cfg.sigma_rec)
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn signature_match_boundary_is_inclusive() {
        let pops = vec![RPopulation {
            id: 0,
            state: RPopState::Consolidated,
            agents: Vec::new(),
            matures: Vec::new(),
            signature: vec![genome_of("1111111111")],
            created_at: 0,
            last_danger_at: 0,
            streak: 0,
        }];
        // 9 of 10 positions agree: affinity exactly 0.9.
        let hit = match_signatures(&vec_of("1111111110"), &pops, 0.9).unwrap();
        assert_eq!(hit.unwrap().affinity, 0.9);
    }

    #[test]
    fn insa_purge_removes_matches_and_refills() {
        let cfg = RabsConfig {
            n_size: 5,
            sigma_insa: 0.9,
            ..tiny_cfg()
        };
        let mut rng = rng(13);
        let sig = genome_of("1111111111");
        let mut npop = NPopulation::new();
        npop.agents.push(agent_of("1111111111", 80.0));
        npop.agents.push(agent_of("1111111110", 70.0)); // 0.9: inside the purge radius
        npop.agents.push(agent_of("1111100000", 90.0));
        npop.agents.push(agent_of("0000000000", 50.0));
        npop.agents.push(agent_of("1110111111", 60.0)); // 0.9 again
        npop.memory.push(agent_of("1111111111", 95.0));
        npop.memory.push(agent_of("0000011111", 92.0));

        let report = insa_purge(&mut npop, &[&sig], &cfg, &mut rng).unwrap();
        assert_eq!(report.removed_agents, 3);
        assert_eq!(report.removed_memory, 1);
        assert!(!report.catastrophic);
        // Refilled to size; memory losses stand.
        assert_eq!(npop.agents.len(), cfg.n_size);
        assert_eq!(npop.memory.len(), 1);
        for a in npop.agents.iter().chain(&npop.memory) {
            assert!(genome_affinity(&a.genome, &sig).unwrap() < cfg.sigma_insa);
        }
    }

    #[test]
    fn insa_purge_with_no_survivors_is_catastrophic() {
        let cfg = RabsConfig {
            n_size: 4,
            sigma_insa: 0.9,
            ..tiny_cfg()
        };
        let mut rng = rng(14);
        let sig = genome_of("11111111111111111111");
        let mut npop = NPopulation::new();
        for _ in 0..4 {
            npop.agents.push(agent_of("11111111111111111111", 70.0));
        }
        let report = insa_purge(&mut npop, &[&sig], &cfg, &mut rng).unwrap();
        assert!(report.catastrophic);
        assert_eq!(report.removed_agents, 4);
        assert_eq!(npop.agents.len(), cfg.n_size);
        for a in &npop.agents {
            assert!(genome_affinity(&a.genome, &sig).unwrap() < cfg.sigma_insa);
        }
    }

    #[test]
    fn insa_purge_without_signatures_is_a_noop() {
        let cfg = tiny_cfg();
        let mut rng = rng(15);
        let mut npop = NPopulation::new();
        npop.agents.push(agent_of("1010", 50.0));
        let before = npop.clone();
        let report = insa_purge(&mut npop, &[], &cfg, &mut rng).unwrap();
        assert_eq!(report.removed_agents + report.removed_memory, 0);
        assert_eq!(npop, before);
    }

    #[test]
    fn verdict_displays_compactly() {
        assert_eq!(Verdict::Normal.to_string(), "normal");
        assert_eq!(Verdict::Attack(None).to_string(), "attack");
        assert_eq!(Verdict::Attack(Some(4)).to_string(), "attack(4)");
    }
}
