//! The per-packet driver: recognition fast path, population dynamics, rule
//! evaluation, signature consolidation, garbage collection, and versioned
//! snapshots for replay.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::{featurize, FeatureSpec, FeatureVector, PacketRecord};
use crate::genetics::{Agent, BinaryGenome};

use super::{
    evaluate_rules, insa_purge, match_signatures, spawn_r_population, InsaReport, NPopulation,
    PopId, RPopState, RPopulation, RabsConfig, RabsError, ReactionState, Signals, Verdict,
};

/// Bumped whenever the snapshot layout changes incompatibly.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Everything the detector knows, as one sequential state machine. Feed it
/// packets with [`RabsEngine::process_packet`]; replicas never share state.
#[derive(Clone, Debug)]
pub struct RabsEngine {
    cfg: RabsConfig,
    spec: FeatureSpec,
    npop: NPopulation,
    /// All reactive populations, training and consolidated, id-ascending.
    rpops: Vec<RPopulation>,
    /// Captured vectors used to seed fresh populations.
    recent: VecDeque<FeatureVector>,
    rng: ChaCha8Rng,
    /// Packets processed so far; also the seq_no assigned to the next packet.
    seq: u64,
    next_pop_id: PopId,
    /// Attack signal of the most recent packet; gates the next normality step.
    last_attack: u32,
}

/// Everything observable about how one packet was handled.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PacketOutcome {
    pub seq_no: u64,
    pub signals: Signals,
    pub reaction: ReactionState,
    pub verdict: Verdict,
    /// The packet was recognized by a signature and skipped the dynamics.
    pub fast_path: bool,
    /// Population spawned by a soft reaction on this packet, if any.
    pub spawned: Option<PopId>,
    /// Populations that consolidated on this packet.
    pub consolidated: Vec<PopId>,
    pub insa: Option<InsaReport>,
    /// The normality population had no fit parents when evolution was due.
    pub starved: bool,
    pub active_populations: usize,
}

/// Serializable dump of a whole engine; `restore` bit-reproduces the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EngineSnapshot {
    pub version: u32,
    pub cfg: RabsConfig,
    pub spec: FeatureSpec,
    pub npop: NPopulation,
    pub rpops: Vec<RPopulation>,
    pub recent: Vec<FeatureVector>,
    pub rng: ChaCha8Rng,
    pub seq: u64,
    pub next_pop_id: PopId,
    pub last_attack: u32,
}

impl RabsEngine {
    /// A fresh detector. The normality population seeds itself from the
    /// first captured packets (the opening of the stream is taken as the
    /// normality sample), so construction is cheap.
    pub fn new(cfg: RabsConfig, spec: FeatureSpec, seed: u64) -> Result<Self, RabsError> {
        cfg.validate()?;
        Ok(RabsEngine {
            cfg,
            spec,
            npop: NPopulation::new(),
            rpops: Vec::new(),
            recent: VecDeque::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seq: 0,
            next_pop_id: 0,
            last_attack: 0,
        })
    }

    pub fn config(&self) -> &RabsConfig {
        &self.cfg
    }

    pub fn schema(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn normality(&self) -> &NPopulation {
        &self.npop
    }

    pub fn populations(&self) -> &[RPopulation] {
        &self.rpops
    }

    pub fn packets_seen(&self) -> u64 {
        self.seq
    }

    pub fn last_attack_signal(&self) -> u32 {
        self.last_attack
    }

    pub fn signatures(&self) -> impl Iterator<Item = (PopId, &BinaryGenome)> {
        self.rpops
            .iter()
            .flat_map(|p| p.signature.iter().map(move |g| (p.id, g)))
    }

    fn alloc_pop_id(&mut self) -> PopId {
        let id = self.next_pop_id;
        self.next_pop_id += 1;
        id
    }

    /// Classify one packet and advance every part of the detector.
    pub fn process_packet(&mut self, p: &PacketRecord) -> Result<PacketOutcome, RabsError> {
        let v = featurize(p, &self.spec);
        let seq_no = self.seq;
        self.seq += 1;

        self.recent.push_back(v.clone());
        while self.recent.len() > self.cfg.seed_window {
            self.recent.pop_front();
        }
        if self.npop.agents.is_empty() {
            let lv = self.spec.lv();
            self.npop
                .prime(self.recent.make_contiguous(), lv, &self.cfg, &mut self.rng)?;
        }

        // Recognition fast path: a signature hit answers immediately and
        // freezes every population for this packet.
        if let Some(hit) = match_signatures(&v, &self.rpops, self.cfg.sigma_rec)? {
            let signals = Signals {
                danger: self.npop.last_danger,
                attack: hit.matching,
                attack_source: Some(hit.pop),
            };
            self.last_attack = hit.matching;
            self.gc();
            return Ok(PacketOutcome {
                seq_no,
                signals,
                reaction: ReactionState::FullReaction {
                    source: Some(hit.pop),
                },
                verdict: Verdict::Attack(Some(hit.pop)),
                fast_path: true,
                spawned: None,
                consolidated: Vec::new(),
                insa: None,
                starved: false,
                active_populations: self.rpops.len(),
            });
        }

        let n_out = self
            .npop
            .step(&v, self.last_attack, &self.cfg, &mut self.rng)?;
        let danger = n_out.danger;
        // Self model for censoring trainee matures: what normality's memory
        // holds after this packet's own admissions.
        let self_model: Vec<BinaryGenome> =
            self.npop.memory.iter().map(|m| m.genome.clone()).collect();

        let mut attack = 0u32;
        let mut source = None;
        for pop in self.rpops.iter_mut() {
            if pop.state != RPopState::Training {
                continue;
            }
            let a = pop.step(&v, danger, seq_no, &self_model, &self.cfg, &mut self.rng)?;
            if a > attack {
                attack = a;
                source = Some(pop.id);
            }
        }

        let mut consolidated = Vec::new();
        for pop in self.rpops.iter_mut() {
            if pop.state == RPopState::Training && pop.try_consolidate(&self.cfg)? {
                consolidated.push(pop.id);
            }
        }

        let signals = Signals {
            danger,
            attack,
            attack_source: source,
        };
        let reaction = evaluate_rules(&signals, &self.cfg);
        let mut spawned = None;
        let mut insa = None;
        let verdict = match reaction {
            ReactionState::Normal => Verdict::Normal,
            ReactionState::SoftReaction => {
                // One population per event: spawn only if none is training.
                if !self.rpops.iter().any(|p| p.state == RPopState::Training) {
                    let id = self.alloc_pop_id();
                    let lv = self.spec.lv();
                    let pop = spawn_r_population(
                        id,
                        self.recent.make_contiguous(),
                        seq_no,
                        lv,
                        &self.cfg,
                        &mut self.rng,
                    )?;
                    self.rpops.push(pop);
                    spawned = Some(id);
                }
                Verdict::Attack(None)
            }
            ReactionState::FullReaction { source } => Verdict::Attack(source),
            ReactionState::FullReactionWithInsa { source } => {
                let sigs: Vec<&BinaryGenome> =
                    self.rpops.iter().flat_map(|p| p.signature.iter()).collect();
                if !sigs.is_empty() {
                    insa = Some(insa_purge(&mut self.npop, &sigs, &self.cfg, &mut self.rng)?);
                }
                Verdict::Attack(source)
            }
        };
        self.last_attack = attack;
        self.gc();

        Ok(PacketOutcome {
            seq_no,
            signals,
            reaction,
            verdict,
            fast_path: false,
            spawned,
            consolidated,
            insa,
            starved: n_out.starved,
            active_populations: self.rpops.len(),
        })
    }

    /// Feed a whole trace in order.
    pub fn process_trace(
        &mut self,
        packets: &[PacketRecord],
    ) -> Result<Vec<PacketOutcome>, RabsError> {
        packets.iter().map(|p| self.process_packet(p)).collect()
    }

    /// Drop training populations that have not seen danger for too long.
    /// Consolidated populations are permanent.
    fn gc(&mut self) {
        let cutoff = self.cfg.gc_after;
        let now = self.seq;
        self.rpops.retain(|p| {
            p.state == RPopState::Consolidated || now.saturating_sub(p.last_danger_at) <= cutoff
        });
    }

    pub fn snapshot(&self) -> EngineSnapshot {
        EngineSnapshot {
            version: SNAPSHOT_VERSION,
            cfg: self.cfg.clone(),
            spec: self.spec.clone(),
            npop: self.npop.clone(),
            rpops: self.rpops.clone(),
            recent: self.recent.iter().cloned().collect(),
            rng: self.rng.clone(),
            seq: self.seq,
            next_pop_id: self.next_pop_id,
            last_attack: self.last_attack,
        }
    }

    /// Rebuild an engine from a snapshot, validating enough structure that a
    /// resumed run cannot silently diverge from the original.
    pub fn restore(snap: EngineSnapshot) -> Result<Self, RabsError> {
        if snap.version != SNAPSHOT_VERSION {
            return Err(RabsError::SnapshotVersion {
                found: snap.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        snap.cfg.validate()?;
        let corrupt = |msg: &str| Err(RabsError::BadSnapshot(msg.to_string()));
        let lv = snap.spec.lv();
        if snap.npop.agents.is_empty() && snap.seq > 0 {
            return corrupt("mid-run snapshot with an unseeded normality population");
        }
        for a in snap.npop.agents.iter().chain(&snap.npop.memory) {
            if a.genome.len() != lv {
                return corrupt("normality genome length does not match the schema");
            }
        }
        if snap.recent.len() > snap.cfg.seed_window {
            return corrupt("captured window longer than seed_window");
        }
        if snap.recent.iter().any(|v| v.len() != lv) {
            return corrupt("captured vector length does not match the schema");
        }
        let mut prev: Option<PopId> = None;
        for pop in &snap.rpops {
            if pop.id >= snap.next_pop_id {
                return corrupt("population id beyond the allocator");
            }
            if prev.is_some_and(|p| p >= pop.id) {
                return corrupt("population ids not ascending");
            }
            prev = Some(pop.id);
            let consolidated = pop.state == RPopState::Consolidated;
            if consolidated != !pop.signature.is_empty() {
                return corrupt("signature presence does not match population state");
            }
            if pop.signature.len() > snap.cfg.m_keep {
                return corrupt("signature larger than m_keep");
            }
            for g in pop
                .agents
                .iter()
                .map(|a| &a.genome)
                .chain(pop.matures.iter().map(|a| &a.genome))
                .chain(pop.signature.iter())
            {
                if g.len() != lv {
                    return corrupt("reactive genome length does not match the schema");
                }
            }
        }
        Ok(RabsEngine {
            cfg: snap.cfg,
            spec: snap.spec,
            npop: snap.npop,
            rpops: snap.rpops,
            recent: snap.recent.into(),
            rng: snap.rng,
            seq: snap.seq,
            next_pop_id: snap.next_pop_id,
            last_attack: snap.last_attack,
        })
    }

    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<(), RabsError> {
        let json = serde_json::to_string(&self.snapshot())?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self, RabsError> {
        let json = fs::read_to_string(path)?;
        Self::restore(serde_json::from_str(&json)?)
    }

    // -- Test scaffolding -------------------------------------------------
    //
    // The self/non-self inconsistency (attack signal while the normality
    // population is unperturbed) is hard to arrange organically on short
    // traces, so these helpers let tests and experiments construct it.

    /// Install an already-consolidated population with the given signature.
    pub fn install_signature(&mut self, genomes: Vec<BinaryGenome>) -> Result<PopId, RabsError> {
        if genomes.is_empty() || genomes.len() > self.cfg.m_keep {
            return Err(RabsError::BadConfig(format!(
                "signature must hold 1..={} genomes",
                self.cfg.m_keep
            )));
        }
        if genomes.iter().any(|g| g.len() != self.spec.lv()) {
            return Err(RabsError::BadConfig(
                "signature genome length does not match the schema".into(),
            ));
        }
        let id = self.alloc_pop_id();
        self.rpops.push(RPopulation {
            id,
            state: RPopState::Consolidated,
            agents: Vec::new(),
            matures: Vec::new(),
            signature: genomes,
            created_at: self.seq,
            last_danger_at: self.seq,
            streak: 0,
        });
        Ok(id)
    }

    /// Install a training population around `genome` with `activated` matures
    /// already at full energy.
    pub fn inject_training_population(
        &mut self,
        genome: &BinaryGenome,
        activated: u32,
    ) -> Result<PopId, RabsError> {
        if genome.len() != self.spec.lv() {
            return Err(RabsError::BadConfig(
                "genome length does not match the schema".into(),
            ));
        }
        let id = self.alloc_pop_id();
        let agents = (0..self.cfg.r_size)
            .map(|_| Agent::new(genome.clone(), self.cfg.energy.e_init))
            .collect();
        let matures = (0..activated)
            .map(|_| Agent::new(genome.clone(), self.cfg.energy.e_max))
            .collect();
        self.rpops.push(RPopulation {
            id,
            state: RPopState::Training,
            agents,
            matures,
            signature: Vec::new(),
            created_at: self.seq,
            last_danger_at: self.seq,
            streak: 0,
        });
        Ok(id)
    }

    /// Overwrite the genomes of the first `agents` live agents and the first
    /// `memory` memory agents with `genome` (energies kept). Returns how many
    /// of each were actually overwritten.
    pub fn contaminate_normality(
        &mut self,
        genome: &BinaryGenome,
        agents: usize,
        memory: usize,
    ) -> Result<(usize, usize), RabsError> {
        if genome.len() != self.spec.lv() {
            return Err(RabsError::BadConfig(
                "genome length does not match the schema".into(),
            ));
        }
        let na = agents.min(self.npop.agents.len());
        for a in &mut self.npop.agents[..na] {
            a.genome = genome.clone();
        }
        let nm = memory.min(self.npop.memory.len());
        for m in &mut self.npop.memory[..nm] {
            m.genome = genome.clone();
        }
        Ok((na, nm))
    }
}
