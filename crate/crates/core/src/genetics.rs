//! Genomes, agents, and the shared evolutionary operators.
//!
//! Binary-genome agents live on affinity: exposure to a packet vector moves
//! their energy by `gain * (affinity - break_even)`. Permutation-genome
//! agents are used by the particle-feeding detector and only need the swap
//! mutation here. All randomized operators take the caller's RNG so that
//! runs are replayable from a seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::features::FeatureVector;

#[derive(Debug, thiserror::Error)]
pub enum GeneticsError {
    #[error("length mismatch: genome has {genome} bits, vector has {vector}")]
    LengthMismatch { genome: usize, vector: usize },
    #[error("selection pool is empty")]
    EmptyPool,
    #[error("selection pool has zero total energy")]
    ZeroEnergyPool,
    #[error("mutation rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("permutation genome needs at least 2 positions, has {0}")]
    GenomeTooShort(usize),
    #[error("invalid energy parameters: {0}")]
    BadParams(String),
}

/// Fixed-length binary genome; same bit layout as a feature vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryGenome {
    pub bits: BitString,
}

impl BinaryGenome {
    pub fn new(bits: BitString) -> Self {
        BinaryGenome { bits }
    }

    pub fn random<R: Rng + ?Sized>(lv: usize, rng: &mut R) -> Self {
        BinaryGenome {
            bits: BitString::random(lv, rng),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Permutation of the particle type indices `0..k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationGenome {
    pub order: Vec<u16>,
}

impl PermutationGenome {
    pub fn identity(k: usize) -> Self {
        PermutationGenome {
            order: (0..k as u16).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut order: Vec<u16> = (0..k as u16).collect();
        order.shuffle(rng);
        PermutationGenome { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Position of a particle type in this genome, if the type exists.
    pub fn position_of(&self, ptype: u16) -> Option<usize> {
        self.order.iter().position(|&t| t == ptype)
    }
}

/// Energy bounds and thresholds shared by the agent populations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    /// Energy a fresh agent is born with.
    pub e_init: f64,
    /// Hard energy ceiling.
    pub e_max: f64,
    /// Exposure gain `kappa`: energy moves by `gain * (affinity - break_even)`.
    pub gain: f64,
    /// Affinity at which exposure neither feeds nor starves.
    pub break_even: f64,
    /// Below this an agent is starving (unfit to reproduce).
    pub energy_thres: f64,
    /// At or above this an agent counts as mature (memory candidate).
    pub mem_thres: f64,
}

impl Default for EnergyParams {
    // With these scales a fully mismatched stream kills a full-energy agent
    // in ~7 packets and a perfectly matched one matures from e_init in ~27.
    fn default() -> Self {
        EnergyParams {
            e_init: 50.0,
            e_max: 100.0,
            gain: 15.0,
            break_even: 0.9,
            energy_thres: 60.0,
            mem_thres: 90.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), GeneticsError> {
        let bad = |msg: &str| Err(GeneticsError::BadParams(msg.to_string()));
        if !(self.e_init > 0.0 && self.e_init <= self.e_max) {
            return bad("require 0 < e_init <= e_max");
        }
        if !(self.energy_thres > 0.0 && self.energy_thres < self.mem_thres) {
            return bad("require 0 < energy_thres < mem_thres");
        }
        if self.mem_thres > self.e_max {
            return bad("require mem_thres <= e_max");
        }
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return bad("require gain > 0");
        }
        if !(0.0..=1.0).contains(&self.break_even) {
            return bad("require break_even in [0, 1]");
        }
        Ok(())
    }
}

/// An agent: a genome plus its energy account.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Agent<G> {
    pub genome: G,
    pub energy: f64,
    pub age: u64,
}

impl<G> Agent<G> {
    pub fn new(genome: G, energy: f64) -> Self {
        Agent {
            genome,
            energy,
            age: 0,
        }
    }

    /// Energy has hit the floor; removed at the owner's next replacement step.
    pub fn is_dead(&self) -> bool {
        self.energy <= 0.0
    }
}

pub type BinaryAgent = Agent<BinaryGenome>;
pub type PermAgent = Agent<PermutationGenome>;

/// Fraction of positions where genome and vector agree, in [0, 1].
pub fn affinity(genome: &BinaryGenome, v: &FeatureVector) -> Result<f64, GeneticsError> {
    if genome.len() != v.len() {
        return Err(GeneticsError::LengthMismatch {
            genome: genome.len(),
            vector: v.len(),
        });
    }
    Ok(genome.bits.agreement(&v.bits) as f64 / genome.len() as f64)
}

/// `affinity` between two genomes (used when signatures are compared against
/// live agents rather than against traffic).
pub fn genome_affinity(a: &BinaryGenome, b: &BinaryGenome) -> Result<f64, GeneticsError> {
    if a.len() != b.len() {
        return Err(GeneticsError::LengthMismatch {
            genome: a.len(),
            vector: b.len(),
        });
    }
    Ok(a.bits.agreement(&b.bits) as f64 / a.len() as f64)
}

impl Agent<BinaryGenome> {
    /// Expose the agent to one packet vector: energy moves by
    /// `gain * (affinity - break_even)`, clamped to `[0, e_max]`, and the
    /// agent ages by one. The genome never changes here.
    pub fn expose(&mut self, v: &FeatureVector, p: &EnergyParams) -> Result<(), GeneticsError> {
        let a = affinity(&self.genome, v)?;
        self.energy = (self.energy + p.gain * (a - p.break_even)).clamp(0.0, p.e_max);
        self.age += 1;
        Ok(())
    }
}

/// Fitness-proportional selection over agent energies. Zero-energy agents
/// are never picked; an all-zero pool cannot be normalized and errors.
pub fn fps_select<'a, G, R: Rng + ?Sized>(
    pool: &'a [Agent<G>],
    rng: &mut R,
) -> Result<&'a Agent<G>, GeneticsError> {
    let refs: Vec<&Agent<G>> = pool.iter().collect();
    fps_select_ref(&refs, rng)
}

/// `fps_select` over a borrowed pool; lets population steps select from a
/// filtered subset without cloning agents.
pub fn fps_select_ref<'a, G, R: Rng + ?Sized>(
    pool: &[&'a Agent<G>],
    rng: &mut R,
) -> Result<&'a Agent<G>, GeneticsError> {
    if pool.is_empty() {
        return Err(GeneticsError::EmptyPool);
    }
    let total: f64 = pool.iter().map(|a| a.energy).sum();
    if total <= 0.0 {
        return Err(GeneticsError::ZeroEnergyPool);
    }
    let draw = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    for agent in pool {
        cum += agent.energy;
        if draw < cum {
            return Ok(agent);
        }
    }
    // Floating-point slack at the top of the range: fall back to the last
    // agent with positive energy.
    pool.iter()
        .rev()
        .find(|a| a.energy > 0.0)
        .copied()
        .ok_or(GeneticsError::ZeroEnergyPool)
}

/// Uniform crossover: each position independently keeps or swaps the parent
/// genes with a fair coin, so every gene ends up in exactly one child.
pub fn uniform_crossover<R: Rng + ?Sized>(
    p1: &BinaryGenome,
    p2: &BinaryGenome,
    rng: &mut R,
) -> Result<(BinaryGenome, BinaryGenome), GeneticsError> {
    if p1.len() != p2.len() {
        return Err(GeneticsError::LengthMismatch {
            genome: p1.len(),
            vector: p2.len(),
        });
    }
    let mut o1 = p1.clone();
    let mut o2 = p2.clone();
    for i in 0..p1.len() {
        if rng.gen_bool(0.5) {
            let (a, b) = (p1.bits.get(i), p2.bits.get(i));
            o1.bits.set(i, b);
            o2.bits.set(i, a);
        }
    }
    Ok((o1, o2))
}

/// Flip each bit independently with the given probability.
pub fn bitflip_mutate<R: Rng + ?Sized>(
    g: &BinaryGenome,
    rate: f64,
    rng: &mut R,
) -> Result<BinaryGenome, GeneticsError> {
    if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
        return Err(GeneticsError::BadRate(rate));
    }
    let mut out = g.clone();
    if rate > 0.0 {
        for i in 0..out.len() {
            if rng.gen_bool(rate) {
                out.bits.flip(i);
            }
        }
    }
    Ok(out)
}

/// Swap the genes at two distinct positions.
pub fn swap_mutate<R: Rng + ?Sized>(
    g: &PermutationGenome,
    rng: &mut R,
) -> Result<PermutationGenome, GeneticsError> {
    let k = g.len();
    if k < 2 {
        return Err(GeneticsError::GenomeTooShort(k));
    }
    let i = rng.gen_range(0..k);
    let mut j = rng.gen_range(0..k - 1);
    if j >= i {
        j += 1;
    }
    let mut out = g.clone();
    out.order.swap(i, j);
    Ok(out)
}
