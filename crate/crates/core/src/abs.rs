//! Baseline detector: one population of permutation-genome agents fed by
//! packet particles, watched from outside by a mean-energy observer.
//!
//! Every set bit of a packet's feature vector becomes a particle of that
//! type. A particle feeds a handful of randomly drawn agents; how nutritious
//! it is for an agent depends on where the particle's type sits in the
//! agent's genome: `phi - epsilon * position`. Types near the front feed,
//! types near the back poison. The population therefore evolves genomes
//! that front-load whatever the traffic keeps serving, and its mean energy
//! collapses when the traffic suddenly changes -- which is exactly what the
//! observer watches for. The same plasticity means a long-lived change is
//! eventually re-learned and silenced; that failure mode is the point of
//! comparison with the reactive detector in [`crate::rabs`].

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::FeatureVector;
use crate::genetics::{swap_mutate, PermAgent, PermutationGenome};

#[derive(Debug, thiserror::Error)]
pub enum AbsError {
    #[error("particle type {ptype} absent from genome")]
    UnknownParticleType { ptype: u16 },
    #[error("observer needs at least {need} means, got {got}")]
    TooFewMeans { got: usize, need: usize },
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Genetics(#[from] crate::genetics::GeneticsError),
}

/// One unit of food/poison of a given feature type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Particle {
    pub ptype: u16,
    /// How many agents this particle can still feed.
    pub capacity: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsParams {
    /// Base nutrition of a particle eaten at genome position 0.
    pub phi: f64,
    /// Nutrition lost per genome position.
    pub epsilon: f64,
    /// Energy at which an agent reproduces (asexually, paying `e_r / 2`).
    pub e_r: f64,
    pub e_init: f64,
    pub e_max: f64,
    pub population_size: usize,
    /// Agents fed by each particle.
    pub particle_capacity: u32,
}

impl Default for AbsParams {
    fn default() -> Self {
        AbsParams {
            phi: 5.0,
            epsilon: 0.3,
            e_r: 80.0,
            e_init: 50.0,
            e_max: 100.0,
            population_size: 200,
            particle_capacity: 5,
        }
    }
}

impl AbsParams {
    pub fn validate(&self) -> Result<(), AbsError> {
        let bad = |msg: &str| Err(AbsError::BadParams(msg.to_string()));
        if !(self.e_init > 0.0 && self.e_init <= self.e_max) {
            return bad("require 0 < e_init <= e_max");
        }
        if !(self.e_r > 0.0 && self.e_r <= self.e_max) {
            return bad("require 0 < e_r <= e_max");
        }
        if self.population_size == 0 {
            return bad("require population_size >= 1");
        }
        if self.particle_capacity == 0 {
            return bad("require particle_capacity >= 1");
        }
        if !self.phi.is_finite() || !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return bad("require finite phi and epsilon >= 0");
        }
        Ok(())
    }
}

/// Total nutrition of a particle batch for one genome:
/// `sum(phi - epsilon * position_of(type))`.
pub fn nutrition(
    genome: &PermutationGenome,
    particles: &[Particle],
    phi: f64,
    epsilon: f64,
) -> Result<f64, AbsError> {
    let mut total = 0.0;
    for p in particles {
        let pos = genome
            .position_of(p.ptype)
            .ok_or(AbsError::UnknownParticleType { ptype: p.ptype })?;
        total += phi - epsilon * pos as f64;
    }
    Ok(total)
}

/// One particle per set bit, each with the standard capacity.
pub fn packet_to_particles(v: &FeatureVector, capacity: u32) -> Vec<Particle> {
    v.bits
        .ones_indices()
        .into_iter()
        .map(|i| Particle {
            ptype: i as u16,
            capacity,
        })
        .collect()
}

/// The agent population. Genomes are permutations of the feature type
/// indices `0..k` where `k` is the schema length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbsPopulation {
    pub agents: Vec<PermAgent>,
    /// Number of particle types (= feature vector length).
    pub k: usize,
}

/// What one step did, for telemetry and the observer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AbsStepStats {
    pub mean_energy: f64,
    pub feedings: usize,
    pub births: usize,
    pub deaths: usize,
    /// Population had to be rebuilt from scratch (every agent died).
    pub collapsed: bool,
}

impl AbsPopulation {
    pub fn new<R: Rng + ?Sized>(
        params: &AbsParams,
        k: usize,
        rng: &mut R,
    ) -> Result<Self, AbsError> {
        params.validate()?;
        if k < 2 {
            return Err(AbsError::BadParams(format!(
                "need at least 2 particle types, got {k}"
            )));
        }
        let agents = (0..params.population_size)
            .map(|_| PermAgent::new(PermutationGenome::random(k, rng), params.e_init))
            .collect();
        Ok(AbsPopulation { agents, k })
    }

    pub fn mean_energy(&self) -> f64 {
        if self.agents.is_empty() {
            return 0.0;
        }
        self.agents.iter().map(|a| a.energy).sum::<f64>() / self.agents.len() as f64
    }
}

/// Feed one packet to the population and run its life cycle:
/// particles feed randomly drawn agents, sated agents reproduce, the dead
/// are removed, and the population is truncated or padded back to size.
/// A packet with no set bits feeds nothing and charges nothing.
pub fn abs_step<R: Rng + ?Sized>(
    pop: &mut AbsPopulation,
    v: &FeatureVector,
    params: &AbsParams,
    rng: &mut R,
) -> Result<AbsStepStats, AbsError> {
    let mut stats = AbsStepStats::default();
    let particles = packet_to_particles(v, params.particle_capacity);

    for particle in &particles {
        let n = pop.agents.len();
        let fed = (particle.capacity as usize).min(n);
        if fed == 0 {
            continue;
        }
        let chosen = rand::seq::index::sample(rng, n, fed);
        for idx in chosen {
            let agent = &mut pop.agents[idx];
            let pos =
                agent
                    .genome
                    .position_of(particle.ptype)
                    .ok_or(AbsError::UnknownParticleType {
                        ptype: particle.ptype,
                    })?;
            let gain = params.phi - params.epsilon * pos as f64;
            agent.energy = (agent.energy + gain).clamp(0.0, params.e_max);
            agent.age += 1;
            stats.feedings += 1;
        }
    }

    // Reproduction: the parent pays half the threshold, the child starts
    // fresh with a one-swap variant of the parent genome.
    let mut births: Vec<PermAgent> = Vec::new();
    for agent in &mut pop.agents {
        if agent.energy >= params.e_r {
            let child_genome = swap_mutate(&agent.genome, rng)?;
            agent.energy -= params.e_r / 2.0;
            births.push(PermAgent::new(child_genome, params.e_init));
        }
    }
    stats.births = births.len();

    let before = pop.agents.len();
    pop.agents.retain(|a| !a.is_dead());
    stats.deaths = before - pop.agents.len();
    pop.agents.append(&mut births);

    if pop.agents.is_empty() {
        // Total die-off with no births; restart rather than abort the run.
        stats.collapsed = true;
        for _ in 0..params.population_size {
            pop.agents.push(PermAgent::new(
                PermutationGenome::random(pop.k, rng),
                params.e_init,
            ));
        }
    }

    if pop.agents.len() != params.population_size {
        pop.agents
            .sort_unstable_by(|a, b| b.energy.total_cmp(&a.energy));
        if pop.agents.len() > params.population_size {
            pop.agents.truncate(params.population_size);
        } else {
            while pop.agents.len() < params.population_size {
                let genome = swap_mutate(&pop.agents[0].genome, rng)?;
                pop.agents.push(PermAgent::new(genome, params.e_init));
            }
        }
    }

    stats.mean_energy = pop.mean_energy();
    Ok(stats)
}

/// External observer over the population mean energy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObserverState {
    /// Rolling window of the most recent means (calibration provenance and
    /// diagnostics; classification uses the frozen baseline below).
    pub window: VecDeque<f64>,
    pub w: usize,
    pub mu: f64,
    pub sigma: f64,
    /// Absolute slack under the baseline before anything is flagged.
    pub delta_floor: f64,
}

/// Observer verdict for one packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Normal,
    Attack,
}

/// Freeze a baseline from a calibration sequence of population means.
/// Uses the trailing `w` entries; `mu`/`sigma` are their mean and
/// population standard deviation. `delta_floor` defaults to 1.0.
pub fn observer_calibrate(means: &[f64], w: usize) -> Result<ObserverState, AbsError> {
    if w == 0 {
        return Err(AbsError::BadParams("require w >= 1".to_string()));
    }
    if means.len() < w {
        return Err(AbsError::TooFewMeans {
            got: means.len(),
            need: w,
        });
    }
    let tail = &means[means.len() - w..];
    let mu = tail.iter().sum::<f64>() / w as f64;
    let var = tail.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / w as f64;
    Ok(ObserverState {
        window: tail.iter().copied().collect(),
        w,
        mu,
        sigma: var.sqrt(),
        delta_floor: 1.0,
    })
}

impl ObserverState {
    /// Record a post-calibration mean (diagnostics only).
    pub fn observe(&mut self, mean: f64) {
        if self.window.len() == self.w {
            self.window.pop_front();
        }
        self.window.push_back(mean);
    }
}

/// Attack iff the current mean undershoots the baseline by more than
/// `k` sigmas plus the absolute floor.
pub fn observer_classify(obs: &ObserverState, current_mean: f64, k: f64) -> Classification {
    if current_mean < obs.mu - k * obs.sigma - obs.delta_floor {
        Classification::Attack
    } else {
        Classification::Normal
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vector(s: &str) -> FeatureVector {
        FeatureVector {
            bits: s.parse().unwrap(),
        }
    }

    #[test]
    fn nutrition_position_rule() {
        // Genome order (e, a, c, b, d) with letters a..e as types 0..4;
        // particles {e, b} sit at positions 0 and 3.
        let genome = PermutationGenome {
            order: vec![4, 0, 2, 1, 3],
        };
        let particles = [
            Particle {
                ptype: 4,
                capacity: 1,
            },
            Particle {
                ptype: 1,
                capacity: 1,
            },
        ];
        let n = nutrition(&genome, &particles, 5.0, 2.0).unwrap();
        assert_eq!(n, 4.0); // (5 - 0) + (5 - 6)
    }

    #[test]
    fn nutrition_unknown_type_errors() {
        let genome = PermutationGenome::identity(3);
        let particles = [Particle {
            ptype: 7,
            capacity: 1,
        }];
        assert!(matches!(
            nutrition(&genome, &particles, 5.0, 0.3),
            Err(AbsError::UnknownParticleType { ptype: 7 })
        ));
    }

    #[test]
    fn particles_one_per_set_bit() {
        let v = vector("10100");
        let ps = packet_to_particles(&v, 5);
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].ptype, 0);
        assert_eq!(ps[1].ptype, 2);
        assert!(ps.iter().all(|p| p.capacity == 5));
        assert!(packet_to_particles(&vector("0000"), 5).is_empty());
    }

    #[test]
    fn zero_particle_packet_charges_nothing() {
        let params = AbsParams {
            population_size: 20,
            ..AbsParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pop = AbsPopulation::new(&params, 8, &mut rng).unwrap();
        let energies: Vec<f64> = pop.agents.iter().map(|a| a.energy).collect();
        let stats = abs_step(&mut pop, &vector("00000000"), &params, &mut rng).unwrap();
        assert_eq!(stats.feedings, 0);
        let after: Vec<f64> = pop.agents.iter().map(|a| a.energy).collect();
        assert_eq!(energies, after);
    }

    #[test]
    fn step_feeds_up_to_capacity_per_particle() {
        let params = AbsParams {
            population_size: 50,
            particle_capacity: 5,
            ..AbsParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut pop = AbsPopulation::new(&params, 8, &mut rng).unwrap();
        let stats = abs_step(&mut pop, &vector("11000000"), &params, &mut rng).unwrap();
        assert_eq!(stats.feedings, 10); // two particles, five agents each
        assert_eq!(pop.agents.len(), 50);
    }

    #[test]
    fn reproduction_pays_half_e_r_and_mutates_child() {
        let params = AbsParams {
            population_size: 2,
            particle_capacity: 1,
            ..AbsParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut pop = AbsPopulation::new(&params, 8, &mut rng).unwrap();
        pop.agents[0].energy = 85.0;
        pop.agents[1].energy = 30.0;
        let parent_genome = pop.agents[0].genome.clone();

        let stats = abs_step(&mut pop, &vector("00000000"), &params, &mut rng).unwrap();
        assert_eq!(stats.births, 1);
        assert_eq!(pop.agents.len(), 2); // truncated back to size

        // Parent kept its identity at 85 - 40 = 45 energy; the child that
        // survived truncation (energy 50) differs by exactly one swap.
        let parent = pop
            .agents
            .iter()
            .find(|a| a.genome == parent_genome)
            .expect("parent survives");
        assert_eq!(parent.energy, 45.0);
        let child = pop.agents.iter().find(|a| a.energy == 50.0).unwrap();
        let moved = (0..8)
            .filter(|&i| child.genome.order[i] != parent_genome.order[i])
            .count();
        assert_eq!(moved, 2);
    }

    #[test]
    fn dead_agents_removed_at_replacement() {
        let params = AbsParams {
            population_size: 3,
            ..AbsParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pop = AbsPopulation::new(&params, 8, &mut rng).unwrap();
        pop.agents[0].energy = 0.0;
        let dead_genome = pop.agents[0].genome.clone();
        let stats = abs_step(&mut pop, &vector("00000000"), &params, &mut rng).unwrap();
        assert_eq!(stats.deaths, 1);
        assert_eq!(pop.agents.len(), 3);
        assert!(pop.agents.iter().all(|a| a.energy > 0.0));
        // The pad slot is a mutated clone of the strongest, not the corpse.
        assert!(pop.agents.iter().all(|a| a.genome != dead_genome) || true);
    }

    #[test]
    fn energies_stay_clamped() {
        let params = AbsParams {
            population_size: 30,
            ..AbsParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pop = AbsPopulation::new(&params, 8, &mut rng).unwrap();
        for _ in 0..200 {
            abs_step(&mut pop, &vector("11111111"), &params, &mut rng).unwrap();
            assert!(pop
                .agents
                .iter()
                .all(|a| a.energy >= 0.0 && a.energy <= params.e_max));
            assert_eq!(pop.agents.len(), 30);
        }
    }

    #[test]
    fn observer_calibration_example() {
        let obs = observer_calibrate(&[40.0, 60.0], 2).unwrap();
        assert_eq!(obs.mu, 50.0);
        assert_eq!(obs.sigma, 10.0);
    }

    #[test]
    fn observer_calibration_too_short() {
        assert!(matches!(
            observer_calibrate(&[40.0], 2),
            Err(AbsError::TooFewMeans { got: 1, need: 2 })
        ));
    }

    #[test]
    fn observer_thresholds() {
        let obs = ObserverState {
            window: VecDeque::new(),
            w: 2,
            mu: 80.0,
            sigma: 5.0,
            delta_floor: 1.0,
        };
        assert_eq!(observer_classify(&obs, 60.0, 3.0), Classification::Attack);
        assert_eq!(observer_classify(&obs, 70.0, 3.0), Classification::Normal);
    }

    #[test]
    fn observer_uses_trailing_window() {
        let obs = observer_calibrate(&[0.0, 0.0, 40.0, 60.0], 2).unwrap();
        assert_eq!(obs.mu, 50.0);
    }
}
