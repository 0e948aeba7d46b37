//! Agent-based network anomaly detection with an artificial-immune flavor.
//!
//! Two detectors share one packet feature schema:
//!
//! * [`abs`] — a single population of permutation-genome agents fed by
//!   packet-derived particles, watched by an external mean-energy observer.
//! * [`rabs`] — a reactive two-tier system: a normality population raises
//!   danger signals when its memory cells starve, per-threat reactive
//!   populations raise attack signals, and consolidated populations leave
//!   behind immutable signatures that answer repeat attacks in a packet
//!   or two.
//!
//! [`synth`] generates labeled synthetic traffic, and [`harness`] runs the
//! phased experiment protocol (normal / attack / normal / repeat attack)
//! and scores the verdicts.

pub mod abs;
pub mod bits;
pub mod features;
pub mod genetics;
pub mod harness;
pub mod rabs;
pub mod synth;
