//! Synthetic labeled traffic.
//!
//! A profile is a trio of discrete distributions (transport, flag subset,
//! destination port) plus a ground-truth label. Segments are drawn i.i.d.
//! from a profile; a phase script strings segments together into one trace.
//! Generation is fully determined by the caller's RNG, so a seed pins the
//! whole trace.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::features::{Flag, FlagSet, Label, PacketRecord, Transport};

/// Source port stamped on every generated packet. Generated traffic keeps a
/// single nominal ephemeral port so that point-mass profiles produce
/// byte-identical records; nothing downstream reads the source port.
pub const SRC_PORT: u16 = 49152;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("profile {profile}: {what} weights must be non-negative and sum to 1")]
    BadDistribution { profile: String, what: String },
    #[error("profile {profile}: {what} distribution is empty")]
    EmptyDistribution { profile: String, what: String },
    #[error("unknown profile {0:?} in script")]
    UnknownProfile(String),
    #[error("script has no segments")]
    EmptyScript,
    #[error("script segment {index} has zero packets")]
    ZeroCount { index: usize },
}

/// A distribution over packet headers with a fixed ground-truth label.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficProfile {
    pub name: String,
    pub label: Label,
    pub transport_mix: Vec<(Transport, f64)>,
    /// Distribution over flag subsets (IP and TCP flags together). For UDP
    /// draws the TCP-side flags of the drawn subset are dropped.
    pub flag_mix: Vec<(Vec<Flag>, f64)>,
    pub port_mix: Vec<(u16, f64)>,
}

impl TrafficProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        fn check(profile: &str, what: &str, weights: &[f64]) -> Result<(), SynthError> {
            if weights.is_empty() {
                return Err(SynthError::EmptyDistribution {
                    profile: profile.to_string(),
                    what: what.to_string(),
                });
            }
            let sum: f64 = weights.iter().sum();
            if weights.iter().any(|w| *w < 0.0 || !w.is_finite())
                || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE
            {
                return Err(SynthError::BadDistribution {
                    profile: profile.to_string(),
                    what: what.to_string(),
                });
            }
            Ok(())
        }
        let t: Vec<f64> = self.transport_mix.iter().map(|(_, w)| *w).collect();
        let f: Vec<f64> = self.flag_mix.iter().map(|(_, w)| *w).collect();
        let p: Vec<f64> = self.port_mix.iter().map(|(_, w)| *w).collect();
        check(&self.name, "transport", &t)?;
        check(&self.name, "flag", &f)?;
        check(&self.name, "port", &p)?;
        Ok(())
    }
}

/// One experiment trace: named profile segments played back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseScript {
    pub segments: Vec<ScriptSegment>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScriptSegment {
    pub profile: String,
    pub count: usize,
}

impl PhaseScript {
    pub fn new(segments: Vec<(&str, usize)>) -> Self {
        PhaseScript {
            segments: segments
                .into_iter()
                .map(|(profile, count)| ScriptSegment {
                    profile: profile.to_string(),
                    count,
                })
                .collect(),
        }
    }

    pub fn total_packets(&self) -> usize {
        self.segments.iter().map(|s| s.count).sum()
    }
}

/// Draw one segment of `n` packets from a profile.
pub fn gen_segment<R: Rng + ?Sized>(
    profile: &TrafficProfile,
    n: usize,
    rng: &mut R,
) -> Result<Vec<PacketRecord>, SynthError> {
    profile.validate()?;
    let dist = |ws: Vec<f64>| WeightedIndex::new(ws).expect("validated weights");
    let transport_dist = dist(profile.transport_mix.iter().map(|(_, w)| *w).collect());
    let flag_dist = dist(profile.flag_mix.iter().map(|(_, w)| *w).collect());
    let port_dist = dist(profile.port_mix.iter().map(|(_, w)| *w).collect());

    let flag_sets: Vec<(FlagSet, FlagSet)> = profile
        .flag_mix
        .iter()
        .map(|(subset, _)| {
            let ip: Vec<Flag> = subset.iter().copied().filter(|f| f.is_ip()).collect();
            let tcp: Vec<Flag> = subset.iter().copied().filter(|f| !f.is_ip()).collect();
            (FlagSet::of(&ip), FlagSet::of(&tcp))
        })
        .collect();

    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let transport = profile.transport_mix[transport_dist.sample(rng)].0;
        let (ip_flags, mut tcp_flags) = flag_sets[flag_dist.sample(rng)];
        if transport == Transport::Udp {
            tcp_flags = FlagSet::empty();
        }
        let dst_port = profile.port_mix[port_dist.sample(rng)].0;
        out.push(PacketRecord {
            seq_no: i as u64,
            transport,
            src_port: SRC_PORT,
            dst_port,
            ip_flags,
            tcp_flags,
            label: profile.label.clone(),
        });
    }
    Ok(out)
}

/// Generate a whole script, renumbering packets 0..total across segments.
pub fn assemble<R: Rng + ?Sized>(
    script: &PhaseScript,
    profiles: &BTreeMap<String, TrafficProfile>,
    rng: &mut R,
) -> Result<Vec<PacketRecord>, SynthError> {
    if script.segments.is_empty() {
        return Err(SynthError::EmptyScript);
    }
    let mut out = Vec::with_capacity(script.total_packets());
    for (index, seg) in script.segments.iter().enumerate() {
        if seg.count == 0 {
            return Err(SynthError::ZeroCount { index });
        }
        let profile = profiles
            .get(&seg.profile)
            .ok_or_else(|| SynthError::UnknownProfile(seg.profile.clone()))?;
        let mut records = gen_segment(profile, seg.count, rng)?;
        let base = out.len() as u64;
        for (i, r) in records.iter_mut().enumerate() {
            r.seq_no = base + i as u64;
        }
        out.append(&mut records);
    }
    Ok(out)
}

fn profile(
    name: &str,
    label: Label,
    transport_mix: Vec<(Transport, f64)>,
    flag_mix: Vec<(Vec<Flag>, f64)>,
    port_mix: Vec<(u16, f64)>,
) -> TrafficProfile {
    TrafficProfile {
        name: name.to_string(),
        label,
        transport_mix,
        flag_mix,
        port_mix,
    }
}

/// The shipped profiles: one benign mix and four attack shapes.
///
/// * `normal` — web/mail/DNS-weighted ports, ACK/PSH-heavy flags.
/// * `dos-land-like` — crafted SYN probes (reserved IP bit, URG+SYN+FIN)
///   against Telnet; far from the benign mix.
/// * `dos-storm-like` — UDP flood of fragmented, reserved-bit datagrams at
///   the echo/time ports; UDP packets carry no TCP flags, which caps how far
///   from benign traffic this one can sit.
/// * `r2l-tunnel-like` — a covert channel over the HTTP port with crafted
///   flag junk (reserved TCP bits, URG+PSH+FIN, fragments).
/// * `u2r-quiet-like` — mostly indistinguishable from benign traffic, with
///   an occasional RST+FIN+reserved-bit packet; intentionally hard and
///   expected to be missed on first exposure.
pub fn default_profiles() -> BTreeMap<String, TrafficProfile> {
    use Flag::*;
    let mut map = BTreeMap::new();
    let mut add = |p: TrafficProfile| {
        map.insert(p.name.clone(), p);
    };

    add(profile(
        "normal",
        Label::Normal,
        vec![(Transport::Tcp, 0.9), (Transport::Udp, 0.1)],
        vec![
            (vec![Df, Ack], 0.35),
            (vec![Df, Ack, Psh], 0.40),
            (vec![Ack, Psh], 0.08),
            (vec![Ack], 0.05),
            (vec![Df, Syn], 0.04),
            (vec![Df, Ack, Syn], 0.02),
            (vec![Df, Ack, Fin], 0.04),
            (vec![Df, Ack, Rst], 0.02),
        ],
        vec![
            (80, 0.35),
            (443, 0.20),
            (53, 0.15),
            (25, 0.08),
            (22, 0.07),
            (143, 0.05),
            (110, 0.04),
            (123, 0.03),
            (8080, 0.02),
            (50000, 0.01),
        ],
    ));

    add(profile(
        "dos-land-like",
        Label::Attack("land-like".to_string()),
        vec![(Transport::Tcp, 1.0)],
        vec![(vec![Rb, Urg, Syn, Fin], 1.0)],
        vec![(23, 1.0)],
    ));

    // Flood against the small-services ports. TCP so the junk flag combo
    // survives (a UDP record cannot carry TCP flags), keeping the profile
    // far enough from normal traffic to drain agents faster than the
    // population can re-adapt.
    add(profile(
        "dos-storm-like",
        Label::Attack("storm-like".to_string()),
        vec![(Transport::Tcp, 1.0)],
        vec![(vec![Rb, Mf, Syn, F1, F2], 1.0)],
        vec![(7, 0.5), (37, 0.5)],
    ));

    add(profile(
        "r2l-tunnel-like",
        Label::Attack("tunnel-like".to_string()),
        vec![(Transport::Tcp, 1.0)],
        vec![(vec![Mf, F1, F2, Urg, Psh, Fin], 1.0)],
        vec![(80, 1.0)],
    ));

    add(profile(
        "u2r-quiet-like",
        Label::Attack("quiet-like".to_string()),
        vec![(Transport::Tcp, 1.0)],
        vec![
            (vec![Df, Ack], 0.35),
            (vec![Df, Ack, Psh], 0.35),
            (vec![Rb, Rst, Fin], 0.30),
        ],
        vec![(80, 0.5), (22, 0.3), (4045, 0.2)],
    ));

    map
}

/// Names of the shipped attack profiles, in a stable order.
pub fn default_attack_names() -> Vec<String> {
    default_profiles()
        .values()
        .filter(|p| p.label.is_attack())
        .map(|p| p.name.clone())
        .collect()
}
