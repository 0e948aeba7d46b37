//! Packet records and their projection onto binary feature vectors.
//!
//! A packet is reduced to header facts only: transport, ports, IP flags and
//! TCP flags. The feature schema maps each of those facts to one bit: eleven
//! flag bits followed by one bit per named service port group. The default
//! schema has 39 entries.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::bits::BitString;

/// Transport protocol of a packet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    Tcp,
    Udp,
}

impl Transport {
    pub fn name(self) -> &'static str {
        match self {
            Transport::Tcp => "TCP",
            Transport::Udp => "UDP",
        }
    }
}

/// Header flags the schema can observe. RB/MF/DF live in the IP header
/// (RB is the reserved bit), the rest in the TCP header; F1/F2 are the two
/// reserved TCP bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Flag {
    Rb,
    Mf,
    Df,
    F1,
    F2,
    Urg,
    Ack,
    Psh,
    Rst,
    Syn,
    Fin,
}

impl Flag {
    pub const ALL: [Flag; 11] = [
        Flag::Rb,
        Flag::Mf,
        Flag::Df,
        Flag::F1,
        Flag::F2,
        Flag::Urg,
        Flag::Ack,
        Flag::Psh,
        Flag::Rst,
        Flag::Syn,
        Flag::Fin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Flag::Rb => "RB",
            Flag::Mf => "MF",
            Flag::Df => "DF",
            Flag::F1 => "F1",
            Flag::F2 => "F2",
            Flag::Urg => "URG",
            Flag::Ack => "ACK",
            Flag::Psh => "PSH",
            Flag::Rst => "RST",
            Flag::Syn => "SYN",
            Flag::Fin => "FIN",
        }
    }

    pub fn from_name(name: &str) -> Option<Flag> {
        Flag::ALL.iter().copied().find(|f| f.name() == name)
    }

    /// True for IP-header flags, false for TCP-header flags.
    pub fn is_ip(self) -> bool {
        matches!(self, Flag::Rb | Flag::Mf | Flag::Df)
    }
}

/// Small set of flags, kept as a bitmask over `Flag::ALL` order.
#[derive(Clone, Copy, Default, PartialEq, Eq)]
pub struct FlagSet(u16);

impl FlagSet {
    pub fn empty() -> Self {
        FlagSet(0)
    }

    pub fn of(flags: &[Flag]) -> Self {
        let mut s = FlagSet::empty();
        for &f in flags {
            s.insert(f);
        }
        s
    }

    pub fn insert(&mut self, f: Flag) {
        self.0 |= 1 << f as u16;
    }

    pub fn contains(self, f: Flag) -> bool {
        self.0 >> f as u16 & 1 == 1
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> u32 {
        self.0.count_ones()
    }

    pub fn iter(self) -> impl Iterator<Item = Flag> {
        Flag::ALL.into_iter().filter(move |&f| self.contains(f))
    }
}

impl fmt::Debug for FlagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(Flag::name)).finish()
    }
}

/// Ground-truth label carried by a trace. Evaluation-only: nothing in the
/// detectors reads it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Label {
    Normal,
    Attack(String),
}

impl Label {
    pub fn is_attack(&self) -> bool {
        matches!(self, Label::Attack(_))
    }

    pub fn attack_name(&self) -> Option<&str> {
        match self {
            Label::Normal => None,
            Label::Attack(name) => Some(name),
        }
    }
}

/// One observed packet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub seq_no: u64,
    pub transport: Transport,
    pub src_port: u16,
    pub dst_port: u16,
    pub ip_flags: FlagSet,
    pub tcp_flags: FlagSet,
    pub label: Label,
}

impl PacketRecord {
    /// UDP packets cannot carry TCP flags.
    pub fn is_consistent(&self) -> bool {
        self.transport == Transport::Tcp || self.tcp_flags.is_empty()
    }

    fn flags_combined(&self) -> impl Iterator<Item = Flag> + '_ {
        self.ip_flags.iter().chain(self.tcp_flags.iter())
    }
}

/// Inclusive port range. A single port is a degenerate range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub fn single(p: u16) -> Self {
        PortRange { lo: p, hi: p }
    }

    pub fn contains(&self, p: u16) -> bool {
        self.lo <= p && p <= self.hi
    }
}

/// What makes one feature bit fire.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Matcher {
    /// The flag is present in the packet (IP or TCP side).
    Flag(Flag),
    /// The destination port falls in one of the ranges.
    Ports(Vec<PortRange>),
}

/// One named entry of the feature schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub matcher: Matcher,
}

/// Ordered feature schema; entry `i` controls bit `i` of every vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    entries: Vec<FeatureEntry>,
}

/// Binary projection of one packet under a schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub bits: BitString,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected {expected} tab-separated fields, got {got}")]
    FieldCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: unknown transport {value:?} (expected TCP or UDP)")]
    BadTransport { line: usize, value: String },
    #[error("line {line}: invalid port {value:?}")]
    BadPort { line: usize, value: String },
    #[error("line {line}: unknown flag name {flag:?}")]
    UnknownFlag { line: usize, flag: String },
    #[error("line {line}: TCP flags {flags:?} on a UDP packet")]
    TcpFlagsOnUdp { line: usize, flags: String },
    #[error("line {line}: invalid label {value:?} (expected `normal` or `attack:<name>`)")]
    BadLabel { line: usize, value: String },
    #[error("line {line}: invalid feature index {value:?} (entries must be 0..n in order)")]
    BadIndex { line: usize, value: String },
    #[error("line {line}: unknown entry kind {value:?} (expected `flag` or `port`)")]
    BadKind { line: usize, value: String },
    #[error("line {line}: invalid port list {value:?}")]
    BadPortList { line: usize, value: String },
    #[error("feature schema is empty")]
    EmptySpec,
}

impl FeatureSpec {
    pub fn new(entries: Vec<FeatureEntry>) -> Result<Self, FeatureError> {
        if entries.is_empty() {
            return Err(FeatureError::EmptySpec);
        }
        Ok(FeatureSpec { entries })
    }

    /// Vector length under this schema.
    pub fn lv(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[FeatureEntry] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// The shipped schema: the eleven header flags followed by 28 service
    /// port groups (39 bits total).
    pub fn default_spec() -> Self {
        let mut entries: Vec<FeatureEntry> = Flag::ALL
            .iter()
            .map(|&f| FeatureEntry {
                name: f.name().to_string(),
                matcher: Matcher::Flag(f),
            })
            .collect();
        let singles = |ports: &[u16]| -> Vec<PortRange> {
            ports.iter().map(|&p| PortRange::single(p)).collect()
        };
        let port_groups: Vec<(&str, Vec<PortRange>)> = vec![
            ("Telnet", singles(&[23])),
            ("SSH", singles(&[22])),
            ("FTP", singles(&[20, 21])),
            ("Netbios", singles(&[137, 138, 139, 445])),
            ("Rlogin", singles(&[513])),
            ("RPC", singles(&[111])),
            ("NFS", singles(&[2049])),
            ("NNTP", singles(&[119])),
            ("Lockd", singles(&[4045])),
            ("Xwin", vec![PortRange { lo: 6000, hi: 6063 }]),
            ("DNS", singles(&[53])),
            ("LDAP", singles(&[389])),
            ("SMTP", singles(&[25])),
            ("POP", singles(&[109, 110])),
            ("NTP", singles(&[123])),
            ("IMAP", singles(&[143])),
            ("HTTP", singles(&[80, 8000])),
            ("SSL", singles(&[443])),
            ("px", singles(&[8080])),
            ("Serv", singles(&[7])),
            ("Time", singles(&[37])),
            ("TFTP", singles(&[69])),
            ("Finger", singles(&[79])),
            ("lpd", singles(&[515])),
            ("Syslog", singles(&[514])),
            ("SNMP", singles(&[161, 162])),
            ("bgp", singles(&[179])),
            ("Socks", singles(&[1080])),
        ];
        for (name, ranges) in port_groups {
            entries.push(FeatureEntry {
                name: name.to_string(),
                matcher: Matcher::Ports(ranges),
            });
        }
        FeatureSpec { entries }
    }
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec::default_spec()
    }
}

/// Project one packet onto the schema. Bit `i` fires when entry `i`'s flag
/// is present or its port group contains the destination port.
pub fn featurize(p: &PacketRecord, spec: &FeatureSpec) -> FeatureVector {
    let mut bits = BitString::zeros(spec.lv());
    for (i, entry) in spec.entries.iter().enumerate() {
        let hit = match &entry.matcher {
            Matcher::Flag(f) => p.ip_flags.contains(*f) || p.tcp_flags.contains(*f),
            Matcher::Ports(ranges) => ranges.iter().any(|r| r.contains(p.dst_port)),
        };
        if hit {
            bits.set(i, true);
        }
    }
    FeatureVector { bits }
}

fn parse_port(s: &str, line: usize) -> Result<u16, FeatureError> {
    s.parse().map_err(|_| FeatureError::BadPort {
        line,
        value: s.to_string(),
    })
}

fn parse_flags(s: &str, line: usize) -> Result<(FlagSet, FlagSet), FeatureError> {
    let mut ip = FlagSet::empty();
    let mut tcp = FlagSet::empty();
    if s == "-" {
        return Ok((ip, tcp));
    }
    for part in s.split(',') {
        let flag = Flag::from_name(part).ok_or_else(|| FeatureError::UnknownFlag {
            line,
            flag: part.to_string(),
        })?;
        if flag.is_ip() {
            ip.insert(flag);
        } else {
            tcp.insert(flag);
        }
    }
    Ok((ip, tcp))
}

fn format_flags(p: &PacketRecord) -> String {
    let names: Vec<&str> = p.flags_combined().map(Flag::name).collect();
    if names.is_empty() {
        "-".to_string()
    } else {
        names.join(",")
    }
}

fn format_label(label: &Label) -> String {
    match label {
        Label::Normal => "normal".to_string(),
        Label::Attack(name) => format!("attack:{name}"),
    }
}

/// Load a trace file: one packet per line,
/// `proto <TAB> src_port <TAB> dst_port <TAB> flags <TAB> label`,
/// flags comma-separated or `-`, `#` lines and blank lines skipped.
/// Sequence numbers are assigned in file order.
pub fn load_trace(path: &Path) -> Result<Vec<PacketRecord>, FeatureError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 5 {
            return Err(FeatureError::FieldCount {
                line,
                expected: 5,
                got: fields.len(),
            });
        }
        let transport = match fields[0] {
            "TCP" => Transport::Tcp,
            "UDP" => Transport::Udp,
            other => {
                return Err(FeatureError::BadTransport {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let src_port = parse_port(fields[1], line)?;
        let dst_port = parse_port(fields[2], line)?;
        let (ip_flags, tcp_flags) = parse_flags(fields[3], line)?;
        if transport == Transport::Udp && !tcp_flags.is_empty() {
            return Err(FeatureError::TcpFlagsOnUdp {
                line,
                flags: fields[3].to_string(),
            });
        }
        let label = if fields[4] == "normal" {
            Label::Normal
        } else if let Some(name) = fields[4].strip_prefix("attack:") {
            if name.is_empty() {
                return Err(FeatureError::BadLabel {
                    line,
                    value: fields[4].to_string(),
                });
            }
            Label::Attack(name.to_string())
        } else {
            return Err(FeatureError::BadLabel {
                line,
                value: fields[4].to_string(),
            });
        };
        records.push(PacketRecord {
            seq_no: records.len() as u64,
            transport,
            src_port,
            dst_port,
            ip_flags,
            tcp_flags,
            label,
        });
    }
    Ok(records)
}

/// Write a trace in the format `load_trace` reads. Round-trips exactly for
/// traces whose sequence numbers are their positions.
pub fn save_trace(records: &[PacketRecord], path: &Path) -> Result<(), FeatureError> {
    let mut out = String::new();
    for p in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            p.transport.name(),
            p.src_port,
            p.dst_port,
            format_flags(p),
            format_label(&p.label),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Load a feature schema: one entry per line,
/// `index <TAB> name <TAB> kind <TAB> value` where kind is `flag` or `port`
/// and a port value is a comma-separated list of ports or `lo-hi` ranges.
/// Indices must run 0..n in order.
pub fn load_spec(path: &Path) -> Result<FeatureSpec, FeatureError> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(FeatureError::FieldCount {
                line,
                expected: 4,
                got: fields.len(),
            });
        }
        let index: usize = fields[0].parse().map_err(|_| FeatureError::BadIndex {
            line,
            value: fields[0].to_string(),
        })?;
        if index != entries.len() {
            return Err(FeatureError::BadIndex {
                line,
                value: fields[0].to_string(),
            });
        }
        let matcher = match fields[2] {
            "flag" => {
                let flag = Flag::from_name(fields[3]).ok_or_else(|| FeatureError::UnknownFlag {
                    line,
                    flag: fields[3].to_string(),
                })?;
                Matcher::Flag(flag)
            }
            "port" => {
                let mut ranges = Vec::new();
                for part in fields[3].split(',') {
                    let range = if let Some((lo, hi)) = part.split_once('-') {
                        PortRange {
                            lo: parse_port(lo, line)?,
                            hi: parse_port(hi, line)?,
                        }
                    } else {
                        PortRange::single(parse_port(part, line)?)
                    };
                    if range.lo > range.hi {
                        return Err(FeatureError::BadPortList {
                            line,
                            value: fields[3].to_string(),
                        });
                    }
                    ranges.push(range);
                }
                Matcher::Ports(ranges)
            }
            other => {
                return Err(FeatureError::BadKind {
                    line,
                    value: other.to_string(),
                })
            }
        };
        entries.push(FeatureEntry {
            name: fields[1].to_string(),
            matcher,
        });
    }
    FeatureSpec::new(entries)
}

/// Write a schema in the format `load_spec` reads.
pub fn save_spec(spec: &FeatureSpec, path: &Path) -> Result<(), FeatureError> {
    let mut out = String::new();
    for (i, entry) in spec.entries.iter().enumerate() {
        let (kind, value) = match &entry.matcher {
            Matcher::Flag(f) => ("flag", f.name().to_string()),
            Matcher::Ports(ranges) => {
                let parts: Vec<String> = ranges
                    .iter()
                    .map(|r| {
                        if r.lo == r.hi {
                            r.lo.to_string()
                        } else {
                            format!("{}-{}", r.lo, r.hi)
                        }
                    })
                    .collect();
                ("port", parts.join(","))
            }
        };
        out.push_str(&format!("{i}\t{}\t{kind}\t{value}\n", entry.name));
    }
    fs::write(path, out)?;
    Ok(())
}
