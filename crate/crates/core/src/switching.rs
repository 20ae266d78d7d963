//! Bipolar relay matrix routing the stimulator output between one channel
//! electrode and the common base electrodes.
//!
//! Eight daisy-chained 8-bit shift registers give 64 outputs driving 32
//! photorelays. The matrix has 16 nodes: node 0 is the common base node
//! (base electrodes 1-4 are wired together), nodes 1-15 are channels ch1-ch15.
//! Every node has a high-rail relay and a low-rail relay. Each relay is driven
//! by two adjacent register outputs which must always agree.
//!
//! Layout v1 (`assets/relay_layout_v1.csv`):
//!
//! | node | rail | relay | register bits |
//! |------|------|-------|---------------|
//! | n    | high | 2n    | 4n, 4n+1      |
//! | n    | low  | 2n+1  | 4n+2, 4n+3    |
//!
//! so register k (0 nearest the microcontroller) holds nodes 2k and 2k+1.
//!
//! Stimulation phase puts the channel on the low rail (cathodic) and the base
//! on the high rail; the priming phase swaps them.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const LAYOUT_VERSION: u32 = 1;
pub const NODE_COUNT: u8 = 16;
pub const CHANNEL_COUNT: u8 = 15;
pub const BASE_ELECTRODE_COUNT: u8 = 4;
pub const FRAME_BITS: usize = 64;

/// Channels over the radial nerve, not used by the default studies.
pub const UNUSED_BY_DEFAULT: [u8; 4] = [1, 2, 3, 4];

pub const LAYOUT_TABLE_V1: &str = include_str!("../assets/relay_layout_v1.csv");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SwitchError {
    #[error("{0} is not a stimulation channel")]
    NotAChannel(ElectrodeId),
    #[error("electrode index {index} out of range for {kind}")]
    BadIndex { kind: &'static str, index: u8 },
    #[error("refusing to serialize invalid frame: {0}")]
    InvalidFrame(FrameFault),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum ElectrodeId {
    Base(u8),
    Channel(u8),
}

impl ElectrodeId {
    pub fn channel(index: u8) -> Result<Self, SwitchError> {
        if (1..=CHANNEL_COUNT).contains(&index) {
            Ok(ElectrodeId::Channel(index))
        } else {
            Err(SwitchError::BadIndex {
                kind: "channel",
                index,
            })
        }
    }

    pub fn base(index: u8) -> Result<Self, SwitchError> {
        if (1..=BASE_ELECTRODE_COUNT).contains(&index) {
            Ok(ElectrodeId::Base(index))
        } else {
            Err(SwitchError::BadIndex { kind: "base", index })
        }
    }

    pub fn node(self) -> Node {
        match self {
            ElectrodeId::Base(_) => Node::BASE,
            ElectrodeId::Channel(c) => Node(c),
        }
    }

    pub fn channel_index(self) -> Option<u8> {
        match self {
            ElectrodeId::Channel(c) => Some(c),
            ElectrodeId::Base(_) => None,
        }
    }

    pub fn is_unused_by_default(self) -> bool {
        matches!(self, ElectrodeId::Channel(c) if UNUSED_BY_DEFAULT.contains(&c))
    }

    pub fn all_channels() -> impl Iterator<Item = ElectrodeId> {
        (1..=CHANNEL_COUNT).map(ElectrodeId::Channel)
    }
}

impl fmt::Display for ElectrodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElectrodeId::Base(i) => write!(f, "base{i}"),
            ElectrodeId::Channel(i) => write!(f, "ch{i}"),
        }
    }
}

/// Matrix node: 0 is the common base node, 1..=15 are channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Node(pub u8);

impl Node {
    pub const BASE: Node = Node(0);

    pub fn is_base(self) -> bool {
        self.0 == 0
    }

    pub fn all() -> impl Iterator<Item = Node> {
        (0..NODE_COUNT).map(Node)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_base() {
            write!(f, "base")
        } else {
            write!(f, "ch{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rail {
    High,
    Low,
}

impl Rail {
    fn offset(self) -> u8 {
        match self {
            Rail::High => 0,
            Rail::Low => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Stim,
    Priming,
}

/// Relay index (0..32) for a node/rail pair.
pub fn relay_index(node: Node, rail: Rail) -> u8 {
    node.0 * 2 + rail.offset()
}

/// The two register outputs driving a relay.
pub fn relay_bits(relay: u8) -> (u8, u8) {
    (relay * 2, relay * 2 + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameFault {
    /// A node closed onto both rails.
    ShortCircuit(Node),
    /// More than one channel node connected.
    Ambiguous(Vec<Node>),
    /// The two outputs of one relay disagree.
    UnpairedBits { relay: u8 },
}

impl fmt::Display for FrameFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameFault::ShortCircuit(n) => write!(f, "short circuit on {n}"),
            FrameFault::Ambiguous(nodes) => {
                write!(f, "ambiguous routing across")?;
                for n in nodes {
                    write!(f, " {n}")?;
                }
                Ok(())
            }
            FrameFault::UnpairedBits { relay } => write!(f, "unequal drive bits for relay {relay}"),
        }
    }
}

/// Full state of the 64-output register chain. Bit i is output i % 8 of
/// register i / 8.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RelayFrame(u64);

impl fmt::Debug for RelayFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RelayFrame({:#018X})", self.0)
    }
}

impl fmt::Display for RelayFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016X}", self.0)
    }
}

impl RelayFrame {
    pub const fn from_bits(bits: u64) -> Self {
        RelayFrame(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    /// Closes a relay (both of its drive bits).
    pub fn with_relay(self, node: Node, rail: Rail) -> Self {
        let (a, b) = relay_bits(relay_index(node, rail));
        RelayFrame(self.0 | (1 << a) | (1 << b))
    }

    pub fn relay_closed(self, node: Node, rail: Rail) -> bool {
        let (a, b) = relay_bits(relay_index(node, rail));
        self.0 & (1 << a) != 0 && self.0 & (1 << b) != 0
    }

    fn any_bit(self, node: Node, rail: Rail) -> bool {
        let (a, b) = relay_bits(relay_index(node, rail));
        self.0 & ((1 << a) | (1 << b)) != 0
    }

    /// Rail a node is connected to, if any. Nodes on both rails report
    /// `None`; use [`validate`] to detect them.
    pub fn node_rail(self, node: Node) -> Option<Rail> {
        match (self.any_bit(node, Rail::High), self.any_bit(node, Rail::Low)) {
            (true, false) => Some(Rail::High),
            (false, true) => Some(Rail::Low),
            _ => None,
        }
    }

    pub fn connected_nodes(self) -> Vec<Node> {
        Node::all()
            .filter(|&n| self.any_bit(n, Rail::High) || self.any_bit(n, Rail::Low))
            .collect()
    }

    pub fn closed_relay_count(self) -> u32 {
        self.0.count_ones() / 2
    }

    pub fn is_idle(self) -> bool {
        self.0 == 0
    }
}

/// All relays open.
pub fn idle() -> RelayFrame {
    RelayFrame(0)
}

pub fn route(channel: ElectrodeId, phase: Phase) -> Result<RelayFrame, SwitchError> {
    let ElectrodeId::Channel(idx) = channel else {
        return Err(SwitchError::NotAChannel(channel));
    };
    let channel = ElectrodeId::channel(idx)?;
    let (base_rail, channel_rail) = match phase {
        Phase::Stim => (Rail::High, Rail::Low),
        Phase::Priming => (Rail::Low, Rail::High),
    };
    Ok(idle()
        .with_relay(Node::BASE, base_rail)
        .with_relay(channel.node(), channel_rail))
}

pub fn validate(frame: RelayFrame) -> Result<(), FrameFault> {
    for relay in 0..(NODE_COUNT * 2) {
        let (a, b) = relay_bits(relay);
        if (frame.0 >> a) & 1 != (frame.0 >> b) & 1 {
            return Err(FrameFault::UnpairedBits { relay });
        }
    }
    for node in Node::all() {
        if frame.relay_closed(node, Rail::High) && frame.relay_closed(node, Rail::Low) {
            return Err(FrameFault::ShortCircuit(node));
        }
    }
    let channels: Vec<Node> = frame
        .connected_nodes()
        .into_iter()
        .filter(|n| !n.is_base())
        .collect();
    if channels.len() > 1 {
        return Err(FrameFault::Ambiguous(channels));
    }
    Ok(())
}

/// Serial order for the chain. Element 0 is shifted first and therefore ends
/// up in the last register's top output (bit 63); element 63 is bit 0.
pub fn to_bitstream(frame: RelayFrame) -> Result<[bool; FRAME_BITS], SwitchError> {
    validate(frame).map_err(SwitchError::InvalidFrame)?;
    let mut out = [false; FRAME_BITS];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = (frame.0 >> (FRAME_BITS - 1 - i)) & 1 == 1;
    }
    Ok(out)
}

pub fn from_bitstream(stream: &[bool; FRAME_BITS]) -> RelayFrame {
    let bits = stream
        .iter()
        .fold(0u64, |acc, &b| (acc << 1) | u64::from(b));
    RelayFrame(bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RoutingState {
    Idle,
    Active { channel: ElectrodeId, phase: Phase },
}

impl RoutingState {
    pub fn frame(self) -> Result<RelayFrame, SwitchError> {
        match self {
            RoutingState::Idle => Ok(idle()),
            RoutingState::Active { channel, phase } => route(channel, phase),
        }
    }
}

/// Frames to apply, in order, to move between routing states. Any change of
/// connection opens every relay first.
pub fn transition(from: RoutingState, to: RoutingState) -> Result<Vec<RelayFrame>, SwitchError> {
    if from == to {
        return Ok(Vec::new());
    }
    match (from, to) {
        (_, RoutingState::Idle) => Ok(vec![idle()]),
        (RoutingState::Idle, target) => Ok(vec![target.frame()?]),
        (RoutingState::Active { .. }, target) => Ok(vec![idle(), target.frame()?]),
    }
}

/// True when no node moves between rails, or between open and a rail, without
/// passing through an all-open frame.
pub fn is_break_before_make(frames: &[RelayFrame]) -> bool {
    frames.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        if a.is_idle() || b.is_idle() {
            return true;
        }
        Node::all().all(|n| a.node_rail(n) == b.node_rail(n))
    })
}

/// One hex line per frame, matching the golden-file format.
pub fn hex_dump(frames: &[RelayFrame]) -> String {
    frames.iter().map(|f| format!("{f}\n")).collect()
}

pub fn parse_hex_frame(line: &str) -> Option<RelayFrame> {
    u64::from_str_radix(line.trim(), 16).ok().map(RelayFrame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ch(i: u8) -> ElectrodeId {
        ElectrodeId::channel(i).unwrap()
    }

    #[test]
    fn route_ch5_stim_matches_layout() {
        let f = route(ch(5), Phase::Stim).unwrap();
        // base high: bits 0,1; ch5 low: relay 11 -> bits 22,23
        assert_eq!(f.bits(), 0x0000_0000_00C0_0003);
        assert_eq!(f.bits().count_ones(), 4);
        assert_eq!(f.closed_relay_count(), 2);
    }

    #[test]
    fn priming_is_rail_swapped_image() {
        for c in ElectrodeId::all_channels() {
            let s = route(c, Phase::Stim).unwrap();
            let p = route(c, Phase::Priming).unwrap();
            for n in Node::all() {
                let swapped = s.node_rail(n).map(|r| match r {
                    Rail::High => Rail::Low,
                    Rail::Low => Rail::High,
                });
                assert_eq!(p.node_rail(n), swapped);
            }
        }
        assert_eq!(route(ch(5), Phase::Priming).unwrap().bits(), 0x0030_000C);
    }

    #[test]
    fn base_electrode_not_routable() {
        let b = ElectrodeId::base(2).unwrap();
        assert_eq!(route(b, Phase::Stim), Err(SwitchError::NotAChannel(b)));
        assert!(ElectrodeId::channel(16).is_err());
        assert!(ElectrodeId::channel(0).is_err());
        assert!(ElectrodeId::base(5).is_err());
    }

    #[test]
    fn idle_frame() {
        assert_eq!(idle().bits(), 0);
        assert_eq!(validate(idle()), Ok(()));
        for c in ElectrodeId::all_channels() {
            assert_ne!(route(c, Phase::Stim).unwrap(), idle());
        }
    }

    #[test]
    fn validate_detects_faults() {
        let n5 = Node(5);
        let short = idle().with_relay(n5, Rail::High).with_relay(n5, Rail::Low);
        assert_eq!(validate(short), Err(FrameFault::ShortCircuit(n5)));
        assert_eq!(validate(route(ch(8), Phase::Stim).unwrap()), Ok(()));
        let both = route(ch(5), Phase::Stim)
            .unwrap()
            .with_relay(Node(8), Rail::Low);
        assert_eq!(validate(both), Err(FrameFault::Ambiguous(vec![Node(5), Node(8)])));
        let unpaired = RelayFrame::from_bits(1 << 22);
        assert_eq!(validate(unpaired), Err(FrameFault::UnpairedBits { relay: 11 }));
    }

    #[test]
    fn bitstream_order() {
        assert_eq!(to_bitstream(idle()).unwrap(), [false; 64]);
        let s = to_bitstream(route(ch(5), Phase::Stim).unwrap()).unwrap();
        let set: Vec<usize> = (0..64).filter(|&i| s[i]).collect();
        assert_eq!(set, vec![40, 41, 62, 63]);
        let bad = RelayFrame::from_bits(0b11 | 0b1100);
        assert!(matches!(to_bitstream(bad), Err(SwitchError::InvalidFrame(_))));
    }

    #[test]
    fn transitions() {
        let s5 = RoutingState::Active { channel: ch(5), phase: Phase::Stim };
        let p5 = RoutingState::Active { channel: ch(5), phase: Phase::Priming };
        let s8 = RoutingState::Active { channel: ch(8), phase: Phase::Stim };
        assert_eq!(
            transition(s5, p5).unwrap(),
            vec![idle(), route(ch(5), Phase::Priming).unwrap()]
        );
        assert_eq!(
            transition(RoutingState::Idle, s8).unwrap(),
            vec![route(ch(8), Phase::Stim).unwrap()]
        );
        assert_eq!(
            transition(s5, s8).unwrap(),
            vec![idle(), route(ch(8), Phase::Stim).unwrap()]
        );
        assert_eq!(transition(s5, RoutingState::Idle).unwrap(), vec![idle()]);
        assert!(transition(s5, s5).unwrap().is_empty());
    }

    #[test]
    fn make_before_break_is_flagged() {
        let a = route(ch(5), Phase::Stim).unwrap();
        let b = route(ch(5), Phase::Priming).unwrap();
        assert!(!is_break_before_make(&[a, b]));
        assert!(is_break_before_make(&[a, idle(), b]));
    }

    #[test]
    fn hex_round_trip() {
        let f = route(ch(12), Phase::Priming).unwrap();
        let dump = hex_dump(&[f]);
        assert_eq!(parse_hex_frame(dump.lines().next().unwrap()), Some(f));
    }
}
