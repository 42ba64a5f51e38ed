//! Message envelopes and the hierarchic router.
//!
//! The routing graph has three edge kinds: hex adjacency between physical
//! cores, a logical bus between the heads of neighboring clusters, and the
//! link from every head to global memory. Only heads touch memory; every
//! other core reaches it through a head (its own, or the nearest one when its
//! own is missing or denied).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::core_unit::QtId;
use crate::isa::{FragmentId, RegMask, Word};
use crate::topology::{ClusterAddress, Clustering, CoreId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MsgId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Endpoint {
    Core(ClusterAddress),
    GlobalMemory,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Core(a) => write!(f, "{a}"),
            Endpoint::GlobalMemory => f.write_str("mem"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    RegisterTransfer,
    QtCreateRequest,
    QtResult,
    MemoryRead,
    MemoryReadReply,
    MemoryWrite,
    MemoryWriteAck,
}

impl MessageKind {
    pub fn is_memory(self) -> bool {
        !matches!(self, MessageKind::RegisterTransfer | MessageKind::QtCreateRequest | MessageKind::QtResult)
    }

    /// Requests that are serviced by the memory bank on arrival.
    pub fn is_memory_request(self) -> bool {
        matches!(self, MessageKind::MemoryRead | MessageKind::MemoryWrite)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageKind::RegisterTransfer => "register_transfer",
            MessageKind::QtCreateRequest => "qt_create_request",
            MessageKind::QtResult => "qt_result",
            MessageKind::MemoryRead => "memory_read",
            MessageKind::MemoryReadReply => "memory_read_reply",
            MessageKind::MemoryWrite => "memory_write",
            MessageKind::MemoryWriteAck => "memory_write_ack",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Registers { qt: QtId, mask: RegMask, values: Vec<Word> },
    Create { qt: QtId, fragment: FragmentId, ret_mask: RegMask },
    Result { qt: QtId, mask: RegMask, values: Vec<Word> },
    Read { req: u64, addr: u64 },
    ReadReply { req: u64, addr: u64, value: Word },
    Write { req: u64, addr: u64, value: Word },
    WriteAck { req: u64, addr: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MessagingError {
    #[error("payload does not match message kind {0:?}")]
    PayloadMismatch(MessageKind),
    #[error("{0:?} needs distinct core endpoints")]
    BadEndpoints(MessageKind),
    #[error("no route from {src} to {dst}")]
    Unroutable { src: Endpoint, dst: Endpoint },
    #[error("memory reply {req} has no matching request at head {head}")]
    UnpairedReply { head: CoreId, req: u64 },
}

impl Message {
    pub fn new(kind: MessageKind, src: Endpoint, dst: Endpoint, payload: Payload) -> Result<Message, MessagingError> {
        use MessageKind as K;
        let payload_ok = matches!(
            (kind, &payload),
            (K::RegisterTransfer, Payload::Registers { .. })
                | (K::QtCreateRequest, Payload::Create { .. })
                | (K::QtResult, Payload::Result { .. })
                | (K::MemoryRead, Payload::Read { .. })
                | (K::MemoryReadReply, Payload::ReadReply { .. })
                | (K::MemoryWrite, Payload::Write { .. })
                | (K::MemoryWriteAck, Payload::WriteAck { .. })
        );
        if !payload_ok {
            return Err(MessagingError::PayloadMismatch(kind));
        }
        let endpoints_ok = match kind {
            K::RegisterTransfer | K::QtCreateRequest | K::QtResult => {
                matches!((src, dst), (Endpoint::Core(a), Endpoint::Core(b)) if a != b)
            }
            K::MemoryRead | K::MemoryWrite => {
                matches!((src, dst), (Endpoint::Core(_), Endpoint::GlobalMemory))
            }
            K::MemoryReadReply | K::MemoryWriteAck => {
                matches!((src, dst), (Endpoint::GlobalMemory, Endpoint::Core(_)))
            }
        };
        if !endpoints_ok {
            return Err(MessagingError::BadEndpoints(kind));
        }
        Ok(Message { kind, src, dst, payload })
    }

    /// Request id for memory traffic.
    pub fn request_id(&self) -> Option<u64> {
        match self.payload {
            Payload::Read { req, .. }
            | Payload::ReadReply { req, .. }
            | Payload::Write { req, .. }
            | Payload::WriteAck { req, .. } => Some(req),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Node {
    Core(CoreId),
    Memory,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    /// Every node visited, source first.
    pub nodes: Vec<Node>,
}

impl Route {
    pub fn hops(&self) -> u32 {
        self.nodes.len().saturating_sub(1) as u32
    }

    pub fn contains(&self, core: CoreId) -> bool {
        self.nodes.contains(&Node::Core(core))
    }

    pub fn cores(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Core(c) => Some(*c),
            Node::Memory => None,
        })
    }

    /// The last core before memory, for memory-bound routes.
    pub fn memory_head(&self) -> Option<CoreId> {
        match self.nodes.as_slice() {
            [.., Node::Core(h), Node::Memory] => Some(*h),
            [Node::Memory, Node::Core(h), ..] => Some(*h),
            _ => None,
        }
    }

    pub fn reversed(&self) -> Route {
        Route { nodes: self.nodes.iter().rev().copied().collect() }
    }
}

/// Shortest-path router over the hierarchic fabric. Denied cores are
/// never relays; they may only appear as a final destination, where the
/// delivery is refused.
#[derive(Clone, Debug)]
pub struct Router {
    clustering: Clustering,
    denied: BTreeSet<CoreId>,
    graph: Vec<Vec<CoreId>>,
    service_head: Vec<Option<CoreId>>,
}

impl Router {
    pub fn new(clustering: &Clustering, denied: &BTreeSet<CoreId>) -> Router {
        let grid = *clustering.grid();
        let n = grid.core_count();
        let mut graph: Vec<BTreeSet<CoreId>> = vec![BTreeSet::new(); n];
        for c in grid.cores() {
            if denied.contains(&c) {
                continue;
            }
            for &nb in clustering.neighbors(c) {
                if !denied.contains(&nb) {
                    graph[c.0 as usize].insert(nb);
                }
            }
        }
        // Head-to-head bus between clusters that share a boundary.
        let mut adjacent_clusters = BTreeSet::new();
        for c in grid.cores() {
            let a = clustering.cluster_of(c).id;
            for &nb in clustering.neighbors(c) {
                let b = clustering.cluster_of(nb).id;
                if a != b {
                    adjacent_clusters.insert((a.min(b), a.max(b)));
                }
            }
        }
        for (a, b) in adjacent_clusters {
            let ha = clustering.cluster(a).and_then(|c| c.head());
            let hb = clustering.cluster(b).and_then(|c| c.head());
            if let (Some(ha), Some(hb)) = (ha, hb) {
                if !denied.contains(&ha) && !denied.contains(&hb) {
                    graph[ha.0 as usize].insert(hb);
                    graph[hb.0 as usize].insert(ha);
                }
            }
        }
        let graph: Vec<Vec<CoreId>> = graph.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut router = Router { clustering: clustering.clone(), denied: denied.clone(), graph, service_head: vec![] };
        router.service_head = grid
            .cores()
            .map(|c| if denied.contains(&c) { None } else { router.nearest_head(c) })
            .collect();
        router
    }

    pub fn clustering(&self) -> &Clustering {
        &self.clustering
    }

    pub fn is_denied(&self, core: CoreId) -> bool {
        self.denied.contains(&core)
    }

    /// Neighbors in the routing graph (hex edges plus head bus edges).
    pub fn graph_neighbors(&self, core: CoreId) -> &[CoreId] {
        &self.graph[core.0 as usize]
    }

    /// The head that fronts memory for `core`.
    pub fn service_head(&self, core: CoreId) -> Option<CoreId> {
        self.service_head.get(core.0 as usize).copied().flatten()
    }

    fn nearest_head(&self, core: CoreId) -> Option<CoreId> {
        self.clustering.service_head(core, &self.denied)
    }

    /// BFS path from `src` to `dst` through allowed relays. `dst` itself may
    /// be denied (delivery is then refused at the destination).
    fn path(&self, src: CoreId, dst: CoreId, allowed: impl Fn(CoreId) -> bool) -> Option<Vec<CoreId>> {
        if src == dst {
            return Some(vec![src]);
        }
        let mut parent: BTreeMap<CoreId, CoreId> = BTreeMap::new();
        let mut seen = BTreeSet::from([src]);
        let mut q = VecDeque::from([src]);
        let neighbors_of = |u: CoreId| -> Vec<CoreId> {
            let mut v = self.graph[u.0 as usize].clone();
            // A denied destination has no outgoing edges in the graph; reach it from its hex neighbors.
            if self.denied.contains(&dst) && self.clustering.neighbors(u).contains(&dst) {
                v.push(dst);
                v.sort();
            }
            v
        };
        while let Some(u) = q.pop_front() {
            for v in neighbors_of(u) {
                if v != dst && !allowed(v) {
                    continue;
                }
                if seen.insert(v) {
                    parent.insert(v, u);
                    if v == dst {
                        let mut path = vec![dst];
                        let mut cur = dst;
                        while let Some(&p) = parent.get(&cur) {
                            path.push(p);
                            cur = p;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    q.push_back(v);
                }
            }
        }
        None
    }

    fn core_path(&self, src: CoreId, dst: CoreId) -> Option<Vec<CoreId>> {
        let sc = self.clustering.cluster_of(src).id;
        if sc == self.clustering.cluster_of(dst).id {
            // Keep intra-cluster traffic inside the flower when possible.
            let local = self.path(src, dst, |c| self.clustering.cluster_of(c).id == sc);
            if local.is_some() {
                return local;
            }
        }
        self.path(src, dst, |_| true)
    }

    fn resolve(&self, e: Endpoint) -> Result<Option<CoreId>, ()> {
        match e {
            Endpoint::GlobalMemory => Ok(None),
            Endpoint::Core(a) => self.clustering.core_of(a).map(Some).ok_or(()),
        }
    }

    /// Route between two physical cores.
    pub fn route_cores(&self, src: CoreId, dst: CoreId) -> Option<Route> {
        if self.denied.contains(&src) {
            return None;
        }
        self.core_path(src, dst).map(|p| Route { nodes: p.into_iter().map(Node::Core).collect() })
    }

    /// Route from a core to global memory through its service head.
    pub fn route_to_memory(&self, src: CoreId) -> Option<Route> {
        let head = self.service_head(src)?;
        let mut nodes: Vec<Node> = self.path(src, head, |_| true)?.into_iter().map(Node::Core).collect();
        nodes.push(Node::Memory);
        Some(Route { nodes })
    }

    pub fn route(&self, msg: &Message) -> Result<Route, MessagingError> {
        let unroutable = || MessagingError::Unroutable { src: msg.src, dst: msg.dst };
        let src = self.resolve(msg.src).map_err(|_| unroutable())?;
        let dst = self.resolve(msg.dst).map_err(|_| unroutable())?;
        match (src, dst) {
            (Some(s), Some(d)) => self.route_cores(s, d).ok_or_else(unroutable),
            (Some(s), None) => self.route_to_memory(s).ok_or_else(unroutable),
            (None, Some(d)) => self.route_to_memory(d).map(|r| r.reversed()).ok_or_else(unroutable),
            (None, None) => Err(unroutable()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryEvent {
    pub send_time: u64,
    pub arrival: u64,
    pub hops: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DeliveryError {
    /// Refused at the destination; the sender sees the NACK at `nack_at`.
    #[error("destination is denied; NACK reaches the sender at {nack_at}")]
    DestinationDenied { refused_at: u64, nack_at: u64 },
}

/// Timing of one delivery over `route`: `hop_cost` per hop, plus the memory
/// service time when a request ends at the memory bank.
pub fn deliver(
    msg: &Message,
    route: &Route,
    send_time: u64,
    hop_cost: u64,
    memory_latency: u64,
    dst_denied: bool,
) -> Result<DeliveryEvent, DeliveryError> {
    let hops = route.hops();
    let travel = hops as u64 * hop_cost;
    if dst_denied {
        return Err(DeliveryError::DestinationDenied { refused_at: send_time + travel, nack_at: send_time + 2 * travel });
    }
    let service = if msg.kind.is_memory_request() && route.nodes.last() == Some(&Node::Memory) {
        memory_latency
    } else {
        0
    };
    Ok(DeliveryEvent { send_time, arrival: send_time + travel + service, hops })
}

/// What a head does with memory traffic passing through it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EsmeAction {
    /// Send the request on to global memory.
    Forward(Message),
    /// Pass a reply on to the member that asked for it.
    Relay { requester: CoreId, msg: Message },
    /// A reply for the head itself.
    Deliver(Message),
}

/// Storage-management element of a cluster head: pairs member requests with
/// memory replies.
#[derive(Clone, Debug, Default)]
pub struct Esme {
    pending: BTreeMap<u64, CoreId>,
}

impl Esme {
    pub fn new() -> Esme {
        Esme::default()
    }

    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    /// `requester` is the originating core of a request, or the addressed
    /// core of a reply; `head` is the core this element lives on.
    pub fn intercept(&mut self, head: CoreId, requester: CoreId, msg: Message) -> Result<EsmeAction, MessagingError> {
        if msg.kind.is_memory_request() {
            if requester != head {
                self.pending.insert(msg.request_id().unwrap_or_default(), requester);
            }
            return Ok(EsmeAction::Forward(msg));
        }
        let req = msg.request_id().unwrap_or_default();
        if requester == head {
            return Ok(EsmeAction::Deliver(msg));
        }
        match self.pending.remove(&req) {
            Some(r) if r == requester => Ok(EsmeAction::Relay { requester, msg }),
            _ => Err(MessagingError::UnpairedReply { head, req }),
        }
    }
}
