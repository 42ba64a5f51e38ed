//! Physical grid, hexagonal interpretation, 7-cell clustering and the
//! hierarchical cluster address.
//!
//! Cores sit on a `W x H` rectangular grid. Column `x` is shifted by half a
//! cell against its neighbors, so the grid is read as a hexagonal lattice with
//! axial coordinates `q = x`, `r = y - floor(x / 2)`. Cells with
//! `(q + 3r) mod 7 == 0` are cluster heads; every closed hex neighborhood
//! contains exactly one of them, which tiles the lattice into 7-cell flowers.
//! Flowers cut by the grid border keep their address space; the missing cells
//! are phantom slots.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: u32,
    pub height: u32,
}

impl GridConfig {
    pub fn new(width: u32, height: u32) -> Result<GridConfig, TopologyError> {
        if width == 0 || height == 0 {
            return Err(TopologyError::EmptyGrid);
        }
        Ok(GridConfig { width, height })
    }

    pub fn core_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn contains(&self, core: CoreId) -> bool {
        (core.0 as usize) < self.core_count()
    }

    pub fn xy(&self, core: CoreId) -> (u32, u32) {
        (core.0 % self.width, core.0 / self.width)
    }

    pub fn core_at(&self, x: i64, y: i64) -> Option<CoreId> {
        (x >= 0 && y >= 0 && x < self.width as i64 && y < self.height as i64)
            .then(|| CoreId((y as u32) * self.width + x as u32))
    }

    pub fn hex(&self, core: CoreId) -> HexCoord {
        let (x, y) = self.xy(core);
        HexCoord::from_offset(x as i64, y as i64)
    }

    pub fn core_at_hex(&self, h: HexCoord) -> Option<CoreId> {
        let (x, y) = h.to_offset();
        self.core_at(x, y)
    }

    pub fn cores(&self) -> impl Iterator<Item = CoreId> {
        (0..self.core_count() as u32).map(CoreId)
    }

    fn check(&self, core: CoreId) -> Result<(), TopologyError> {
        if self.contains(core) {
            Ok(())
        } else {
            Err(TopologyError::InvalidCoreId(core))
        }
    }
}

impl fmt::Display for GridConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for GridConfig {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| TopologyError::BadGrid(s.to_owned()))?;
        let w = w.trim().parse().map_err(|_| TopologyError::BadGrid(s.to_owned()))?;
        let h = h.trim().parse().map_err(|_| TopologyError::BadGrid(s.to_owned()))?;
        GridConfig::new(w, h)
    }
}

/// Physical core index, row-major over the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoreId(pub u32);

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HexCoord {
    pub q: i64,
    pub r: i64,
}

impl HexCoord {
    pub fn from_offset(x: i64, y: i64) -> HexCoord {
        HexCoord { q: x, r: y - x.div_euclid(2) }
    }

    pub fn to_offset(self) -> (i64, i64) {
        (self.q, self.r + self.q.div_euclid(2))
    }

    pub fn step(self, d: Direction) -> HexCoord {
        let (dq, dr) = d.offset();
        HexCoord { q: self.q + dq, r: self.r + dr }
    }

    pub fn distance(self, other: HexCoord) -> u32 {
        let dq = self.q - other.q;
        let dr = self.r - other.r;
        ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
    }

    pub fn is_head_cell(self) -> bool {
        (self.q + 3 * self.r).rem_euclid(7) == 0
    }

    /// The head cell of the flower containing this cell.
    pub fn head_cell(self) -> HexCoord {
        if self.is_head_cell() {
            return self;
        }
        Direction::ALL
            .iter()
            .map(|&d| self.step(d))
            .find(|h| h.is_head_cell())
            .expect("every closed neighborhood holds one head cell")
    }
}

/// Member slot order around a head: slot `i + 1` is `Direction::ALL[i]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    E,
    NE,
    NW,
    W,
    SW,
    SE,
}

impl Direction {
    pub const ALL: [Direction; 6] =
        [Direction::E, Direction::NE, Direction::NW, Direction::W, Direction::SW, Direction::SE];

    pub fn offset(self) -> (i64, i64) {
        match self {
            Direction::E => (1, 0),
            Direction::NE => (1, -1),
            Direction::NW => (0, -1),
            Direction::W => (-1, 0),
            Direction::SW => (-1, 1),
            Direction::SE => (0, 1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterAddress {
    pub cluster: u32,
    /// 0 is the head, 1..=6 the ordinary members in [`Direction::ALL`] order.
    pub slot: u8,
}

impl fmt::Display for ClusterAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.cluster, self.slot)
    }
}

pub const SLOT_BITS: u32 = 3;
pub const SLOTS_PER_CLUSTER: u8 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemberClass {
    Head,
    Ordinary,
    Corresponding,
    External,
    Phantom,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TopologyError {
    #[error("core {0} is not on the grid")]
    InvalidCoreId(CoreId),
    #[error("grid needs at least one row and one column")]
    EmptyGrid,
    #[error("cannot parse grid `{0}`, expected WxH")]
    BadGrid(String),
    #[error("address {0:#x} does not decode to a cluster slot")]
    MalformedAddress(u64),
    #[error("core {0} is not a cluster head")]
    NotAHead(CoreId),
    #[error("core {core} is outside the extended cluster of {head}")]
    NotInExtendedCluster { core: CoreId, head: CoreId },
    #[error("no proxy path from core {0} to a cluster head")]
    NoProxyAvailable(CoreId),
}

/// Hex neighbors of `core` that physically exist.
pub fn neighbors(core: CoreId, grid: &GridConfig) -> Result<Vec<CoreId>, TopologyError> {
    grid.check(core)?;
    let h = grid.hex(core);
    let mut out: Vec<CoreId> = Direction::ALL.iter().filter_map(|&d| grid.core_at_hex(h.step(d))).collect();
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: u32,
    pub head_cell: HexCoord,
    /// `slots[0]` is the head; `None` marks a phantom slot.
    pub slots: [Option<CoreId>; 7],
}

impl Cluster {
    pub fn head(&self) -> Option<CoreId> {
        self.slots[0]
    }

    pub fn members(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.slots.iter().flatten().copied()
    }
}

/// Result of tiling a grid into clusters. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Clustering {
    grid: GridConfig,
    clusters: Vec<Cluster>,
    addresses: Vec<ClusterAddress>,
    adjacency: Vec<Vec<CoreId>>,
}

/// Tiles `grid` into 7-cell clusters.
pub fn build_clusters(grid: GridConfig) -> Clustering {
    Clustering::new(grid)
}

impl Clustering {
    pub fn new(grid: GridConfig) -> Clustering {
        let mut heads: BTreeSet<HexCoord> = BTreeSet::new();
        for c in grid.cores() {
            heads.insert(grid.hex(c).head_cell());
        }
        // Physical heads first by core id, then border flowers whose head is off-grid.
        let mut order: Vec<HexCoord> = heads.into_iter().collect();
        order.sort_by_key(|h| {
            let (x, y) = h.to_offset();
            match grid.core_at(x, y) {
                Some(id) => (0u8, id.0 as i64, 0i64),
                None => (1u8, y, x),
            }
        });

        let mut addresses = vec![ClusterAddress { cluster: 0, slot: 0 }; grid.core_count()];
        let clusters: Vec<Cluster> = order
            .iter()
            .enumerate()
            .map(|(i, &head_cell)| {
                let mut slots = [None; 7];
                slots[0] = grid.core_at_hex(head_cell);
                for (k, &d) in Direction::ALL.iter().enumerate() {
                    slots[k + 1] = grid.core_at_hex(head_cell.step(d));
                }
                for (slot, core) in slots.iter().enumerate() {
                    if let Some(c) = core {
                        addresses[c.0 as usize] = ClusterAddress { cluster: i as u32, slot: slot as u8 };
                    }
                }
                Cluster { id: i as u32, head_cell, slots }
            })
            .collect();

        let adjacency = grid.cores().map(|c| neighbors(c, &grid).expect("core on grid")).collect();
        Clustering { grid, clusters, addresses, adjacency }
    }

    pub fn grid(&self) -> &GridConfig {
        &self.grid
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: u32) -> Option<&Cluster> {
        self.clusters.get(id as usize)
    }

    pub fn neighbors(&self, core: CoreId) -> &[CoreId] {
        &self.adjacency[core.0 as usize]
    }

    pub fn address_of(&self, core: CoreId) -> Result<ClusterAddress, TopologyError> {
        self.grid.check(core)?;
        Ok(self.addresses[core.0 as usize])
    }

    pub fn cluster_of(&self, core: CoreId) -> &Cluster {
        &self.clusters[self.addresses[core.0 as usize].cluster as usize]
    }

    /// Physical head of the core's own cluster, if the head cell exists.
    pub fn head_of(&self, core: CoreId) -> Option<CoreId> {
        self.cluster_of(core).head()
    }

    pub fn is_head(&self, core: CoreId) -> bool {
        self.grid.contains(core) && self.addresses[core.0 as usize].slot == 0
    }

    pub fn heads(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.clusters.iter().filter_map(Cluster::head)
    }

    /// Physical core behind an address; `None` for phantom slots.
    pub fn core_of(&self, addr: ClusterAddress) -> Option<CoreId> {
        self.clusters.get(addr.cluster as usize)?.slots.get(addr.slot as usize).copied().flatten()
    }

    pub fn hex_distance(&self, a: CoreId, b: CoreId) -> u32 {
        self.grid.hex(a).distance(self.grid.hex(b))
    }

    /// Number of bits used for the cluster field.
    pub fn cluster_bits(&self) -> u32 {
        let n = self.clusters.len().max(1) as u64;
        64 - (n - 1).leading_zeros()
    }

    pub fn encode_address(&self, a: ClusterAddress) -> Result<u64, TopologyError> {
        if a.slot >= SLOTS_PER_CLUSTER || a.cluster as usize >= self.clusters.len() {
            return Err(TopologyError::MalformedAddress(((a.cluster as u64) << SLOT_BITS) | a.slot as u64));
        }
        Ok(((a.cluster as u64) << SLOT_BITS) | a.slot as u64)
    }

    pub fn decode_address(&self, n: u64) -> Result<ClusterAddress, TopologyError> {
        let slot = (n & ((1 << SLOT_BITS) - 1)) as u8;
        let cluster = n >> SLOT_BITS;
        if slot >= SLOTS_PER_CLUSTER || cluster >= self.clusters.len() as u64 {
            return Err(TopologyError::MalformedAddress(n));
        }
        Ok(ClusterAddress { cluster: cluster as u32, slot })
    }

    /// Class of `core` relative to the cluster headed by `head`.
    pub fn classify(&self, core: CoreId, head: CoreId) -> Result<MemberClass, TopologyError> {
        self.grid.check(core)?;
        self.grid.check(head)?;
        if !self.is_head(head) {
            return Err(TopologyError::NotAHead(head));
        }
        match self.hex_distance(core, head) {
            0 => Ok(MemberClass::Head),
            1 => Ok(MemberClass::Ordinary),
            2 if self.head_of(core).is_some() => Ok(MemberClass::Corresponding),
            2 => Ok(MemberClass::External),
            _ => Err(TopologyError::NotInExtendedCluster { core, head }),
        }
    }

    /// Physical members of the extended (radius 2) cluster around `head`,
    /// with their class. Phantom positions are not listed.
    pub fn extended_cluster(&self, head: CoreId) -> Result<Vec<(CoreId, MemberClass)>, TopologyError> {
        self.grid.check(head)?;
        if !self.is_head(head) {
            return Err(TopologyError::NotAHead(head));
        }
        let center = self.grid.hex(head);
        let mut out = Vec::new();
        for dq in -2i64..=2 {
            for dr in -2i64..=2 {
                let h = HexCoord { q: center.q + dq, r: center.r + dr };
                if h.distance(center) > 2 {
                    continue;
                }
                if let Some(c) = self.grid.core_at_hex(h) {
                    out.push((c, self.classify(c, head)?));
                }
            }
        }
        out.sort_by_key(|&(c, _)| c);
        Ok(out)
    }

    /// Number of extended-cluster positions around `head` that are off-grid.
    pub fn extended_phantoms(&self, head: CoreId) -> Result<usize, TopologyError> {
        Ok(19 - self.extended_cluster(head)?.len())
    }

    /// Neighbor of `core` that carries its traffic toward its cluster head.
    pub fn proxy_for(&self, core: CoreId) -> Result<CoreId, TopologyError> {
        self.proxy_avoiding(core, &BTreeSet::new())
    }

    /// Like [`Clustering::proxy_for`], skipping `denied` cores both as relays
    /// and as heads. A core whose own head is missing or denied is served by
    /// the nearest remaining head.
    pub fn proxy_avoiding(&self, core: CoreId, denied: &BTreeSet<CoreId>) -> Result<CoreId, TopologyError> {
        self.grid.check(core)?;
        let target = self.service_head(core, denied).ok_or(TopologyError::NoProxyAvailable(core))?;
        if target == core {
            return Err(TopologyError::NoProxyAvailable(core));
        }
        let dist = self.bfs(target, denied);
        self.neighbors(core)
            .iter()
            .copied()
            .filter(|n| !denied.contains(n))
            .filter(|n| dist.get(n).is_some_and(|&d| Some(d + 1) == dist.get(&core).copied()))
            .min()
            .ok_or(TopologyError::NoProxyAvailable(core))
    }

    /// The head that handles `core`'s memory traffic: its own head when present
    /// and allowed, otherwise the closest allowed head over hex adjacency
    /// (ties to the lowest id).
    pub fn service_head(&self, core: CoreId, denied: &BTreeSet<CoreId>) -> Option<CoreId> {
        if let Some(h) = self.head_of(core) {
            if !denied.contains(&h) {
                return Some(h);
            }
        }
        let dist = self.bfs(core, denied);
        self.heads()
            .filter(|h| !denied.contains(h))
            .filter_map(|h| dist.get(&h).map(|&d| (d, h)))
            .min()
            .map(|(_, h)| h)
    }

    /// Hop distances over hex adjacency from `from`, never entering `denied`.
    fn bfs(&self, from: CoreId, denied: &BTreeSet<CoreId>) -> BTreeMap<CoreId, u32> {
        let mut dist = BTreeMap::new();
        dist.insert(from, 0);
        let mut q = VecDeque::from([from]);
        while let Some(u) = q.pop_front() {
            let du = dist[&u];
            for &v in self.neighbors(u) {
                if !denied.contains(&v) && !dist.contains_key(&v) {
                    dist.insert(v, du + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }
}
