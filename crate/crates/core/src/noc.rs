//! 2D-mesh topology, dimension-ordered routing and closed-form transfer
//! latencies for unicasts and row/column collectives.
//!
//! The closed forms are uncontended service times. Link contention is layered
//! on top by the simulator, which holds every link a transfer uses for its
//! whole duration.

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, VectorOp};
use crate::error::{Error, Result};
use crate::Cycles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: u32,
    pub y: u32,
}

impl TileCoord {
    pub const fn new(x: u32, y: u32) -> Self {
        TileCoord { x, y }
    }

    pub fn in_mesh(self, cfg: &ArchConfig) -> bool {
        self.x < cfg.mesh_x && self.y < cfg.mesh_y
    }

    pub fn check(self, cfg: &ArchConfig) -> Result<Self> {
        if self.in_mesh(cfg) {
            Ok(self)
        } else {
            Err(Error::OutOfMesh { x: self.x, y: self.y, mesh_x: cfg.mesh_x, mesh_y: cfg.mesh_y })
        }
    }

    /// Row-major tile index.
    pub fn index(self, cfg: &ArchConfig) -> usize {
        self.y as usize * cfg.mesh_x as usize + self.x as usize
    }
}

impl std::fmt::Display for TileCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Output port of a router. `North` increases y, `East` increases x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    East,
    West,
    North,
    South,
}

impl Direction {
    fn index(self) -> usize {
        self as usize
    }
}

/// A directed link leaving `from` towards its neighbour in `dir`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Link {
    pub from: TileCoord,
    pub dir: Direction,
}

impl Link {
    pub fn to(self) -> TileCoord {
        let TileCoord { x, y } = self.from;
        match self.dir {
            Direction::East => TileCoord::new(x + 1, y),
            Direction::West => TileCoord::new(x - 1, y),
            Direction::North => TileCoord::new(x, y + 1),
            Direction::South => TileCoord::new(x, y - 1),
        }
    }

    /// Dense index in `0..4 * tiles`.
    pub fn index(self, cfg: &ArchConfig) -> usize {
        self.from.index(cfg) * 4 + self.dir.index()
    }
}

/// X-first, then Y.
pub fn route_xy(src: TileCoord, dst: TileCoord, cfg: &ArchConfig) -> Result<Vec<Link>> {
    src.check(cfg)?;
    dst.check(cfg)?;
    let mut path = Vec::with_capacity((src.x.abs_diff(dst.x) + src.y.abs_diff(dst.y)) as usize);
    let mut cur = src;
    while cur.x != dst.x {
        let dir = if dst.x > cur.x { Direction::East } else { Direction::West };
        let link = Link { from: cur, dir };
        cur = link.to();
        path.push(link);
    }
    while cur.y != dst.y {
        let dir = if dst.y > cur.y { Direction::North } else { Direction::South };
        let link = Link { from: cur, dir };
        cur = link.to();
        path.push(link);
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveKind {
    Multicast,
    ReduceSum,
    ReduceMax,
}

impl CollectiveKind {
    pub fn is_reduce(self) -> bool {
        !matches!(self, CollectiveKind::Multicast)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectiveMode {
    /// Chain of point-to-point unicasts issued by software.
    Software,
    /// Path-based in-network forwarding (and combining, for reductions).
    Hardware,
}

/// A contiguous row or column collective. The participants are the root and
/// the `span` tiles following it in the positive direction of `axis`;
/// multicasts flow away from the root, reductions towards it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollectiveSpec {
    pub kind: CollectiveKind,
    pub axis: Axis,
    pub root: TileCoord,
    /// N: number of non-root participants.
    pub span: u32,
    /// α: bytes delivered to (or contributed by) each participant.
    pub payload_bytes: u64,
    /// Element width used to size software combine steps.
    pub elem_bytes: u64,
}

impl CollectiveSpec {
    pub fn multicast(axis: Axis, root: TileCoord, span: u32, payload_bytes: u64) -> Self {
        CollectiveSpec { kind: CollectiveKind::Multicast, axis, root, span, payload_bytes, elem_bytes: 2 }
    }

    pub fn reduce(kind: CollectiveKind, axis: Axis, root: TileCoord, span: u32, payload_bytes: u64) -> Self {
        CollectiveSpec { kind, axis, root, span, payload_bytes, elem_bytes: 2 }
    }

    pub fn with_elem_bytes(mut self, elem_bytes: u64) -> Self {
        self.elem_bytes = elem_bytes;
        self
    }

    pub fn check(&self, cfg: &ArchConfig) -> Result<()> {
        self.root.check(cfg)?;
        let (start, extent, axis) = match self.axis {
            Axis::Row => (self.root.x, cfg.mesh_x, "row"),
            Axis::Column => (self.root.y, cfg.mesh_y, "column"),
        };
        if self.span == 0 {
            return Err(Error::CollectiveSpan("span must be at least 1".into()));
        }
        if u64::from(start) + u64::from(self.span) >= u64::from(extent) {
            return Err(Error::CollectiveSpan(format!(
                "{axis} collective rooted at {} with span {} exceeds mesh extent {extent}",
                self.root, self.span
            )));
        }
        Ok(())
    }

    /// Root first, then the remaining participants in axis order.
    pub fn participants(&self) -> impl Iterator<Item = TileCoord> + '_ {
        (0..=self.span).map(move |i| match self.axis {
            Axis::Row => TileCoord::new(self.root.x + i, self.root.y),
            Axis::Column => TileCoord::new(self.root.x, self.root.y + i),
        })
    }

    /// Directed links used by the transfer.
    pub fn links(&self) -> impl Iterator<Item = Link> + '_ {
        let reduce = self.kind.is_reduce();
        (0..self.span).map(move |i| {
            let (from, dir) = match (self.axis, reduce) {
                (Axis::Row, false) => (TileCoord::new(self.root.x + i, self.root.y), Direction::East),
                (Axis::Row, true) => (TileCoord::new(self.root.x + i + 1, self.root.y), Direction::West),
                (Axis::Column, false) => (TileCoord::new(self.root.x, self.root.y + i), Direction::North),
                (Axis::Column, true) => (TileCoord::new(self.root.x, self.root.y + i + 1), Direction::South),
            };
            Link { from, dir }
        })
    }
}

/// ceil(α/β) + 2·L_d + h·L_r
pub fn unicast_latency(payload_bytes: u64, hops: u64, cfg: &ArchConfig) -> Cycles {
    payload_bytes.div_ceil(cfg.noc_link_bytes_per_cycle) + 2 * cfg.l1_to_router_cycles + hops * cfg.router_hop_cycles
}

/// Sequential unicasts to destinations 1..=N hops away:
/// N·(ceil(α/β) + 2·L_d) + L_r·N(N+1)/2. Software reductions add one
/// vector-engine combine of the payload per chain step.
pub fn sw_collective_latency(spec: &CollectiveSpec, cfg: &ArchConfig) -> Result<Cycles> {
    spec.check(cfg)?;
    let n = u64::from(spec.span);
    let chain: Cycles = (1..=n).map(|hops| unicast_latency(spec.payload_bytes, hops, cfg)).sum();
    let combine = if spec.kind.is_reduce() {
        n * cfg.vector_cycles(VectorOp::Elementwise, spec.payload_bytes / spec.elem_bytes.max(1))
    } else {
        0
    };
    Ok(chain + combine)
}

/// Path-based forwarding: ceil(α/β) + 2·L_d + N·L_r. Reductions combine in
/// flight with an optional extra per-hop latency.
pub fn hw_collective_latency(spec: &CollectiveSpec, cfg: &ArchConfig) -> Result<Cycles> {
    if !cfg.hw_collectives {
        return Err(Error::HwCollectivesUnavailable);
    }
    spec.check(cfg)?;
    let n = u64::from(spec.span);
    let per_hop = cfg.router_hop_cycles + if spec.kind.is_reduce() { cfg.hw_reduce_hop_cycles } else { 0 };
    Ok(spec.payload_bytes.div_ceil(cfg.noc_link_bytes_per_cycle) + 2 * cfg.l1_to_router_cycles + n * per_hop)
}

pub fn collective_latency(spec: &CollectiveSpec, mode: CollectiveMode, cfg: &ArchConfig) -> Result<Cycles> {
    match mode {
        CollectiveMode::Software => sw_collective_latency(spec, cfg),
        CollectiveMode::Hardware => hw_collective_latency(spec, cfg),
    }
}
