//! Deterministic discrete-event execution of per-tile task graphs.
//!
//! Every task holds a set of exclusive resources for its service time:
//!
//! | task        | resources                              | service time                     |
//! |-------------|----------------------------------------|----------------------------------|
//! | gemm        | tile matrix engine                     | [`ArchConfig::gemm_cycles`]      |
//! | vector op   | tile vector engine                     | [`ArchConfig::vector_cycles`]    |
//! | hbm load/st | tile DMA (issue to completion)         | channel queue + transfer + latency |
//! | unicast     | source DMA and every link on the XY path | [`noc::unicast_latency`]       |
//! | collective  | every link of the row/column span      | [`noc::collective_latency`]      |
//! | sync        | none                                   | `sync_overhead_cycles`           |
//!
//! HBM channels are FIFO servers: a request occupies its channel for
//! `ceil(bytes / bw)` cycles starting when both the request has been issued
//! and the channel has drained earlier requests; the access latency is
//! pipelined and only delays completion.
//!
//! Ready tasks are dispatched in `(ready time, task id)` order. A task that
//! finds one of its resources busy parks on that resource and is retried when
//! it is released, so a resource never idles while a task that only waits
//! for it exists.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, ChannelId, VectorOp};
use crate::error::{Error, Result};
use crate::noc::{self, CollectiveKind, CollectiveMode, CollectiveSpec, TileCoord};
use crate::Cycles;

pub type TaskId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Hbm,
    InterTile,
    Matmul,
    Softmax,
    Sync,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::Hbm, Category::InterTile, Category::Matmul, Category::Softmax, Category::Sync];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Hbm => "hbm",
            Category::InterTile => "inter_tile",
            Category::Matmul => "matmul",
            Category::Softmax => "softmax",
            Category::Sync => "sync",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    HbmLoad { bytes: u64, channel: ChannelId },
    HbmStore { bytes: u64, channel: ChannelId },
    Unicast { dst: TileCoord, bytes: u64 },
    Collective { spec: CollectiveSpec, mode: CollectiveMode },
    Gemm { m: u64, k: u64, n: u64 },
    Vector { op: VectorOp, elems: u64 },
    Sync,
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::HbmLoad { .. } => "hbm_load",
            TaskKind::HbmStore { .. } => "hbm_store",
            TaskKind::Unicast { .. } => "noc_unicast",
            TaskKind::Collective { spec, .. } => match spec.kind {
                CollectiveKind::Multicast => "noc_multicast",
                CollectiveKind::ReduceSum | CollectiveKind::ReduceMax => "noc_reduce",
            },
            TaskKind::Gemm { .. } => "gemm",
            TaskKind::Vector { .. } => "vec_op",
            TaskKind::Sync => "sync",
        }
    }

    pub fn default_category(&self) -> Category {
        match self {
            TaskKind::HbmLoad { .. } | TaskKind::HbmStore { .. } => Category::Hbm,
            TaskKind::Unicast { .. } | TaskKind::Collective { .. } => Category::InterTile,
            TaskKind::Gemm { .. } => Category::Matmul,
            TaskKind::Vector { .. } => Category::Softmax,
            TaskKind::Sync => Category::Sync,
        }
    }

    pub fn bytes(&self) -> u64 {
        match *self {
            TaskKind::HbmLoad { bytes, .. } | TaskKind::HbmStore { bytes, .. } | TaskKind::Unicast { bytes, .. } => {
                bytes
            }
            TaskKind::Collective { spec, .. } => spec.payload_bytes,
            _ => 0,
        }
    }

    /// Ideal flops of a gemm (2·m·k·n), zero otherwise.
    pub fn flops(&self) -> u64 {
        match *self {
            TaskKind::Gemm { m, k, n } => 2 * m * k * n,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub tile: TileCoord,
    #[serde(flatten)]
    pub kind: TaskKind,
    pub deps: Vec<TaskId>,
    pub category: Category,
}

impl Task {
    /// Tiles whose timelines this task occupies.
    pub fn tiles(&self) -> Vec<TileCoord> {
        match &self.kind {
            TaskKind::Collective { spec, .. } => spec.participants().collect(),
            TaskKind::Unicast { dst, .. } if *dst != self.tile => vec![self.tile, *dst],
            _ => vec![self.tile],
        }
    }
}

/// Tasks are numbered by insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskGraph {
    tasks: Vec<Task>,
}

impl TaskGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tile: TileCoord, kind: TaskKind, deps: impl IntoIterator<Item = TaskId>) -> TaskId {
        let category = kind.default_category();
        self.add_with_category(tile, kind, deps, category)
    }

    pub fn add_with_category(
        &mut self,
        tile: TileCoord,
        kind: TaskKind,
        deps: impl IntoIterator<Item = TaskId>,
        category: Category,
    ) -> TaskId {
        let id = self.tasks.len() as TaskId;
        let mut deps: Vec<TaskId> = deps.into_iter().collect();
        deps.sort_unstable();
        deps.dedup();
        self.tasks.push(Task { id, tile, kind, deps, category });
        id
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Builds a graph from explicit tasks; ids must equal positions.
    pub fn from_tasks(tasks: Vec<Task>) -> Self {
        TaskGraph { tasks }
    }

    /// Sum of hbm load / store payloads.
    pub fn hbm_bytes(&self) -> (u64, u64) {
        self.tasks.iter().fold((0, 0), |(r, w), t| match t.kind {
            TaskKind::HbmLoad { bytes, .. } => (r + bytes, w),
            TaskKind::HbmStore { bytes, .. } => (r, w + bytes),
            _ => (r, w),
        })
    }

    /// Human-readable listing grouped by tile (row-major), then by id.
    pub fn dump(&self, mut out: impl Write) -> std::io::Result<()> {
        let mut order: Vec<&Task> = self.tasks.iter().collect();
        order.sort_by_key(|t| (t.tile.y, t.tile.x, t.id));
        let mut current = None;
        for t in order {
            if current != Some(t.tile) {
                writeln!(out, "tile {}", t.tile)?;
                current = Some(t.tile);
            }
            let deps = t.deps.iter().map(|d| format!("#{d}")).collect::<Vec<_>>().join(",");
            writeln!(out, "  #{:<8} {:<14} {:<10} {} deps=[{}]", t.id, t.kind.name(), t.category.as_str(), describe(&t.kind), deps)?;
        }
        Ok(())
    }
}

fn describe(kind: &TaskKind) -> String {
    match kind {
        TaskKind::HbmLoad { bytes, channel } | TaskKind::HbmStore { bytes, channel } => {
            format!("bytes={bytes} ch={}", channel.0)
        }
        TaskKind::Unicast { dst, bytes } => format!("dst={dst} bytes={bytes}"),
        TaskKind::Collective { spec, mode } => format!(
            "{:?}/{:?} {:?} root={} span={} bytes={}",
            spec.kind, mode, spec.axis, spec.root, spec.span, spec.payload_bytes
        ),
        TaskKind::Gemm { m, k, n } => format!("m={m} k={k} n={n}"),
        TaskKind::Vector { op, elems } => format!("{} elems={elems}", op.as_str()),
        TaskKind::Sync => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    Cycle(Vec<TaskId>),
    DanglingDep { task: TaskId, dep: TaskId },
    OutOfMesh { task: TaskId, tile: TileCoord },
    BadCollective { task: TaskId, reason: String },
    AbsentChannel { task: TaskId, channel: ChannelId },
    IdMismatch { position: usize, id: TaskId },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Cycle(ids) => {
                write!(f, "dependency cycle through ")?;
                let s: Vec<_> = ids.iter().map(|i| format!("#{i}")).collect();
                write!(f, "{}", s.join(" -> "))
            }
            Diagnostic::DanglingDep { task, dep } => write!(f, "task #{task} depends on missing task #{dep}"),
            Diagnostic::OutOfMesh { task, tile } => write!(f, "task #{task} uses out-of-mesh tile {tile}"),
            Diagnostic::BadCollective { task, reason } => write!(f, "task #{task}: {reason}"),
            Diagnostic::AbsentChannel { task, channel } => {
                write!(f, "task #{task} uses absent hbm channel {}", channel.0)
            }
            Diagnostic::IdMismatch { position, id } => write!(f, "task at position {position} has id #{id}"),
        }
    }
}

/// Structural checks: ids, dangling deps, cycles, mesh bounds, channels.
pub fn validate_graph(graph: &TaskGraph, cfg: &ArchConfig) -> std::result::Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();
    let n = graph.len();
    for (pos, t) in graph.tasks.iter().enumerate() {
        if t.id as usize != pos {
            diags.push(Diagnostic::IdMismatch { position: pos, id: t.id });
        }
        for &d in &t.deps {
            if d as usize >= n {
                diags.push(Diagnostic::DanglingDep { task: t.id, dep: d });
            }
        }
        if !t.tile.in_mesh(cfg) {
            diags.push(Diagnostic::OutOfMesh { task: t.id, tile: t.tile });
        }
        match &t.kind {
            TaskKind::Unicast { dst, .. } if !dst.in_mesh(cfg) => {
                diags.push(Diagnostic::OutOfMesh { task: t.id, tile: *dst });
            }
            TaskKind::Collective { spec, .. } => {
                if let Err(e) = spec.check(cfg) {
                    diags.push(Diagnostic::BadCollective { task: t.id, reason: e.to_string() });
                }
            }
            TaskKind::HbmLoad { channel, .. } | TaskKind::HbmStore { channel, .. }
                if channel.0 >= cfg.hbm_channels() =>
            {
                diags.push(Diagnostic::AbsentChannel { task: t.id, channel: *channel });
            }
            _ => {}
        }
    }
    if diags.iter().all(|d| !matches!(d, Diagnostic::DanglingDep { .. } | Diagnostic::IdMismatch { .. })) {
        if let Some(cycle) = find_cycle(graph) {
            diags.push(Diagnostic::Cycle(cycle));
        }
    }
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn find_cycle(graph: &TaskGraph) -> Option<Vec<TaskId>> {
    let n = graph.len();
    let (offsets, succ) = successors(graph);
    let mut indeg: Vec<u32> = graph.tasks.iter().map(|t| t.deps.len() as u32).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(i) = stack.pop() {
        seen += 1;
        for &s in &succ[offsets[i]..offsets[i + 1]] {
            indeg[s as usize] -= 1;
            if indeg[s as usize] == 0 {
                stack.push(s as usize);
            }
        }
    }
    if seen == n {
        return None;
    }
    // Every remaining task has a remaining dependency; walk them until a
    // task repeats.
    let start = (0..n).find(|&i| indeg[i] > 0)?;
    let mut pos = vec![usize::MAX; n];
    let mut walk = Vec::new();
    let mut cur = start;
    while pos[cur] == usize::MAX {
        pos[cur] = walk.len();
        walk.push(cur as TaskId);
        cur = graph.tasks[cur].deps.iter().copied().find(|&d| indeg[d as usize] > 0)? as usize;
    }
    let mut cycle = walk[pos[cur]..].to_vec();
    cycle.reverse();
    Some(cycle)
}

fn successors(graph: &TaskGraph) -> (Vec<usize>, Vec<TaskId>) {
    let n = graph.len();
    let mut offsets = vec![0usize; n + 1];
    for t in &graph.tasks {
        for &d in &t.deps {
            offsets[d as usize + 1] += 1;
        }
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut fill = offsets.clone();
    let mut succ = vec![0; offsets[n]];
    for t in &graph.tasks {
        for &d in &t.deps {
            succ[fill[d as usize]] = t.id;
            fill[d as usize] += 1;
        }
    }
    (offsets, succ)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCycles {
    pub hbm: Cycles,
    pub inter_tile: Cycles,
    pub matmul: Cycles,
    pub softmax: Cycles,
    pub sync: Cycles,
}

impl CategoryCycles {
    pub fn get(&self, c: Category) -> Cycles {
        match c {
            Category::Hbm => self.hbm,
            Category::InterTile => self.inter_tile,
            Category::Matmul => self.matmul,
            Category::Softmax => self.softmax,
            Category::Sync => self.sync,
        }
    }

    pub fn get_mut(&mut self, c: Category) -> &mut Cycles {
        match c {
            Category::Hbm => &mut self.hbm,
            Category::InterTile => &mut self.inter_tile,
            Category::Matmul => &mut self.matmul,
            Category::Softmax => &mut self.softmax,
            Category::Sync => &mut self.sync,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileReport {
    pub tile: TileCoord,
    /// Cycles during which at least one task of the category ran.
    pub busy: CategoryCycles,
    /// Busy cycles not overlapped by matrix-engine activity on the tile.
    /// For `matmul` this equals `busy`.
    pub exposed: CategoryCycles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub total_cycles: Cycles,
    pub task_count: u64,
    pub tiles: Vec<TileReport>,
    pub hbm_bytes_read: Vec<u64>,
    pub hbm_bytes_written: Vec<u64>,
    pub gemm_flops: u64,
    pub matmul_busy_cycles: Cycles,
    pub avg_hbm_bw_utilization: f64,
    pub matrix_engine_utilization: f64,
    pub matrix_engine_active_utilization: f64,
}

impl SimReport {
    pub fn total_hbm_bytes(&self) -> u64 {
        self.hbm_bytes_read.iter().sum::<u64>() + self.hbm_bytes_written.iter().sum::<u64>()
    }

    /// Per-category busy cycles averaged over all tiles.
    pub fn mean_busy(&self, c: Category) -> f64 {
        self.mean(|t| t.busy.get(c))
    }

    /// Per-category exposed cycles averaged over all tiles.
    pub fn mean_exposed(&self, c: Category) -> f64 {
        self.mean(|t| t.exposed.get(c))
    }

    fn mean(&self, f: impl Fn(&TileReport) -> Cycles) -> f64 {
        if self.tiles.is_empty() {
            return 0.0;
        }
        self.tiles.iter().map(&f).sum::<u64>() as f64 / self.tiles.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: TaskId,
    pub tile: TileCoord,
    pub kind: String,
    pub category: Category,
    pub start: Cycles,
    pub end: Cycles,
    pub bytes: u64,
    pub flops: u64,
}

/// Newline-delimited JSON, one record per task in id order.
pub fn write_trace(records: &[TraceRecord], mut out: impl Write) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn simulate(cfg: &ArchConfig, graph: &TaskGraph) -> Result<SimReport> {
    Ok(run(cfg, graph)?.0)
}

pub fn simulate_traced(cfg: &ArchConfig, graph: &TaskGraph) -> Result<(SimReport, Vec<TraceRecord>)> {
    let (report, times) = run(cfg, graph)?;
    let records = graph
        .tasks
        .iter()
        .zip(&times)
        .map(|(t, &(start, end))| TraceRecord {
            id: t.id,
            tile: t.tile,
            kind: t.kind.name().to_string(),
            category: t.category,
            start,
            end,
            bytes: t.kind.bytes(),
            flops: t.kind.flops(),
        })
        .collect();
    Ok((report, records))
}

const RES_PER_TILE: usize = 3;
const MATRIX: usize = 0;
const VECTOR: usize = 1;
const DMA: usize = 2;

enum Service {
    Fixed(Cycles),
    Hbm { channel: usize, occupancy: Cycles },
}

struct Prepared {
    resources: Vec<Vec<u32>>,
    service: Vec<Service>,
}

fn prepare(cfg: &ArchConfig, graph: &TaskGraph) -> Result<Prepared> {
    let tiles = cfg.tiles() as usize;
    let link_base = RES_PER_TILE * tiles;
    let mut resources = Vec::with_capacity(graph.len());
    let mut service = Vec::with_capacity(graph.len());
    for t in &graph.tasks {
        let tile = t.tile.index(cfg) * RES_PER_TILE;
        let (res, svc) = match &t.kind {
            TaskKind::Gemm { m, k, n } => (vec![(tile + MATRIX) as u32], Service::Fixed(cfg.gemm_cycles(*m, *k, *n))),
            TaskKind::Vector { op, elems } => {
                (vec![(tile + VECTOR) as u32], Service::Fixed(cfg.vector_cycles(*op, *elems)))
            }
            TaskKind::Sync => (Vec::new(), Service::Fixed(cfg.sync_overhead_cycles)),
            TaskKind::HbmLoad { bytes, channel } | TaskKind::HbmStore { bytes, channel } => {
                if channel.0 >= cfg.hbm_channels() {
                    return Err(Error::AbsentResource { task: t.id, resource: format!("hbm channel {}", channel.0) });
                }
                (
                    vec![(tile + DMA) as u32],
                    Service::Hbm { channel: channel.0 as usize, occupancy: cfg.hbm_transfer_cycles(*bytes) },
                )
            }
            TaskKind::Unicast { dst, bytes } => {
                let path = noc::route_xy(t.tile, *dst, cfg)?;
                let mut res = vec![(tile + DMA) as u32];
                res.extend(path.iter().map(|l| (link_base + l.index(cfg)) as u32));
                (res, Service::Fixed(noc::unicast_latency(*bytes, path.len() as u64, cfg)))
            }
            TaskKind::Collective { spec, mode } => {
                let lat = noc::collective_latency(spec, *mode, cfg)?;
                (spec.links().map(|l| (link_base + l.index(cfg)) as u32).collect(), Service::Fixed(lat))
            }
        };
        resources.push(res);
        service.push(svc);
    }
    Ok(Prepared { resources, service })
}

fn run(cfg: &ArchConfig, graph: &TaskGraph) -> Result<(SimReport, Vec<(Cycles, Cycles)>)> {
    validate_graph(graph, cfg).map_err(Error::InvalidGraph)?;
    let Prepared { resources, service } = prepare(cfg, graph)?;
    let n = graph.len();
    let tiles = cfg.tiles() as usize;
    let n_res = RES_PER_TILE * tiles + 4 * tiles;

    let (offsets, succ) = successors(graph);
    let mut pending: Vec<u32> = graph.tasks.iter().map(|t| t.deps.len() as u32).collect();
    let mut times = vec![(0 as Cycles, 0 as Cycles); n];
    let mut busy = vec![false; n_res];
    let mut waiters: Vec<Vec<(Cycles, TaskId)>> = vec![Vec::new(); n_res];
    let mut channel_free = vec![0 as Cycles; cfg.hbm_channels() as usize];

    let mut candidates: BinaryHeap<Reverse<(Cycles, TaskId)>> =
        (0..n).filter(|&i| pending[i] == 0).map(|i| Reverse((0, i as TaskId))).collect();
    let mut events: BinaryHeap<Reverse<(Cycles, TaskId)>> = BinaryHeap::new();
    let mut now: Cycles = 0;
    let mut done = 0usize;

    loop {
        while let Some(Reverse((ready, id))) = candidates.pop() {
            let i = id as usize;
            if let Some(&r) = resources[i].iter().find(|&&r| busy[r as usize]) {
                waiters[r as usize].push((ready, id));
                continue;
            }
            for &r in &resources[i] {
                busy[r as usize] = true;
            }
            let end = match service[i] {
                Service::Fixed(d) => now + d,
                Service::Hbm { channel, occupancy } => {
                    let start = now.max(channel_free[channel]);
                    channel_free[channel] = start + occupancy;
                    start + occupancy + cfg.hbm_access_latency_cycles
                }
            };
            times[i] = (now, end);
            events.push(Reverse((end, id)));
        }

        let Some(&Reverse((t, _))) = events.peek() else { break };
        now = t;
        while let Some(&Reverse((t, id))) = events.peek() {
            if t != now {
                break;
            }
            events.pop();
            done += 1;
            let i = id as usize;
            for &r in &resources[i] {
                busy[r as usize] = false;
                candidates.extend(waiters[r as usize].drain(..).map(Reverse));
            }
            for &s in &succ[offsets[i]..offsets[i + 1]] {
                let s = s as usize;
                pending[s] -= 1;
                if pending[s] == 0 {
                    candidates.push(Reverse((now, s as TaskId)));
                }
            }
        }
    }

    if done < n {
        return Err(Error::Deadlock { witness: deadlock_witness(graph, &pending) });
    }
    Ok((build_report(cfg, graph, &times), times))
}

fn deadlock_witness(graph: &TaskGraph, pending: &[u32]) -> Vec<TaskId> {
    let mut chain = Vec::new();
    let Some(mut cur) = pending.iter().position(|&p| p > 0) else { return chain };
    let mut seen = vec![false; pending.len()];
    while !seen[cur] {
        seen[cur] = true;
        chain.push(cur as TaskId);
        match graph.tasks[cur].deps.iter().find(|&&d| pending[d as usize] > 0) {
            Some(&d) => cur = d as usize,
            None => break,
        }
    }
    chain
}

fn build_report(cfg: &ArchConfig, graph: &TaskGraph, times: &[(Cycles, Cycles)]) -> SimReport {
    let tiles = cfg.tiles() as usize;
    let n_cat = Category::ALL.len();
    let mut intervals: Vec<Vec<(Cycles, Cycles)>> = vec![Vec::new(); tiles * n_cat];
    let mut read = vec![0u64; cfg.hbm_channels() as usize];
    let mut written = vec![0u64; cfg.hbm_channels() as usize];
    let mut flops = 0u64;
    let mut total = 0;

    for (t, &(start, end)) in graph.tasks.iter().zip(times) {
        total = total.max(end);
        flops += t.kind.flops();
        match t.kind {
            TaskKind::HbmLoad { bytes, channel } => read[channel.0 as usize] += bytes,
            TaskKind::HbmStore { bytes, channel } => written[channel.0 as usize] += bytes,
            _ => {}
        }
        if end > start {
            for tile in t.tiles() {
                intervals[tile.index(cfg) * n_cat + t.category as usize].push((start, end));
            }
        }
    }

    let mut tile_reports = Vec::with_capacity(tiles);
    let mut matmul_busy = 0;
    for idx in 0..tiles {
        let tile = TileCoord::new((idx % cfg.mesh_x as usize) as u32, (idx / cfg.mesh_x as usize) as u32);
        let merged: Vec<Vec<(Cycles, Cycles)>> =
            (0..n_cat).map(|c| merge(std::mem::take(&mut intervals[idx * n_cat + c]))).collect();
        let matmul = &merged[Category::Matmul as usize];
        let mut busy = CategoryCycles::default();
        let mut exposed = CategoryCycles::default();
        for c in Category::ALL {
            let m = &merged[c as usize];
            let b = length(m);
            *busy.get_mut(c) = b;
            *exposed.get_mut(c) = if c == Category::Matmul { b } else { b - overlap(m, matmul) };
        }
        matmul_busy += busy.matmul;
        tile_reports.push(TileReport { tile, busy, exposed });
    }

    let bytes: u64 = read.iter().sum::<u64>() + written.iter().sum::<u64>();
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    SimReport {
        total_cycles: total,
        task_count: graph.len() as u64,
        tiles: tile_reports,
        hbm_bytes_read: read,
        hbm_bytes_written: written,
        gemm_flops: flops,
        matmul_busy_cycles: matmul_busy,
        avg_hbm_bw_utilization: ratio(bytes as f64, cfg.peak_hbm_bytes_per_cycle() as f64 * total as f64),
        matrix_engine_utilization: ratio(flops as f64, cfg.total_peak_flops_per_cycle() as f64 * total as f64),
        matrix_engine_active_utilization: ratio(flops as f64, cfg.peak_flops_per_cycle() as f64 * matmul_busy as f64),
    }
}

fn merge(mut v: Vec<(Cycles, Cycles)>) -> Vec<(Cycles, Cycles)> {
    v.sort_unstable();
    let mut out: Vec<(Cycles, Cycles)> = Vec::with_capacity(v.len());
    for (s, e) in v {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

fn length(v: &[(Cycles, Cycles)]) -> Cycles {
    v.iter().map(|(s, e)| e - s).sum()
}

fn overlap(a: &[(Cycles, Cycles)], b: &[(Cycles, Cycles)]) -> Cycles {
    let (mut i, mut j, mut acc) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let s = a[i].0.max(b[j].0);
        let e = a[i].1.min(b[j].1);
        if e > s {
            acc += e - s;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Preset;
    use crate::noc::Axis;

    fn cfg() -> ArchConfig {
        let mut c = Preset::Table1.config();
        c.gemm_fill_cycles = 0;
        c
    }

    const T0: TileCoord = TileCoord::new(0, 0);

    #[test]
    fn single_gemm() {
        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::Gemm { m: 32, k: 128, n: 16 }, []);
        let r = simulate(&cfg(), &g).unwrap();
        assert_eq!(r.total_cycles, 128);
        assert_eq!(r.tiles[0].busy.matmul, 128);
        assert_eq!(r.matrix_engine_active_utilization, 1.0);
        assert!((r.matrix_engine_utilization - 1.0 / 1024.0).abs() < 1e-12);
    }

    #[test]
    fn independent_tiles_run_in_parallel() {
        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::Gemm { m: 32, k: 128, n: 16 }, []);
        g.add(TileCoord::new(5, 5), TaskKind::Gemm { m: 32, k: 256, n: 16 }, []);
        assert_eq!(simulate(&cfg(), &g).unwrap().total_cycles, 256);
    }

    #[test]
    fn same_engine_serializes() {
        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::Gemm { m: 32, k: 128, n: 16 }, []);
        g.add(T0, TaskKind::Gemm { m: 32, k: 128, n: 16 }, []);
        assert_eq!(simulate(&cfg(), &g).unwrap().total_cycles, 256);
    }

    #[test]
    fn hbm_channel_serializes_fifo() {
        let c = cfg();
        let ch = ChannelId(0);
        let mut g = TaskGraph::new();
        g.add(TileCoord::new(0, 0), TaskKind::HbmLoad { bytes: 16384, channel: ch }, []);
        g.add(TileCoord::new(0, 1), TaskKind::HbmLoad { bytes: 16384, channel: ch }, []);
        let (r, tr) = simulate_traced(&c, &g).unwrap();
        assert_eq!(tr[0].end, 456);
        assert_eq!(tr[1].end, 200 + 2 * 256);
        assert_eq!(r.total_cycles, 712);
        assert_eq!(r.hbm_bytes_read[0], 32768);
        // queueing counts as hbm time on the issuing tile
        assert_eq!(r.tiles[c.mesh_x as usize].busy.hbm, 712);
    }

    #[test]
    fn dependencies_respected() {
        let c = cfg();
        let mut g = TaskGraph::new();
        let a = g.add(T0, TaskKind::HbmLoad { bytes: 64, channel: ChannelId(0) }, []);
        let b = g.add(T0, TaskKind::Gemm { m: 32, k: 128, n: 16 }, [a]);
        g.add(T0, TaskKind::Vector { op: VectorOp::Exp, elems: 1600 }, [b]);
        let (r, tr) = simulate_traced(&c, &g).unwrap();
        assert_eq!(tr[1].start, 201);
        assert_eq!(tr[2].start, 329);
        assert_eq!(r.total_cycles, 429);
        // exposed = busy minus matmul overlap; nothing overlaps here
        assert_eq!(r.tiles[0].exposed.softmax, 100);
        assert_eq!(r.tiles[0].exposed.hbm, 201);
    }

    #[test]
    fn overlap_hides_vector_work() {
        let c = cfg();
        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::Gemm { m: 32, k: 128, n: 16 }, []);
        g.add(T0, TaskKind::Vector { op: VectorOp::Elementwise, elems: 64 * 200 }, []);
        let r = simulate(&c, &g).unwrap();
        assert_eq!(r.total_cycles, 200);
        assert_eq!(r.tiles[0].busy.softmax, 200);
        assert_eq!(r.tiles[0].exposed.softmax, 72);
    }

    #[test]
    fn collectives_contend_on_links() {
        let c = cfg();
        let spec = CollectiveSpec::multicast(Axis::Row, T0, 7, 16384);
        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::Collective { spec, mode: CollectiveMode::Hardware }, []);
        g.add(T0, TaskKind::Collective { spec, mode: CollectiveMode::Hardware }, []);
        let other = CollectiveSpec::multicast(Axis::Row, TileCoord::new(0, 1), 7, 16384);
        g.add(TileCoord::new(0, 1), TaskKind::Collective { spec: other, mode: CollectiveMode::Software }, []);
        let (r, tr) = simulate_traced(&c, &g).unwrap();
        assert_eq!(tr[1].start, 176);
        assert_eq!(tr[2].start, 0);
        assert_eq!(r.total_cycles, 1148);
        assert_eq!(r.tiles[7].busy.inter_tile, 352);
    }

    #[test]
    fn unicast_holds_path() {
        let c = cfg();
        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::Unicast { dst: TileCoord::new(3, 4), bytes: 128 }, []);
        g.add(TileCoord::new(1, 0), TaskKind::Unicast { dst: TileCoord::new(2, 0), bytes: 128 }, []);
        let (_, tr) = simulate_traced(&c, &g).unwrap();
        assert_eq!(tr[0].end, 1 + 20 + 7 * 4);
        assert_eq!(tr[1].start, tr[0].end);
    }

    #[test]
    fn hw_collective_without_support_fails() {
        let mut c = cfg();
        c.hw_collectives = false;
        let mut g = TaskGraph::new();
        let spec = CollectiveSpec::multicast(Axis::Row, T0, 3, 64);
        g.add(T0, TaskKind::Collective { spec, mode: CollectiveMode::Hardware }, []);
        assert!(matches!(simulate(&c, &g), Err(Error::HwCollectivesUnavailable)));
    }

    #[test]
    fn validate_examples() {
        let c = cfg();
        assert!(validate_graph(&TaskGraph::new(), &c).is_ok());
        assert_eq!(simulate(&c, &TaskGraph::new()).unwrap().total_cycles, 0);

        let mk = |id, deps: Vec<TaskId>, tile| Task { id, tile, kind: TaskKind::Sync, deps, category: Category::Sync };
        let g = TaskGraph::from_tasks(vec![mk(0, vec![1], T0), mk(1, vec![0], T0)]);
        let d = validate_graph(&g, &c).unwrap_err();
        assert!(matches!(&d[..], [Diagnostic::Cycle(ids)] if ids.contains(&0) && ids.contains(&1)), "{d:?}");

        let g = TaskGraph::from_tasks(vec![mk(0, vec![], TileCoord::new(40, 0))]);
        let d = validate_graph(&g, &c).unwrap_err();
        assert_eq!(d, vec![Diagnostic::OutOfMesh { task: 0, tile: TileCoord::new(40, 0) }]);

        let g = TaskGraph::from_tasks(vec![mk(0, vec![9], T0)]);
        assert_eq!(validate_graph(&g, &c).unwrap_err(), vec![Diagnostic::DanglingDep { task: 0, dep: 9 }]);

        let mut g = TaskGraph::new();
        g.add(T0, TaskKind::HbmLoad { bytes: 1, channel: ChannelId(99) }, []);
        assert!(matches!(simulate(&c, &g), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn interval_helpers() {
        assert_eq!(merge(vec![(5, 8), (0, 2), (1, 3), (8, 9)]), vec![(0, 3), (5, 9)]);
        assert_eq!(overlap(&[(0, 10), (20, 30)], &[(5, 25)]), 10);
    }

    #[test]
    fn sync_has_fixed_cost() {
        let c = cfg();
        let mut g = TaskGraph::new();
        let a = g.add(T0, TaskKind::Sync, []);
        g.add(T0, TaskKind::Sync, [a]);
        let r = simulate(&c, &g).unwrap();
        assert_eq!(r.total_cycles, 2 * c.sync_overhead_cycles);
        assert_eq!(r.tiles[0].busy.sync, 100);
    }
}
