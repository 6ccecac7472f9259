//! Closed-form HBM traffic models, report summaries and sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, MhaLayer};
use crate::dataflow::{plan, DataflowKind, GroupShape, PlanOptions};
use crate::error::{Error, Result};
use crate::sim::{simulate, Category, SimReport};
use crate::Cycles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoBreakdown {
    pub q_bytes: u64,
    pub kv_bytes: u64,
    pub o_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoModelResult {
    pub total_bytes: u64,
    pub breakdown: IoBreakdown,
    /// Baseline bytes ÷ these bytes, as a reduced fraction.
    pub ratio_vs_baseline: Option<Ratio>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        let g = gcd(num, den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{} = {}", self.num, self.den, self.value())
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn breakdown(layer: &MhaLayer, block_rows: u64) -> IoBreakdown {
    let per_tensor = layer.batch * layer.heads * layer.head_tensor_bytes();
    let row_blocks = layer.seq_len / block_rows;
    IoBreakdown { q_bytes: per_tensor, kv_bytes: 2 * per_tensor * row_blocks, o_bytes: per_tensor }
}

/// Bytes moved by any plan that reads Q and writes O once and streams all of
/// K and V once per `block_rows` query rows.
pub fn io_bytes_for_block_rows(layer: &MhaLayer, block_rows: u64) -> u64 {
    let b = breakdown(layer, block_rows);
    b.q_bytes + b.kv_bytes + b.o_bytes
}

/// One extra read and write of K per head.
pub fn transpose_bytes(layer: &MhaLayer) -> u64 {
    2 * layer.batch * layer.heads * layer.head_tensor_bytes()
}

fn result(layer: &MhaLayer, block_rows: u64) -> IoModelResult {
    let breakdown = breakdown(layer, block_rows);
    IoModelResult {
        total_bytes: breakdown.q_bytes + breakdown.kv_bytes + breakdown.o_bytes,
        breakdown,
        ratio_vs_baseline: None,
    }
}

/// FlashAttention traffic with square blocks of edge `m`.
pub fn fa_io_bytes(layer: &MhaLayer, m: u64) -> Result<IoModelResult> {
    layer.validate()?;
    if m == 0 || !layer.seq_len.is_multiple_of(m) {
        return Err(Error::Infeasible {
            constraint: "divisibility",
            detail: format!("block size {m} does not divide sequence length {}", layer.seq_len),
        });
    }
    Ok(result(layer, m))
}

/// FlatAttention traffic for `n` tiles in a square group, each holding an
/// `m × m` slice. The ratio is taken against [`fa_io_bytes`] at the same `m`.
pub fn flat_io_bytes(layer: &MhaLayer, m: u64, n: u64) -> Result<IoModelResult> {
    let side = (n as f64).sqrt().round() as u64;
    if n == 0 || side * side != n {
        return Err(Error::Infeasible { constraint: "group", detail: format!("{n} tiles do not form a square group") });
    }
    let base = fa_io_bytes(layer, m)?;
    let rows = m * side;
    if !layer.seq_len.is_multiple_of(rows) {
        return Err(Error::Infeasible {
            constraint: "divisibility",
            detail: format!("block rows {rows} do not divide sequence length {}", layer.seq_len),
        });
    }
    let mut r = result(layer, rows);
    r.ratio_vs_baseline = Some(Ratio::new(base.total_bytes, r.total_bytes));
    Ok(r)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMeans {
    pub hbm: f64,
    pub inter_tile: f64,
    pub matmul: f64,
    pub softmax: f64,
    pub sync: f64,
}

impl CategoryMeans {
    pub fn get(&self, c: Category) -> f64 {
        match c {
            Category::Hbm => self.hbm,
            Category::InterTile => self.inter_tile,
            Category::Matmul => self.matmul,
            Category::Softmax => self.softmax,
            Category::Sync => self.sync,
        }
    }

    /// Category with the most cycles (first in declaration order on ties).
    pub fn largest(&self) -> Category {
        let mut best = Category::Hbm;
        for c in Category::ALL {
            if self.get(c) > self.get(best) {
                best = c;
            }
        }
        best
    }

    fn from_fn(f: impl Fn(Category) -> f64) -> Self {
        CategoryMeans {
            hbm: f(Category::Hbm),
            inter_tile: f(Category::InterTile),
            matmul: f(Category::Matmul),
            softmax: f(Category::Softmax),
            sync: f(Category::Sync),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub cycles: Cycles,
    pub flops: u64,
    /// Layer flops ÷ (cycles · mesh peak).
    pub utilization: f64,
    /// Layer flops ÷ (matrix-engine busy cycles · per-tile peak).
    pub active_utilization: f64,
    pub hbm_bytes: u64,
    pub hbm_bw_utilization: f64,
    /// Mean over tiles.
    pub busy: CategoryMeans,
    /// Mean over tiles of cycles not hidden behind the matrix engine.
    pub exposed: CategoryMeans,
}

pub fn summarize(report: &SimReport, cfg: &ArchConfig, layer: &MhaLayer) -> Metrics {
    let flops = layer.flops();
    let cycles = report.total_cycles;
    let ratio = |num: f64, den: f64| if den > 0.0 { (num / den).min(1.0) } else { 0.0 };
    Metrics {
        cycles,
        flops,
        utilization: ratio(flops as f64, cycles as f64 * cfg.total_peak_flops_per_cycle() as f64),
        active_utilization: ratio(flops as f64, report.matmul_busy_cycles as f64 * cfg.peak_flops_per_cycle() as f64),
        hbm_bytes: report.total_hbm_bytes(),
        hbm_bw_utilization: ratio(
            report.total_hbm_bytes() as f64,
            cycles as f64 * cfg.peak_hbm_bytes_per_cycle() as f64,
        ),
        busy: CategoryMeans::from_fn(|c| report.mean_busy(c)),
        exposed: CategoryMeans::from_fn(|c| report.mean_exposed(c)),
    }
}

/// Plan, simulate and summarize one point.
pub fn run_point(
    cfg: &ArchConfig,
    layer: &MhaLayer,
    kind: DataflowKind,
    group: GroupShape,
    opts: PlanOptions,
) -> Result<Metrics> {
    let p = plan(kind, layer, cfg, group, opts)?;
    let report = simulate(cfg, &p.graph)?;
    Ok(summarize(&report, cfg, layer))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub arch: String,
    pub layer: MhaLayer,
    pub dataflow: DataflowKind,
    pub group: GroupShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
}

/// Best group of one (arch, layer, dataflow) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub arch: String,
    pub layer: MhaLayer,
    pub dataflow: DataflowKind,
    pub group: GroupShape,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub best: Vec<BestCell>,
    /// Architecture with the highest mean best-cell utilization; ties go to
    /// the smaller mesh.
    pub best_arch: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SweepOptions {
    pub plan: PlanOptions,
    /// Worker threads; 0 or 1 runs sequentially.
    pub parallel: usize,
}

/// Flat row of the sweep CSV. Field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub arch: String,
    pub dataflow: String,
    pub group: String,
    #[serde(rename = "S")]
    pub seq_len: u64,
    #[serde(rename = "D")]
    pub head_dim: u64,
    #[serde(rename = "B")]
    pub batch: u64,
    #[serde(rename = "H")]
    pub heads: u64,
    pub cycles: Option<u64>,
    pub util: Option<f64>,
    pub active_util: Option<f64>,
    pub hbm_bytes: Option<u64>,
    pub hbm_bw_util: Option<f64>,
    pub exposed_hbm: Option<f64>,
    pub exposed_inter_tile: Option<f64>,
    pub exposed_matmul: Option<f64>,
    pub exposed_softmax: Option<f64>,
    pub exposed_sync: Option<f64>,
    pub error: String,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "arch",
    "dataflow",
    "group",
    "S",
    "D",
    "B",
    "H",
    "cycles",
    "util",
    "active_util",
    "hbm_bytes",
    "hbm_bw_util",
    "exposed_hbm",
    "exposed_inter_tile",
    "exposed_matmul",
    "exposed_softmax",
    "exposed_sync",
    "error",
];

impl SweepRow {
    pub fn csv_row(&self) -> CsvRow {
        let p = &self.point;
        let m = self.metrics.as_ref();
        CsvRow {
            arch: p.arch.clone(),
            dataflow: p.dataflow.name().to_string(),
            group: p.group.to_string(),
            seq_len: p.layer.seq_len,
            head_dim: p.layer.head_dim,
            batch: p.layer.batch,
            heads: p.layer.heads,
            cycles: m.map(|m| m.cycles),
            util: m.map(|m| m.utilization),
            active_util: m.map(|m| m.active_utilization),
            hbm_bytes: m.map(|m| m.hbm_bytes),
            hbm_bw_util: m.map(|m| m.hbm_bw_utilization),
            exposed_hbm: m.map(|m| m.exposed.hbm),
            exposed_inter_tile: m.map(|m| m.exposed.inter_tile),
            exposed_matmul: m.map(|m| m.exposed.matmul),
            exposed_softmax: m.map(|m| m.exposed.softmax),
            exposed_sync: m.map(|m| m.exposed.sync),
            error: self.error.clone().unwrap_or_default(),
        }
    }
}

/// Grid points in (arch, layer, dataflow, group) order. FA-2/FA-3 ignore the
/// group axis and contribute one 1×1 point per cell.
pub fn sweep_points(
    archs: &[ArchConfig],
    layers: &[MhaLayer],
    kinds: &[DataflowKind],
    groups: &[GroupShape],
) -> Vec<(usize, SweepPoint)> {
    let mut out = Vec::new();
    for (ai, cfg) in archs.iter().enumerate() {
        for layer in layers {
            for &dataflow in kinds {
                let gs: &[GroupShape] = if dataflow.is_flat() { groups } else { &[GroupShape::SINGLE] };
                for &group in gs {
                    out.push((ai, SweepPoint { arch: cfg.label(), layer: *layer, dataflow, group }));
                }
            }
        }
    }
    out
}

pub fn sweep(
    archs: &[ArchConfig],
    layers: &[MhaLayer],
    kinds: &[DataflowKind],
    groups: &[GroupShape],
    opts: SweepOptions,
) -> Result<SweepResult> {
    let points = sweep_points(archs, layers, kinds, groups);
    if points.is_empty() {
        return Err(Error::EmptySweep);
    }
    let eval = |(ai, point): &(usize, SweepPoint)| {
        let r = run_point(&archs[*ai], &point.layer, point.dataflow, point.group, opts.plan);
        match r {
            Ok(m) => SweepRow { point: point.clone(), metrics: Some(m), error: None },
            Err(e) => SweepRow { point: point.clone(), metrics: None, error: Some(e.to_string()) },
        }
    };
    let rows: Vec<SweepRow> = if opts.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel)
            .build()
            .map_err(|e| Error::Shape(format!("thread pool: {e}")))?;
        pool.install(|| points.par_iter().map(eval).collect())
    } else {
        points.iter().map(eval).collect()
    };
    let best = best_cells(&rows);
    let best_arch = best_arch(archs, &best);
    Ok(SweepResult { rows, best, best_arch })
}

const TIE_EPS: f64 = 1e-9;

fn best_cells(rows: &[SweepRow]) -> Vec<BestCell> {
    let mut cells: Vec<BestCell> = Vec::new();
    for row in rows {
        let Some(m) = &row.metrics else { continue };
        let p = &row.point;
        let cand = BestCell {
            arch: p.arch.clone(),
            layer: p.layer,
            dataflow: p.dataflow,
            group: p.group,
            utilization: m.utilization,
        };
        match cells.iter_mut().find(|c| c.arch == p.arch && c.layer == p.layer && c.dataflow == p.dataflow) {
            None => cells.push(cand),
            Some(c) => {
                let better = cand.utilization > c.utilization + TIE_EPS
                    || ((cand.utilization - c.utilization).abs() <= TIE_EPS
                        && (cand.group.tiles(), cand.group) < (c.group.tiles(), c.group));
                if better {
                    *c = cand;
                }
            }
        }
    }
    cells
}

fn best_arch(archs: &[ArchConfig], best: &[BestCell]) -> Option<String> {
    let mut means: BTreeMap<String, (f64, usize, u32)> = BTreeMap::new();
    for cfg in archs {
        means.entry(cfg.label()).or_insert((0.0, 0, cfg.tiles()));
    }
    for c in best {
        let e = means.get_mut(&c.arch)?;
        e.0 += c.utilization;
        e.1 += 1;
    }
    let mut winner: Option<(String, f64, u32)> = None;
    for cfg in archs {
        let (sum, n, tiles) = means[&cfg.label()];
        if n == 0 {
            continue;
        }
        let mean = sum / n as f64;
        let better = match &winner {
            None => true,
            Some((_, wm, wt)) => mean > wm + TIE_EPS || ((mean - wm).abs() <= TIE_EPS && tiles < *wt),
        };
        if better {
            winner = Some((cfg.label(), mean, tiles));
        }
    }
    winner.map(|w| w.0)
}
