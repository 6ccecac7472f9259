//! Attention dataflows: slice planning, task-graph generation and functional
//! replay.
//!
//! FlashAttention-style variants (`Fa2`, `Fa3`) give every tile its own
//! attention blocks. FlatAttention variants (`Flat`, `FlatColl`, `FlatAsyn`)
//! let a `G_x × G_y` group of tiles cooperate on one block of
//! `B_r = G_y·s` rows and `B_c = G_x·s` columns, where `s` is the per-tile
//! slice edge. Q slices enter through the group's west edge and are multicast
//! along rows; Kᵀ and V slices enter through the south edge and are
//! multicast along columns; softmax statistics and the output are combined
//! with row-wise reductions.

mod functional;
mod plan;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, MhaLayer};
use crate::error::{Error, Result};

pub use functional::{
    execute_functional, execute_functional_heads, max_relative_error, random_heads, reference_attention,
    reference_softmax, FunctionalOptions, FunctionalSchedule, HeadTensors, Matrix,
};
pub use plan::{plan, plan_fa2, plan_fa3, plan_flat, plan_with_mode, Plan, PlanOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupShape {
    pub gx: u32,
    pub gy: u32,
}

impl GroupShape {
    pub const SINGLE: GroupShape = GroupShape { gx: 1, gy: 1 };

    pub const fn new(gx: u32, gy: u32) -> Self {
        GroupShape { gx, gy }
    }

    pub const fn square(g: u32) -> Self {
        GroupShape { gx: g, gy: g }
    }

    /// N: tiles per group.
    pub fn tiles(self) -> u32 {
        self.gx * self.gy
    }

    pub fn validate(self, cfg: &ArchConfig) -> Result<()> {
        if self.gx == 0 || self.gy == 0 {
            return Err(Error::Infeasible { constraint: "group", detail: format!("group {self} has a zero dimension") });
        }
        if !cfg.mesh_x.is_multiple_of(self.gx) || !cfg.mesh_y.is_multiple_of(self.gy) {
            return Err(Error::Infeasible {
                constraint: "group",
                detail: format!("group {self} does not tile the {}x{} mesh", cfg.mesh_x, cfg.mesh_y),
            });
        }
        Ok(())
    }

    /// Number of groups covering the mesh.
    pub fn count(self, cfg: &ArchConfig) -> u32 {
        (cfg.mesh_x / self.gx) * (cfg.mesh_y / self.gy)
    }
}

impl std::fmt::Display for GroupShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.gx, self.gy)
    }
}

impl std::str::FromStr for GroupShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected GxxGy, got `{s}`"))?;
        let gx = a.trim().parse().map_err(|_| format!("bad group width in `{s}`"))?;
        let gy = b.trim().parse().map_err(|_| format!("bad group height in `{s}`"))?;
        Ok(GroupShape { gx, gy })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataflowKind {
    Fa2,
    Fa3,
    Flat,
    FlatColl,
    FlatAsyn,
}

impl DataflowKind {
    pub const ALL: [DataflowKind; 5] =
        [DataflowKind::Fa2, DataflowKind::Fa3, DataflowKind::Flat, DataflowKind::FlatColl, DataflowKind::FlatAsyn];

    pub fn name(self) -> &'static str {
        match self {
            DataflowKind::Fa2 => "fa2",
            DataflowKind::Fa3 => "fa3",
            DataflowKind::Flat => "flat",
            DataflowKind::FlatColl => "flatcoll",
            DataflowKind::FlatAsyn => "flatasyn",
        }
    }

    pub fn is_flat(self) -> bool {
        matches!(self, DataflowKind::Flat | DataflowKind::FlatColl | DataflowKind::FlatAsyn)
    }

    pub fn requires_hw_collectives(self) -> bool {
        matches!(self, DataflowKind::FlatColl | DataflowKind::FlatAsyn)
    }

    /// Two interleaved head streams per tile or group.
    pub fn is_two_stream(self) -> bool {
        matches!(self, DataflowKind::Fa3 | DataflowKind::FlatAsyn)
    }
}

impl std::fmt::Display for DataflowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DataflowKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        DataflowKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("fa-2") && *k == DataflowKind::Fa2))
            .ok_or_else(|| format!("unknown dataflow `{s}` (expected fa2|fa3|flat|flatcoll|flatasyn)"))
    }
}

/// K/V buffering within one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Buffering {
    Single,
    Double,
}

impl Buffering {
    pub fn kv_buffers(self) -> u64 {
        match self {
            Buffering::Single => 1,
            Buffering::Double => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlicePlan {
    pub group: GroupShape,
    /// Per-tile slice edge: slice_r = slice_c = s.
    pub slice: u64,
    /// B_r = G_y·s
    pub block_rows: u64,
    /// B_c = G_x·s
    pub block_cols: u64,
    pub buffering: Buffering,
    /// Concurrent head streams per tile (two for FA-3 and FlatAsyn).
    pub streams: u32,
    pub l1_footprint_bytes: u64,
}

impl SlicePlan {
    pub fn slice_rows(&self) -> u64 {
        self.block_rows / u64::from(self.group.gy)
    }

    pub fn slice_cols(&self) -> u64 {
        self.block_cols / u64::from(self.group.gx)
    }

    pub fn row_blocks(&self, layer: &MhaLayer) -> u64 {
        layer.seq_len / self.block_rows
    }

    /// Inner-loop trip count T.
    pub fn col_blocks(&self, layer: &MhaLayer) -> u64 {
        layer.seq_len / self.block_cols
    }

    /// (batch, head, row-block) work items.
    pub fn work_items(&self, layer: &MhaLayer) -> u64 {
        layer.batch * layer.heads * self.row_blocks(layer)
    }
}

/// Per-tile L1 bytes for slice edge `s`:
/// streams · bytes · (Q: s·D + Kᵀ: D·s·k + V: s·D·k + O: s·D + scores: s² + stats: 4s)
/// with k K/V buffers.
pub fn footprint_bytes(s: u64, head_dim: u64, bytes_per_elem: u64, buffering: Buffering, streams: u32) -> u64 {
    let k = buffering.kv_buffers();
    u64::from(streams) * bytes_per_elem * (s * head_dim * (2 + 2 * k) + s * s + 4 * s)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Slice candidates in descending order: divisors of gcd(S/G_y, S/G_x) that
/// are multiples of the larger CE-array dimension. When divisibility leaves
/// no such divisor the largest divisible slice is the only candidate.
fn slice_candidates(layer: &MhaLayer, cfg: &ArchConfig, group: GroupShape) -> Result<Vec<u64>> {
    let s_len = layer.seq_len;
    let (gx, gy) = (u64::from(group.gx), u64::from(group.gy));
    if !s_len.is_multiple_of(gx) || !s_len.is_multiple_of(gy) {
        return Err(Error::Infeasible {
            constraint: "divisibility",
            detail: format!("sequence length {s_len} is not divisible by group {group}"),
        });
    }
    let g = gcd(s_len / gx, s_len / gy);
    let unit = u64::from(cfg.ce_rows.max(cfg.ce_cols));
    let mut out: Vec<u64> = (1..=g).rev().filter(|s| g.is_multiple_of(*s) && s % unit == 0).collect();
    if out.is_empty() {
        out.push(g);
    }
    Ok(out)
}

/// Largest square per-tile slice that fits in L1 and divides the sequence,
/// preferring slices that still give every tile (or group) at least one work
/// item per stream.
///
/// `Fa2`/`Fa3` always use 1×1 groups. `Fa3` keeps FA-2's slice and switches
/// to two single-buffered streams when they fit; otherwise it returns the
/// FA-2 layout unchanged (one double-buffered stream).
pub fn choose_slice_plan(layer: &MhaLayer, cfg: &ArchConfig, group: GroupShape, kind: DataflowKind) -> Result<SlicePlan> {
    layer.validate()?;
    let group = if kind.is_flat() { group } else { GroupShape::SINGLE };
    group.validate(cfg)?;

    if kind == DataflowKind::Fa3 {
        let base = choose_slice_plan(layer, cfg, group, DataflowKind::Fa2)?;
        let fp = footprint_bytes(base.slice, layer.head_dim, layer.bytes_per_elem, Buffering::Single, 2);
        let per_tile = base.work_items(layer).div_ceil(u64::from(cfg.tiles()));
        if fp <= cfg.l1_bytes && per_tile >= 2 {
            return Ok(SlicePlan { buffering: Buffering::Single, streams: 2, l1_footprint_bytes: fp, ..base });
        }
        return Ok(base);
    }

    let (buffering, streams) =
        if kind == DataflowKind::FlatAsyn { (Buffering::Single, 2) } else { (Buffering::Double, 1) };
    let units = u64::from(group.count(cfg)) * u64::from(streams);
    let make = |s: u64| SlicePlan {
        group,
        slice: s,
        block_rows: s * u64::from(group.gy),
        block_cols: s * u64::from(group.gx),
        buffering,
        streams,
        l1_footprint_bytes: footprint_bytes(s, layer.head_dim, layer.bytes_per_elem, buffering, streams),
    };

    let candidates = slice_candidates(layer, cfg, group)?;
    let fitting: Vec<SlicePlan> =
        candidates.iter().map(|&s| make(s)).filter(|p| p.l1_footprint_bytes <= cfg.l1_bytes).collect();
    if fitting.is_empty() {
        let smallest = make(*candidates.last().expect("at least one candidate"));
        return Err(Error::Infeasible {
            constraint: "l1_capacity",
            detail: format!(
                "slice {} needs {} bytes of L1 but tiles have {}",
                smallest.slice, smallest.l1_footprint_bytes, cfg.l1_bytes
            ),
        });
    }
    Ok(fitting
        .iter()
        .find(|p| p.work_items(layer) >= units)
        .copied()
        .unwrap_or_else(|| *fitting.last().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Preset;

    fn t1() -> ArchConfig {
        Preset::Table1.config()
    }

    #[test]
    fn table1_fa2_slice_is_128() {
        let layer = MhaLayer::new(2, 32, 4096, 128).unwrap();
        let p = choose_slice_plan(&layer, &t1(), GroupShape::SINGLE, DataflowKind::Fa2).unwrap();
        assert_eq!(p.slice, 128);
        assert_eq!(p.l1_footprint_bytes, 2 * (128 * 128 * 6 + 128 * 128 + 512));
        assert_eq!(p.l1_footprint_bytes, 230_400);
        assert!(p.l1_footprint_bytes <= 384 * 1024);
        assert_eq!(p.buffering, Buffering::Double);
    }

    #[test]
    fn short_sequence_forces_small_slice() {
        let layer = MhaLayer::new(4, 32, 512, 128).unwrap();
        let p = choose_slice_plan(&layer, &t1(), GroupShape::square(32), DataflowKind::FlatAsyn).unwrap();
        assert_eq!(p.slice, 16);
        assert_eq!(p.block_rows, 512);
        let slices: Vec<u64> = [4, 8, 16, 32]
            .iter()
            .map(|&g| choose_slice_plan(&layer, &t1(), GroupShape::square(g), DataflowKind::Flat).unwrap().slice)
            .collect();
        assert!(slices.windows(2).all(|w| w[0] >= w[1]), "{slices:?}");
    }

    #[test]
    fn huge_head_dim_is_infeasible() {
        let layer = MhaLayer::new(1, 1, 4096, 8192).unwrap();
        let err = choose_slice_plan(&layer, &t1(), GroupShape::SINGLE, DataflowKind::Fa2).unwrap_err();
        assert!(matches!(err, Error::Infeasible { constraint: "l1_capacity", .. }), "{err}");
    }

    #[test]
    fn flat_asyn_full_mesh_keeps_128() {
        let layer = MhaLayer::new(2, 32, 4096, 128).unwrap();
        let p = choose_slice_plan(&layer, &t1(), GroupShape::square(32), DataflowKind::FlatAsyn).unwrap();
        assert_eq!((p.slice, p.streams, p.block_rows), (128, 2, 4096));
        assert!(p.l1_footprint_bytes <= t1().l1_bytes);
    }

    #[test]
    fn fa2_prefers_filling_all_tiles() {
        // s = 256 fits L1 for D = 64 but would leave half the tiles idle at S = 2048.
        let layer = MhaLayer::new(2, 32, 2048, 64).unwrap();
        let p = choose_slice_plan(&layer, &t1(), GroupShape::SINGLE, DataflowKind::Fa2).unwrap();
        assert_eq!(p.slice, 128);
        assert_eq!(p.work_items(&layer), 1024);
        let layer = MhaLayer::new(2, 32, 4096, 64).unwrap();
        assert_eq!(choose_slice_plan(&layer, &t1(), GroupShape::SINGLE, DataflowKind::Fa2).unwrap().slice, 256);
    }

    #[test]
    fn fa3_matches_fa2_slice_or_falls_back() {
        let layer = MhaLayer::new(2, 32, 4096, 128).unwrap();
        let p = choose_slice_plan(&layer, &t1(), GroupShape::SINGLE, DataflowKind::Fa3).unwrap();
        assert_eq!((p.slice, p.streams), (128, 2));
        let layer = MhaLayer::new(2, 32, 4096, 64).unwrap();
        let p = choose_slice_plan(&layer, &t1(), GroupShape::SINGLE, DataflowKind::Fa3).unwrap();
        assert_eq!((p.slice, p.streams), (256, 1));
    }

    #[test]
    fn invalid_group_rejected() {
        let layer = MhaLayer::new(1, 1, 4096, 128).unwrap();
        assert!(choose_slice_plan(&layer, &t1(), GroupShape::new(3, 4), DataflowKind::Flat).is_err());
        let layer = MhaLayer::new(1, 1, 100, 128).unwrap();
        assert!(choose_slice_plan(&layer, &t1(), GroupShape::new(8, 8), DataflowKind::Flat).is_err());
    }

    #[test]
    fn parse_names() {
        assert_eq!("flatasyn".parse::<DataflowKind>().unwrap(), DataflowKind::FlatAsyn);
        assert_eq!("FA3".parse::<DataflowKind>().unwrap(), DataflowKind::Fa3);
        assert!("fa4".parse::<DataflowKind>().is_err());
        assert_eq!("16x8".parse::<GroupShape>().unwrap(), GroupShape::new(16, 8));
        assert!("16".parse::<GroupShape>().is_err());
    }
}
