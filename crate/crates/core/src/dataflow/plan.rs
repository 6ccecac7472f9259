use serde::{Deserialize, Serialize};

use super::{choose_slice_plan, DataflowKind, GroupShape, SlicePlan};
use crate::analytics;
use crate::arch::{ArchConfig, MhaLayer, VectorOp};
use crate::error::{Error, Result};
use crate::noc::{Axis, CollectiveKind, CollectiveMode, CollectiveSpec, TileCoord};
use crate::sim::{TaskGraph, TaskId, TaskKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    /// Add one S×D read and write per head for transposing K in HBM.
    pub account_transpose: bool,
}

#[derive(Debug, Clone)]
pub struct Plan {
    pub kind: DataflowKind,
    pub layer: MhaLayer,
    pub slice: SlicePlan,
    /// `None` when groups are single tiles (no inter-tile traffic).
    pub collectives: Option<CollectiveMode>,
    pub options: PlanOptions,
    pub graph: TaskGraph,
    pub warnings: Vec<String>,
}

impl Plan {
    /// Closed-form HBM traffic of this plan.
    pub fn predicted_hbm_bytes(&self) -> u64 {
        let mut bytes = analytics::io_bytes_for_block_rows(&self.layer, self.slice.block_rows);
        if self.options.account_transpose {
            bytes += analytics::transpose_bytes(&self.layer);
        }
        bytes
    }
}

/// Dispatch on the dataflow kind. `group` is ignored by FA-2/FA-3.
pub fn plan(kind: DataflowKind, layer: &MhaLayer, cfg: &ArchConfig, group: GroupShape, opts: PlanOptions) -> Result<Plan> {
    plan_with_mode(kind, layer, cfg, group, None, opts)
}

/// Like [`plan`], but `mode` overrides the collective implementation of the
/// Flat variants (`Flat` defaults to software, the others to hardware).
pub fn plan_with_mode(
    kind: DataflowKind,
    layer: &MhaLayer,
    cfg: &ArchConfig,
    group: GroupShape,
    mode: Option<CollectiveMode>,
    opts: PlanOptions,
) -> Result<Plan> {
    let default = if kind.requires_hw_collectives() { CollectiveMode::Hardware } else { CollectiveMode::Software };
    let group = if kind.is_flat() { group } else { GroupShape::SINGLE };
    build(kind, layer, cfg, group, mode.unwrap_or(default), opts)
}

/// Per-tile FlashAttention-2: blocks of (batch, head, row-block) dealt
/// round-robin to tiles; K/V double-buffered; no inter-tile traffic.
pub fn plan_fa2(layer: &MhaLayer, cfg: &ArchConfig) -> Result<Plan> {
    plan(DataflowKind::Fa2, layer, cfg, GroupShape::SINGLE, PlanOptions::default())
}

/// FA-2 restructured into two interleaved head streams per tile with extra
/// synchronization. Falls back to FA-2 (with a warning) when fewer than two
/// blocks land on a tile or two streams do not fit in L1.
pub fn plan_fa3(layer: &MhaLayer, cfg: &ArchConfig) -> Result<Plan> {
    plan(DataflowKind::Fa3, layer, cfg, GroupShape::SINGLE, PlanOptions::default())
}

/// FlatAttention over `group`. `asyn` interleaves two heads per group.
pub fn plan_flat(layer: &MhaLayer, cfg: &ArchConfig, group: GroupShape, mode: CollectiveMode, asyn: bool) -> Result<Plan> {
    let kind = match (mode, asyn) {
        (CollectiveMode::Software, false) => DataflowKind::Flat,
        (CollectiveMode::Hardware, false) => DataflowKind::FlatColl,
        (_, true) => DataflowKind::FlatAsyn,
    };
    build(kind, layer, cfg, group, mode, PlanOptions::default())
}

fn build(
    kind: DataflowKind,
    layer: &MhaLayer,
    cfg: &ArchConfig,
    group: GroupShape,
    mode: CollectiveMode,
    options: PlanOptions,
) -> Result<Plan> {
    let slice = choose_slice_plan(layer, cfg, group, kind)?;
    let grouped = slice.group.tiles() > 1;
    if grouped && mode == CollectiveMode::Hardware && !cfg.hw_collectives {
        return Err(Error::HwCollectivesUnavailable);
    }
    let mut warnings = Vec::new();
    if kind == DataflowKind::Fa3 && slice.streams < 2 {
        warnings.push(format!(
            "fa3: two streams per tile are not possible (slice {}, {} blocks over {} tiles); running fa2 schedule",
            slice.slice,
            slice.work_items(layer),
            cfg.tiles()
        ));
    }
    let sync_each_iter = grouped || (kind == DataflowKind::Fa3 && slice.streams == 2);
    let mut builder = Builder {
        cfg,
        layer,
        slice,
        mode: grouped.then_some(mode),
        sync_each_iter,
        graph: TaskGraph::new(),
        transposed: Vec::new(),
    };
    builder.emit(options.account_transpose);
    Ok(Plan {
        kind,
        layer: *layer,
        slice,
        collectives: builder.mode,
        options,
        graph: builder.graph,
        warnings,
    })
}

#[derive(Debug, Clone, Copy)]
struct WorkItem {
    batch: u64,
    head: u64,
}

/// Buffer-reuse bookkeeping for one stream of one group. Per-tile vectors
/// are indexed `gy * G_x + gx`.
struct Stream {
    /// QK and PV gemm per global inner iteration, per tile.
    qk: Vec<Vec<TaskId>>,
    pv: Vec<Vec<TaskId>>,
    q_free: Vec<Option<TaskId>>,
    o_free: Vec<Option<TaskId>>,
}

impl Stream {
    fn new(tiles: usize) -> Self {
        Stream { qk: vec![Vec::new(); tiles], pv: vec![Vec::new(); tiles], q_free: vec![None; tiles], o_free: vec![None; tiles] }
    }
}

struct Builder<'a> {
    cfg: &'a ArchConfig,
    layer: &'a MhaLayer,
    slice: SlicePlan,
    mode: Option<CollectiveMode>,
    sync_each_iter: bool,
    graph: TaskGraph,
    /// Completion of K transposition per (batch, head), when accounted.
    transposed: Vec<Option<TaskId>>,
}

impl Builder<'_> {
    fn emit(&mut self, account_transpose: bool) {
        let layer = *self.layer;
        let heads = layer.batch * layer.heads;
        self.transposed = vec![None; heads as usize];
        if account_transpose {
            self.emit_transposes();
        }

        let group = self.slice.group;
        let units = group.count(self.cfg) as usize;
        let groups_x = self.cfg.mesh_x / group.gx;
        let row_blocks = self.slice.row_blocks(&layer);
        let streams = self.slice.streams as usize;

        let mut per_unit: Vec<Vec<WorkItem>> = vec![Vec::new(); units];
        let mut i = 0usize;
        for batch in 0..layer.batch {
            for head in 0..layer.heads {
                for _ in 0..row_blocks {
                    per_unit[i % units].push(WorkItem { batch, head });
                    i += 1;
                }
            }
        }

        let n_tiles = group.tiles() as usize;
        let mut states: Vec<Vec<Stream>> =
            (0..units).map(|_| (0..streams).map(|_| Stream::new(n_tiles)).collect()).collect();
        let rounds = per_unit.iter().map(Vec::len).max().unwrap_or(0);
        for p in 0..rounds {
            for (u, items) in per_unit.iter().enumerate() {
                let Some(&item) = items.get(p) else { continue };
                let origin = TileCoord::new((u as u32 % groups_x) * group.gx, (u as u32 / groups_x) * group.gy);
                self.emit_item(origin, &mut states[u][p % streams], item);
            }
        }
    }

    fn emit_transposes(&mut self) {
        let layer = *self.layer;
        let bytes = layer.head_tensor_bytes();
        let tiles = self.cfg.tiles();
        for h in 0..(layer.batch * layer.heads) {
            let idx = (h % u64::from(tiles)) as u32;
            let tile = TileCoord::new(idx % self.cfg.mesh_x, idx / self.cfg.mesh_x);
            let ch = self.cfg.home_channel(tile.x, tile.y);
            let load = self.graph.add(tile, TaskKind::HbmLoad { bytes, channel: ch }, []);
            let shuffle = self.graph.add(
                tile,
                TaskKind::Vector { op: VectorOp::Elementwise, elems: layer.seq_len * layer.head_dim },
                [load],
            );
            let store = self.graph.add(tile, TaskKind::HbmStore { bytes, channel: ch }, [shuffle]);
            self.transposed[h as usize] = Some(store);
        }
    }

    fn row_channel(&self, t: TileCoord) -> crate::arch::ChannelId {
        if self.mode.is_some() {
            self.cfg.row_channel(t.x, t.y)
        } else {
            self.cfg.home_channel(t.x, t.y)
        }
    }

    fn column_channel(&self, t: TileCoord) -> crate::arch::ChannelId {
        if self.mode.is_some() {
            self.cfg.column_channel(t.x, t.y)
        } else {
            self.cfg.home_channel(t.x, t.y)
        }
    }

    fn collective(&mut self, spec: CollectiveSpec, deps: Vec<TaskId>) -> TaskId {
        let mode = self.mode.expect("collectives only in grouped plans");
        let spec = spec.with_elem_bytes(self.layer.bytes_per_elem);
        self.graph.add(spec.root, TaskKind::Collective { spec, mode }, deps)
    }

    /// One (batch, head, row-block) work item on the group at `origin`.
    #[allow(clippy::needless_range_loop)]
    fn emit_item(&mut self, origin: TileCoord, st: &mut Stream, item: WorkItem) {
        let gx_n = self.slice.group.gx as usize;
        let gy_n = self.slice.group.gy as usize;
        let s = self.slice.slice;
        let d = self.layer.head_dim;
        let eb = self.layer.bytes_per_elem;
        let kbuf = self.slice.buffering.kv_buffers() as usize;
        let iters = self.slice.col_blocks(self.layer);
        let transposed = self.transposed[(item.batch * self.layer.heads + item.head) as usize];
        let tile = |gx: usize, gy: usize| TileCoord::new(origin.x + gx as u32, origin.y + gy as u32);
        let idx = |gx: usize, gy: usize| gy * gx_n + gx;
        let slice_bytes = s * d * eb;
        let stat_bytes = s * eb;

        // Q slices enter at the west edge and are multicast along rows.
        let mut q_ready = Vec::with_capacity(gy_n);
        for gy in 0..gy_n {
            let root = tile(0, gy);
            let ch = self.row_channel(root);
            let load = self.graph.add(root, TaskKind::HbmLoad { bytes: slice_bytes, channel: ch }, st.q_free[idx(0, gy)]);
            let ready = if gx_n > 1 {
                let mut deps = vec![load];
                deps.extend((1..gx_n).filter_map(|gx| st.q_free[idx(gx, gy)]));
                self.collective(CollectiveSpec::multicast(Axis::Row, root, gx_n as u32 - 1, slice_bytes), deps)
            } else {
                load
            };
            q_ready.push(ready);
        }

        let mut last_qk = vec![0; gx_n * gy_n];
        let mut last_pv = vec![0; gx_n * gy_n];
        for j in 0..iters {
            let g = st.qk[0].len();
            let reuse = |hist: &Vec<Vec<TaskId>>, t: usize| g.checked_sub(kbuf).map(|p| hist[t][p]);

            // Kᵀ and V slices enter at the south edge and are multicast along columns.
            let mut k_ready = Vec::with_capacity(gx_n);
            let mut v_ready = Vec::with_capacity(gx_n);
            for gx in 0..gx_n {
                let root = tile(gx, 0);
                let ch = self.column_channel(root);
                let k_deps: Vec<TaskId> = reuse(&st.qk, idx(gx, 0)).into_iter().chain(transposed).collect();
                let k_load = self.graph.add(root, TaskKind::HbmLoad { bytes: slice_bytes, channel: ch }, k_deps);
                let v_load = self.graph.add(
                    root,
                    TaskKind::HbmLoad { bytes: slice_bytes, channel: ch },
                    reuse(&st.pv, idx(gx, 0)),
                );
                if gy_n > 1 {
                    let span = gy_n as u32 - 1;
                    let mut kd = vec![k_load];
                    kd.extend((1..gy_n).filter_map(|gy| reuse(&st.qk, idx(gx, gy))));
                    k_ready.push(self.collective(CollectiveSpec::multicast(Axis::Column, root, span, slice_bytes), kd));
                    let mut vd = vec![v_load];
                    vd.extend((1..gy_n).filter_map(|gy| reuse(&st.pv, idx(gx, gy))));
                    v_ready.push(self.collective(CollectiveSpec::multicast(Axis::Column, root, span, slice_bytes), vd));
                } else {
                    k_ready.push(k_load);
                    v_ready.push(v_load);
                }
            }

            // Scores and local row maxima.
            let mut qk = vec![0; gx_n * gy_n];
            let mut rowmax = vec![0; gx_n * gy_n];
            for gy in 0..gy_n {
                for gx in 0..gx_n {
                    let t = tile(gx, gy);
                    let i = idx(gx, gy);
                    let mut deps = vec![q_ready[gy], k_ready[gx]];
                    if self.sync_each_iter {
                        deps.push(self.graph.add(t, TaskKind::Sync, [k_ready[gx]]));
                    }
                    deps.extend(st.pv[i].last().copied());
                    qk[i] = self.graph.add(t, TaskKind::Gemm { m: s, k: d, n: s }, deps);
                    rowmax[i] = self.graph.add(t, TaskKind::Vector { op: VectorOp::RowMax, elems: s * s }, [qk[i]]);
                }
            }
            let max_ready = self.row_allreduce(&rowmax, CollectiveKind::ReduceMax, stat_bytes, origin);

            // Exponentials and partial denominators.
            let mut exp = vec![0; gx_n * gy_n];
            let mut rowsum = vec![0; gx_n * gy_n];
            for gy in 0..gy_n {
                for gx in 0..gx_n {
                    let i = idx(gx, gy);
                    let t = tile(gx, gy);
                    exp[i] = self.graph.add(t, TaskKind::Vector { op: VectorOp::Exp, elems: s * s }, [max_ready[i]]);
                    rowsum[i] = self.graph.add(t, TaskKind::Vector { op: VectorOp::RowSum, elems: s * s }, [exp[i]]);
                }
            }
            let sum_ready = self.row_allreduce(&rowsum, CollectiveKind::ReduceSum, stat_bytes, origin);

            // Rescale the running output and accumulate P·V.
            for gy in 0..gy_n {
                for gx in 0..gx_n {
                    let i = idx(gx, gy);
                    let t = tile(gx, gy);
                    let mut deps = vec![sum_ready[i]];
                    if j == 0 {
                        deps.extend(st.o_free[i]);
                    }
                    let rescale =
                        self.graph.add(t, TaskKind::Vector { op: VectorOp::ScaleAccumulate, elems: s * d }, deps);
                    let pv = self.graph.add(t, TaskKind::Gemm { m: s, k: s, n: d }, [rescale, exp[i], v_ready[gx]]);
                    st.qk[i].push(qk[i]);
                    st.pv[i].push(pv);
                    last_qk[i] = qk[i];
                    last_pv[i] = pv;
                }
            }
        }

        // Normalize, reduce partial outputs onto the west edge and store.
        for gy in 0..gy_n {
            let norms: Vec<TaskId> = (0..gx_n)
                .map(|gx| {
                    self.graph.add(
                        tile(gx, gy),
                        TaskKind::Vector { op: VectorOp::Elementwise, elems: s * d },
                        [last_pv[idx(gx, gy)]],
                    )
                })
                .collect();
            let root = tile(0, gy);
            let reduced = if gx_n > 1 {
                let spec = CollectiveSpec::reduce(CollectiveKind::ReduceSum, Axis::Row, root, gx_n as u32 - 1, slice_bytes);
                Some(self.collective(spec, norms.clone()))
            } else {
                None
            };
            let ch = self.row_channel(root);
            let store = self.graph.add(
                root,
                TaskKind::HbmStore { bytes: slice_bytes, channel: ch },
                [reduced.unwrap_or(norms[0])],
            );
            for gx in 0..gx_n {
                let i = idx(gx, gy);
                st.o_free[i] = Some(if gx == 0 { store } else { reduced.expect("reduce exists when gx > 0") });
                st.q_free[i] = Some(last_qk[i]);
            }
        }
    }

    /// Row-wise reduce to the west edge followed by a row multicast back.
    /// Returns, per tile, the task after which the combined statistic is
    /// available locally.
    fn row_allreduce(&mut self, local: &[TaskId], kind: CollectiveKind, bytes: u64, origin: TileCoord) -> Vec<TaskId> {
        let gx_n = self.slice.group.gx as usize;
        if gx_n == 1 {
            return local.to_vec();
        }
        let gy_n = self.slice.group.gy as usize;
        let mut out = vec![0; local.len()];
        for gy in 0..gy_n {
            let row = &local[gy * gx_n..(gy + 1) * gx_n];
            let root = TileCoord::new(origin.x, origin.y + gy as u32);
            let span = gx_n as u32 - 1;
            let red = self.collective(CollectiveSpec::reduce(kind, Axis::Row, root, span, bytes), row.to_vec());
            let mc = self.collective(CollectiveSpec::multicast(Axis::Row, root, span, bytes), vec![red]);
            out[gy * gx_n..(gy + 1) * gx_n].fill(mc);
        }
        out
    }
}
