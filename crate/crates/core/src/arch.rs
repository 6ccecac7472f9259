//! Accelerator parameterization and uncontended timing models.
//!
//! An [`ArchConfig`] describes a 2D mesh of tiles. Each tile has a matrix
//! engine (a `ce_rows x ce_cols` compute-element array), a vector engine with
//! a separate exponential unit, a DMA engine and an L1 scratchpad. HBM
//! channels sit on the west and south mesh edges.
//!
//! Configs are TOML documents with four sections:
//!
//! ```toml
//! name = "table1"          # optional
//! [mesh]
//! x = 32
//! y = 32
//! [noc]
//! link_bytes_per_cycle = 128
//! l1_to_router_cycles = 10
//! router_hop_cycles = 4
//! hw_collectives = true
//! [hbm]
//! channels_west = 16
//! channels_south = 16
//! channel_bytes_per_cycle = 64
//! [tile]
//! ce_rows = 32
//! ce_cols = 16
//! vector_elems_per_cycle = 64
//! exp_elems_per_cycle = 16
//! l1_bytes = 393216
//! l1_bytes_per_cycle = 512
//! ```
//!
//! Optional keys: `noc.reduce_hop_cycles` (0), `hbm.access_latency_cycles`
//! (200), `tile.gemm_fill_cycles` (64), `tile.sync_overhead_cycles` (50).
//! Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Cycles;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub name: Option<String>,
    pub mesh_x: u32,
    pub mesh_y: u32,
    /// β: bytes per cycle per NoC link.
    pub noc_link_bytes_per_cycle: u64,
    /// L_d: L1-to-router latency.
    pub l1_to_router_cycles: u64,
    /// L_r: router-to-router latency per hop.
    pub router_hop_cycles: u64,
    /// Extra per-hop combine latency for in-network reductions.
    pub hw_reduce_hop_cycles: u64,
    pub hw_collectives: bool,
    pub hbm_channels_west: u32,
    pub hbm_channels_south: u32,
    pub hbm_channel_bytes_per_cycle: u64,
    pub hbm_access_latency_cycles: u64,
    pub ce_rows: u32,
    pub ce_cols: u32,
    pub gemm_fill_cycles: u64,
    pub vector_elems_per_cycle: u64,
    pub exp_elems_per_cycle: u64,
    pub l1_bytes: u64,
    pub l1_bytes_per_cycle: u64,
    pub sync_overhead_cycles: u64,
}

/// Vector-engine operation classes. `Exp` runs on the exponential unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorOp {
    Elementwise,
    RowMax,
    RowSum,
    Exp,
    ScaleAccumulate,
}

impl VectorOp {
    pub fn as_str(self) -> &'static str {
        match self {
            VectorOp::Elementwise => "elementwise",
            VectorOp::RowMax => "rowmax",
            VectorOp::RowSum => "rowsum",
            VectorOp::Exp => "exp",
            VectorOp::ScaleAccumulate => "scale_accumulate",
        }
    }
}

/// Identifies one HBM channel. West channels are numbered first
/// (`0..channels_west`), south channels follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub u32);

impl ArchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_with_env(text, std::iter::empty::<(String, String)>())
    }

    /// Parses a config and applies `SECTION__FIELD=value` overrides
    /// (e.g. `HBM__CHANNELS_WEST=8`). Variables that do not name one of the
    /// four sections are ignored; unknown fields inside a known section are
    /// rejected like unknown keys in the document.
    pub fn from_toml_str_with_env<I, K, V>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::config("<document>", e.message().to_string()))?;
        apply_env_overrides(&mut table, env)?;
        let doc: ArchDoc = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "<document>".to_string() } else { path }, e.inner().to_string())
        })?;
        let cfg = doc.into_config();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&ArchDoc::from_config(self)).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, u64); 14] = [
            ("mesh.x", self.mesh_x.into()),
            ("mesh.y", self.mesh_y.into()),
            ("noc.link_bytes_per_cycle", self.noc_link_bytes_per_cycle),
            ("noc.l1_to_router_cycles", self.l1_to_router_cycles),
            ("noc.router_hop_cycles", self.router_hop_cycles),
            ("hbm.channel_bytes_per_cycle", self.hbm_channel_bytes_per_cycle),
            ("hbm.access_latency_cycles", self.hbm_access_latency_cycles),
            ("tile.ce_rows", self.ce_rows.into()),
            ("tile.ce_cols", self.ce_cols.into()),
            ("tile.vector_elems_per_cycle", self.vector_elems_per_cycle),
            ("tile.exp_elems_per_cycle", self.exp_elems_per_cycle),
            ("tile.l1_bytes", self.l1_bytes),
            ("tile.l1_bytes_per_cycle", self.l1_bytes_per_cycle),
            ("hbm.channels", (self.hbm_channels_west + self.hbm_channels_south).into()),
        ];
        for (path, v) in positive {
            if v == 0 {
                return Err(Error::config(path, "must be strictly positive"));
            }
        }
        if self.hbm_channels_west > self.mesh_y {
            return Err(Error::config(
                "hbm.channels_west",
                format!("{} channels exceed the {} west-edge tiles", self.hbm_channels_west, self.mesh_y),
            ));
        }
        if self.hbm_channels_south > self.mesh_x {
            return Err(Error::config(
                "hbm.channels_south",
                format!("{} channels exceed the {} south-edge tiles", self.hbm_channels_south, self.mesh_x),
            ));
        }
        Ok(())
    }

    pub fn tiles(&self) -> u32 {
        self.mesh_x * self.mesh_y
    }

    pub fn hbm_channels(&self) -> u32 {
        self.hbm_channels_west + self.hbm_channels_south
    }

    /// Peak matrix-engine flops per cycle of one tile (one FMA = 2 flops).
    pub fn peak_flops_per_cycle(&self) -> u64 {
        2 * u64::from(self.ce_rows) * u64::from(self.ce_cols)
    }

    pub fn total_peak_flops_per_cycle(&self) -> u64 {
        self.peak_flops_per_cycle() * u64::from(self.tiles())
    }

    pub fn total_l1_bytes(&self) -> u64 {
        self.l1_bytes * u64::from(self.tiles())
    }

    pub fn peak_hbm_bytes_per_cycle(&self) -> u64 {
        self.hbm_channel_bytes_per_cycle * u64::from(self.hbm_channels())
    }

    /// Output-stationary block scan over the CE array plus pipeline fill.
    pub fn gemm_cycles(&self, m: u64, k: u64, n: u64) -> Cycles {
        m.div_ceil(self.ce_rows.into()) * n.div_ceil(self.ce_cols.into()) * k + self.gemm_fill_cycles
    }

    pub fn vector_cycles(&self, op: VectorOp, n_elems: u64) -> Cycles {
        let rate = match op {
            VectorOp::Exp => self.exp_elems_per_cycle,
            _ => self.vector_elems_per_cycle,
        };
        n_elems.div_ceil(rate)
    }

    /// Channel occupancy of a transfer, excluding access latency.
    pub fn hbm_transfer_cycles(&self, bytes: u64) -> Cycles {
        bytes.div_ceil(self.hbm_channel_bytes_per_cycle)
    }

    pub fn hbm_request_time_uncontended(&self, bytes: u64) -> Cycles {
        self.hbm_access_latency_cycles + self.hbm_transfer_cycles(bytes)
    }

    pub fn west_channel(&self, row: u32) -> Option<ChannelId> {
        (self.hbm_channels_west > 0)
            .then(|| ChannelId((u64::from(row) * u64::from(self.hbm_channels_west) / u64::from(self.mesh_y)) as u32))
    }

    pub fn south_channel(&self, col: u32) -> Option<ChannelId> {
        (self.hbm_channels_south > 0).then(|| {
            ChannelId(
                self.hbm_channels_west
                    + (u64::from(col) * u64::from(self.hbm_channels_south) / u64::from(self.mesh_x)) as u32,
            )
        })
    }

    /// Channel for tiles that do not sit on a group edge: tiles on even
    /// checkerboard squares go west, odd ones south, which spreads a fully
    /// populated mesh evenly over both edges.
    pub fn home_channel(&self, x: u32, y: u32) -> ChannelId {
        let west = self.west_channel(y);
        let south = self.south_channel(x);
        if (x + y).is_multiple_of(2) {
            west.or(south)
        } else {
            south.or(west)
        }
        .expect("validated config has at least one channel")
    }

    /// Channel serving row-indexed traffic (Q loads, O stores) of a tile.
    pub fn row_channel(&self, x: u32, y: u32) -> ChannelId {
        self.west_channel(y).unwrap_or_else(|| self.home_channel(x, y))
    }

    /// Channel serving column-indexed traffic (K and V loads) of a tile.
    pub fn column_channel(&self, x: u32, y: u32) -> ChannelId {
        self.south_channel(x).unwrap_or_else(|| self.home_channel(x, y))
    }

    pub fn channel_name(&self, ch: ChannelId) -> String {
        if ch.0 < self.hbm_channels_west {
            format!("west{}", ch.0)
        } else {
            format!("south{}", ch.0 - self.hbm_channels_west)
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}x{}", self.mesh_x, self.mesh_y))
    }
}

fn apply_env_overrides<I, K, V>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    const SECTIONS: [&str; 4] = ["mesh", "noc", "hbm", "tile"];
    let mut overrides: Vec<(String, String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| {
            let (section, field) = k.as_ref().split_once("__")?;
            let section = section.to_ascii_lowercase();
            SECTIONS
                .contains(&section.as_str())
                .then(|| (section, field.to_ascii_lowercase(), v.as_ref().to_string()))
        })
        .collect();
    overrides.sort();
    for (section, field, raw) in overrides {
        let value = parse_override(&raw);
        let entry = table.entry(section.clone()).or_insert_with(|| toml::Value::Table(Default::default()));
        match entry {
            toml::Value::Table(t) => {
                t.insert(field, value);
            }
            _ => return Err(Error::config(section, "expected a table")),
        }
    }
    Ok(())
}

fn parse_override(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else {
        toml::Value::String(raw.to_string())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    mesh: MeshDoc,
    noc: NocDoc,
    hbm: HbmDoc,
    tile: TileDoc,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshDoc {
    x: u32,
    y: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NocDoc {
    link_bytes_per_cycle: u64,
    l1_to_router_cycles: u64,
    router_hop_cycles: u64,
    hw_collectives: bool,
    #[serde(default)]
    reduce_hop_cycles: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HbmDoc {
    channels_west: u32,
    channels_south: u32,
    channel_bytes_per_cycle: u64,
    #[serde(default = "default_hbm_latency")]
    access_latency_cycles: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TileDoc {
    ce_rows: u32,
    ce_cols: u32,
    #[serde(default = "default_gemm_fill")]
    gemm_fill_cycles: u64,
    vector_elems_per_cycle: u64,
    exp_elems_per_cycle: u64,
    l1_bytes: u64,
    l1_bytes_per_cycle: u64,
    #[serde(default = "default_sync_overhead")]
    sync_overhead_cycles: u64,
}

fn default_hbm_latency() -> u64 {
    200
}
fn default_gemm_fill() -> u64 {
    64
}
fn default_sync_overhead() -> u64 {
    50
}

impl ArchDoc {
    fn into_config(self) -> ArchConfig {
        ArchConfig {
            name: self.name,
            mesh_x: self.mesh.x,
            mesh_y: self.mesh.y,
            noc_link_bytes_per_cycle: self.noc.link_bytes_per_cycle,
            l1_to_router_cycles: self.noc.l1_to_router_cycles,
            router_hop_cycles: self.noc.router_hop_cycles,
            hw_reduce_hop_cycles: self.noc.reduce_hop_cycles,
            hw_collectives: self.noc.hw_collectives,
            hbm_channels_west: self.hbm.channels_west,
            hbm_channels_south: self.hbm.channels_south,
            hbm_channel_bytes_per_cycle: self.hbm.channel_bytes_per_cycle,
            hbm_access_latency_cycles: self.hbm.access_latency_cycles,
            ce_rows: self.tile.ce_rows,
            ce_cols: self.tile.ce_cols,
            gemm_fill_cycles: self.tile.gemm_fill_cycles,
            vector_elems_per_cycle: self.tile.vector_elems_per_cycle,
            exp_elems_per_cycle: self.tile.exp_elems_per_cycle,
            l1_bytes: self.tile.l1_bytes,
            l1_bytes_per_cycle: self.tile.l1_bytes_per_cycle,
            sync_overhead_cycles: self.tile.sync_overhead_cycles,
        }
    }

    fn from_config(c: &ArchConfig) -> Self {
        ArchDoc {
            name: c.name.clone(),
            mesh: MeshDoc { x: c.mesh_x, y: c.mesh_y },
            noc: NocDoc {
                link_bytes_per_cycle: c.noc_link_bytes_per_cycle,
                l1_to_router_cycles: c.l1_to_router_cycles,
                router_hop_cycles: c.router_hop_cycles,
                hw_collectives: c.hw_collectives,
                reduce_hop_cycles: c.hw_reduce_hop_cycles,
            },
            hbm: HbmDoc {
                channels_west: c.hbm_channels_west,
                channels_south: c.hbm_channels_south,
                channel_bytes_per_cycle: c.hbm_channel_bytes_per_cycle,
                access_latency_cycles: c.hbm_access_latency_cycles,
            },
            tile: TileDoc {
                ce_rows: c.ce_rows,
                ce_cols: c.ce_cols,
                gemm_fill_cycles: c.gemm_fill_cycles,
                vector_elems_per_cycle: c.vector_elems_per_cycle,
                exp_elems_per_cycle: c.exp_elems_per_cycle,
                l1_bytes: c.l1_bytes,
                l1_bytes_per_cycle: c.l1_bytes_per_cycle,
                sync_overhead_cycles: c.sync_overhead_cycles,
            },
        }
    }
}

/// One multi-head attention layer (prefill): batch B, heads H, sequence
/// length S and head dimension D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MhaLayer {
    pub batch: u64,
    pub heads: u64,
    pub seq_len: u64,
    pub head_dim: u64,
    pub bytes_per_elem: u64,
}

impl MhaLayer {
    /// FP16 layer.
    pub fn new(batch: u64, heads: u64, seq_len: u64, head_dim: u64) -> Result<Self> {
        Self::with_elem_bytes(batch, heads, seq_len, head_dim, 2)
    }

    pub fn with_elem_bytes(batch: u64, heads: u64, seq_len: u64, head_dim: u64, bytes_per_elem: u64) -> Result<Self> {
        let layer = MhaLayer { batch, heads, seq_len, head_dim, bytes_per_elem };
        layer.validate()?;
        Ok(layer)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("batch", self.batch),
            ("heads", self.heads),
            ("seq_len", self.seq_len),
            ("head_dim", self.head_dim),
            ("bytes_per_elem", self.bytes_per_elem),
        ] {
            if v == 0 {
                return Err(Error::config(format!("layer.{name}"), "must be strictly positive"));
            }
        }
        Ok(())
    }

    /// Bytes of one S×D tensor of one head.
    pub fn head_tensor_bytes(&self) -> u64 {
        self.seq_len * self.head_dim * self.bytes_per_elem
    }

    /// Flops of the two attention GEMMs: 4·B·H·S²·D.
    pub fn flops(&self) -> u64 {
        4 * self.batch * self.heads * self.seq_len * self.seq_len * self.head_dim
    }
}

/// Built-in architecture presets; the same documents live under `configs/`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// 32x32 tiles, 16+16 HBM channels, 32x16 CE arrays.
    Table1,
    Fabric32,
    Fabric16,
    Fabric8,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Table1, Preset::Fabric32, Preset::Fabric16, Preset::Fabric8];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Table1 => "table1",
            Preset::Fabric32 => "fabric32x32",
            Preset::Fabric16 => "fabric16x16",
            Preset::Fabric8 => "fabric8x8",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn document(self) -> &'static str {
        match self {
            Preset::Table1 => include_str!("../../../configs/table1.toml"),
            Preset::Fabric32 => include_str!("../../../configs/fabric32x32.toml"),
            Preset::Fabric16 => include_str!("../../../configs/fabric16x16.toml"),
            Preset::Fabric8 => include_str!("../../../configs/fabric8x8.toml"),
        }
    }

    pub fn config(self) -> ArchConfig {
        ArchConfig::from_toml_str(self.document()).expect("preset documents are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[mesh]
x = 1
y = 1
[noc]
link_bytes_per_cycle = 1
l1_to_router_cycles = 1
router_hop_cycles = 1
hw_collectives = false
[hbm]
channels_west = 1
channels_south = 0
channel_bytes_per_cycle = 1
[tile]
ce_rows = 1
ce_cols = 1
vector_elems_per_cycle = 1
exp_elems_per_cycle = 1
l1_bytes = 1
l1_bytes_per_cycle = 1
"#;

    fn table1() -> ArchConfig {
        Preset::Table1.config()
    }

    #[test]
    fn table1_peak_matches_one_teraflop_per_tile() {
        let c = table1();
        assert_eq!((c.mesh_x, c.mesh_y), (32, 32));
        assert_eq!(c.peak_flops_per_cycle(), 1024);
        assert_eq!(c.total_peak_flops_per_cycle(), 1024 * 1024);
        assert_eq!(c.peak_hbm_bytes_per_cycle(), 2048);
        assert_eq!(c.total_l1_bytes(), 384 * 1024 * 1024);
    }

    #[test]
    fn single_tile_config_is_valid() {
        let c = ArchConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.tiles(), 1);
        assert_eq!(c.hbm_access_latency_cycles, 200);
        assert_eq!(c.gemm_fill_cycles, 64);
        assert_eq!(c.home_channel(0, 0), ChannelId(0));
    }

    #[test]
    fn zero_mesh_names_field() {
        let err = ArchConfig::from_toml_str(&MINIMAL.replace("x = 1", "x = 0")).unwrap_err();
        assert!(err.to_string().contains("mesh.x"), "{err}");
    }

    #[test]
    fn missing_field_names_section() {
        let err = ArchConfig::from_toml_str(&MINIMAL.replace("ce_cols = 1\n", "")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tile") && msg.contains("ce_cols"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ArchConfig::from_toml_str(&MINIMAL.replace("[mesh]", "[mesh]\nz = 3")).unwrap_err();
        assert!(err.to_string().contains("mesh"), "{err}");
    }

    #[test]
    fn negative_value_rejected_with_path() {
        let err = ArchConfig::from_toml_str(&MINIMAL.replace("router_hop_cycles = 1", "router_hop_cycles = -4"))
            .unwrap_err();
        assert!(err.to_string().contains("noc.router_hop_cycles"), "{err}");
    }

    #[test]
    fn channels_exceeding_edge_rejected() {
        let err = ArchConfig::from_toml_str(&MINIMAL.replace("channels_west = 1", "channels_west = 2")).unwrap_err();
        assert!(err.to_string().contains("hbm.channels_west"), "{err}");
    }

    #[test]
    fn env_override_applies() {
        let c = ArchConfig::from_toml_str_with_env(
            Preset::Table1.document(),
            [("HBM__CHANNELS_WEST", "8"), ("TILE__GEMM_FILL_CYCLES", "0"), ("PATH", "/bin")],
        )
        .unwrap();
        assert_eq!(c.hbm_channels_west, 8);
        assert_eq!(c.gemm_fill_cycles, 0);
        let err = ArchConfig::from_toml_str_with_env(Preset::Table1.document(), [("MESH__X", "0")]).unwrap_err();
        assert!(err.to_string().contains("mesh.x"));
    }

    #[test]
    fn gemm_examples() {
        let mut c = table1();
        c.gemm_fill_cycles = 0;
        assert_eq!(c.gemm_cycles(32, 128, 16), 128);
        assert_eq!(2 * 32 * 128 * 16 / c.gemm_cycles(32, 128, 16), 1024);
        assert_eq!(c.gemm_cycles(1, 1, 1), 1);
        c.gemm_fill_cycles = 16;
        assert_eq!(c.gemm_cycles(64, 128, 32), 528);
    }

    #[test]
    fn gemm_efficiency_approaches_peak() {
        let mut c = table1();
        c.gemm_fill_cycles = 32;
        let k = 100 * c.gemm_fill_cycles;
        let (m, n) = (64, 48);
        let rate = (2 * m * k * n) as f64 / c.gemm_cycles(m, k, n) as f64;
        let peak = c.peak_flops_per_cycle() as f64;
        assert!((peak - rate) / peak < 0.01, "{rate} vs {peak}");
    }

    #[test]
    fn vector_examples() {
        let mut c = table1();
        c.exp_elems_per_cycle = 16;
        c.vector_elems_per_cycle = 64;
        assert_eq!(c.vector_cycles(VectorOp::Exp, 4096), 256);
        assert_eq!(c.vector_cycles(VectorOp::Elementwise, 0), 0);
        assert_eq!(c.vector_cycles(VectorOp::RowMax, 128 * 128), 256);
    }

    #[test]
    fn hbm_examples() {
        let c = table1();
        assert_eq!(c.hbm_request_time_uncontended(16384), 456);
        assert_eq!(c.hbm_request_time_uncontended(0), 200);
        assert_eq!(c.hbm_request_time_uncontended(64), 201);
    }

    #[test]
    fn layer_validation() {
        let l = MhaLayer::new(2, 32, 4096, 128).unwrap();
        assert_eq!(l.flops(), 4 * 2 * 32 * 4096 * 4096 * 128);
        assert_eq!(l.head_tensor_bytes(), 4096 * 128 * 2);
        let err = MhaLayer::new(2, 0, 4096, 128).unwrap_err();
        assert!(err.to_string().contains("layer.heads"));
    }

    #[test]
    fn presets_round_trip() {
        for p in Preset::ALL {
            let c = p.config();
            let again = ArchConfig::from_toml_str(&c.to_toml_string()).unwrap();
            assert_eq!(c, again, "{}", p.name());
        }
    }

    #[test]
    fn channel_mapping_balances_full_mesh() {
        let c = table1();
        let mut per = vec![0u32; c.hbm_channels() as usize];
        for y in 0..c.mesh_y {
            for x in 0..c.mesh_x {
                per[c.home_channel(x, y).0 as usize] += 1;
            }
        }
        assert!(per.iter().all(|&n| n == 32), "{per:?}");
        assert_eq!(c.channel_name(c.south_channel(31).unwrap()), "south15");
        assert_eq!(c.channel_name(c.west_channel(0).unwrap()), "west0");
    }
}
