//! Browser bindings. Each export takes plain numbers/strings and returns a
//! JSON document; failures surface as JS exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use flatsim::analytics::{fa_io_bytes, flat_io_bytes, run_point, Metrics};
use flatsim::arch::{MhaLayer, Preset};
use flatsim::dataflow::{DataflowKind, GroupShape, PlanOptions};
use flatsim::noc::{collective_latency, Axis, CollectiveMode, CollectiveSpec, TileCoord};

#[derive(Serialize)]
struct IoRow {
    tiles: u64,
    flat_bytes: u64,
    ratio: f64,
    ratio_text: String,
}

#[derive(Serialize)]
struct IoTable {
    fa_bytes: u64,
    rows: Vec<IoRow>,
}

pub fn io_model_json(seq: u64, dim: u64, batch: u64, heads: u64, block: u64) -> Result<String, String> {
    let layer = MhaLayer::new(batch, heads, seq, dim).map_err(|e| e.to_string())?;
    let fa = fa_io_bytes(&layer, block).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for side in [1u64, 2, 4, 8, 16, 32] {
        let Ok(flat) = flat_io_bytes(&layer, block, side * side) else { break };
        let r = flat.ratio_vs_baseline.expect("flat model carries a ratio");
        rows.push(IoRow { tiles: side * side, flat_bytes: flat.total_bytes, ratio: r.value(), ratio_text: format!("{}/{}", r.num, r.den) });
    }
    serde_json::to_string(&IoTable { fa_bytes: fa.total_bytes, rows }).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Latency {
    software: u64,
    hardware: u64,
    ratio: f64,
}

pub fn collective_latency_json(
    payload_bytes: u64,
    receivers: u32,
    link_bytes_per_cycle: u64,
    l1_to_router: u64,
    router_hop: u64,
) -> Result<String, String> {
    let mut cfg = Preset::Table1.config();
    cfg.noc_link_bytes_per_cycle = link_bytes_per_cycle;
    cfg.l1_to_router_cycles = l1_to_router;
    cfg.router_hop_cycles = router_hop;
    if link_bytes_per_cycle == 0 {
        return Err("link bandwidth must be positive".into());
    }
    let spec = CollectiveSpec::multicast(Axis::Row, TileCoord::new(0, 0), receivers, payload_bytes);
    let sw = collective_latency(&spec, CollectiveMode::Software, &cfg).map_err(|e| e.to_string())?;
    let hw = collective_latency(&spec, CollectiveMode::Hardware, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string(&Latency { software: sw, hardware: hw, ratio: sw as f64 / hw as f64 }).map_err(|e| e.to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_layer_json(
    preset: &str,
    dataflow: &str,
    group: &str,
    seq: u64,
    dim: u64,
    batch: u64,
    heads: u64,
) -> Result<String, String> {
    let cfg = Preset::from_name(preset).ok_or_else(|| format!("unknown preset `{preset}`"))?.config();
    let kind: DataflowKind = dataflow.parse()?;
    let group: GroupShape = group.parse()?;
    let layer = MhaLayer::new(batch, heads, seq, dim).map_err(|e| e.to_string())?;
    let m: Metrics = run_point(&cfg, &layer, kind, group, PlanOptions::default()).map_err(|e| e.to_string())?;
    serde_json::to_string(&m).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

/// Closed-form FA vs Flat HBM traffic for square groups up to 32×32.
#[wasm_bindgen(js_name = ioModel)]
pub fn io_model(seq: u32, dim: u32, batch: u32, heads: u32, block: u32) -> Result<String, JsError> {
    js(io_model_json(seq.into(), dim.into(), batch.into(), heads.into(), block.into()))
}

/// Software vs hardware multicast latency along a row.
#[wasm_bindgen(js_name = collectiveLatency)]
pub fn collective_latency_js(
    payload_bytes: u32,
    receivers: u32,
    link_bytes_per_cycle: u32,
    l1_to_router: u32,
    router_hop: u32,
) -> Result<String, JsError> {
    js(collective_latency_json(
        payload_bytes.into(),
        receivers,
        link_bytes_per_cycle.into(),
        l1_to_router.into(),
        router_hop.into(),
    ))
}

/// Plan and simulate one layer on a built-in architecture.
#[wasm_bindgen(js_name = simulateLayer)]
pub fn simulate_layer(
    preset: &str,
    dataflow: &str,
    group: &str,
    seq: u32,
    dim: u32,
    batch: u32,
    heads: u32,
) -> Result<String, JsError> {
    js(simulate_layer_json(preset, dataflow, group, seq.into(), dim.into(), batch.into(), heads.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn io_table_has_paper_ratio() {
        let v: serde_json::Value = serde_json::from_str(&io_model_json(4096, 128, 2, 32, 128).unwrap()).unwrap();
        let row = v["rows"].as_array().unwrap().iter().find(|r| r["tiles"] == 64).unwrap();
        assert_eq!(row["ratio_text"], "33/5");
        assert_eq!(v["rows"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn latency_example() {
        let v: serde_json::Value = serde_json::from_str(&collective_latency_json(16384, 7, 128, 10, 4).unwrap()).unwrap();
        assert_eq!(v["software"], 1148);
        assert_eq!(v["hardware"], 176);
        assert!(collective_latency_json(16384, 7, 0, 10, 4).is_err());
    }

    #[test]
    fn simulate_small_layer() {
        let v: serde_json::Value =
            serde_json::from_str(&simulate_layer_json("table1", "flatasyn", "8x8", 512, 64, 1, 8).unwrap()).unwrap();
        assert!(v["cycles"].as_u64().unwrap() > 0);
        assert!(simulate_layer_json("nope", "fa2", "1x1", 512, 64, 1, 8).unwrap_err().contains("preset"));
        assert!(simulate_layer_json("table1", "fa2", "1x1", 500, 64, 1, 8).is_err());
    }
}
