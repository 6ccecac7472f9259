//! Numerical replay of the tiled schedules in `f64`.
//!
//! Each simulated tile keeps only its own slices: a running row maximum,
//! a running denominator and a partial output. Cross-tile statistics are
//! combined exactly the way the planned reductions combine them, so an
//! error here points at the schedule, not at the timing model.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GroupShape, SlicePlan};
use crate::error::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Q, K and V of one head, each `S × D`.
#[derive(Debug, Clone)]
pub struct HeadTensors {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl HeadTensors {
    fn check(&self) -> Result<(usize, usize)> {
        let (s, d) = (self.q.rows, self.q.cols);
        for (name, m) in [("k", &self.k), ("v", &self.v)] {
            if m.rows != s || m.cols != d {
                return Err(Error::Shape(format!("{name} is {}x{}, q is {s}x{d}", m.rows, m.cols)));
            }
        }
        if s == 0 || d == 0 {
            return Err(Error::Shape("empty head".into()));
        }
        Ok((s, d))
    }
}

/// Standard-normal Q, K, V for `heads` heads, generated head by head in
/// Q, K, V order from one seeded stream.
pub fn random_heads(heads: usize, seq_len: usize, head_dim: usize, seed: u64) -> Vec<HeadTensors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Matrix::from_fn(seq_len, head_dim, |_, _| StandardNormal.sample(&mut rng));
    (0..heads).map(|_| HeadTensors { q: draw(), k: draw(), v: draw() }).collect()
}

/// Row-wise numerically stable softmax.
pub fn reference_softmax(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out
}

/// `softmax(scale · Q Kᵀ) V`, materializing the full score matrix.
pub fn reference_attention(q: &Matrix, k: &Matrix, v: &Matrix, scale: f64) -> Matrix {
    let scores = Matrix::from_fn(q.rows, k.rows, |i, j| scale * dot(q.row(i), k.row(j)));
    let p = reference_softmax(&scores);
    let mut o = Matrix::zeros(q.rows, v.cols);
    for i in 0..q.rows {
        for j in 0..k.rows {
            let w = p.get(i, j);
            for (acc, x) in o.row_mut(i).iter_mut().zip(v.row(j)) {
                *acc += w * x;
            }
        }
    }
    o
}

/// `max |a − b| / max |b|` (absolute error when `b` is all zeros).
pub fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols), "shape mismatch");
    let diff = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.data.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Tiling of one replay: a `gx × gy` group with per-tile slice edge
/// `slice`, and how many heads a group works on at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalSchedule {
    pub group: GroupShape,
    pub slice: usize,
    pub streams: usize,
}

impl FunctionalSchedule {
    /// One tile per block (the FlashAttention-2 tiling).
    pub fn single_tile(slice: usize) -> Self {
        FunctionalSchedule { group: GroupShape::SINGLE, slice, streams: 1 }
    }

    pub fn grouped(group: GroupShape, slice: usize) -> Self {
        FunctionalSchedule { group, slice, streams: 1 }
    }

    pub fn from_slice_plan(p: &SlicePlan) -> Self {
        FunctionalSchedule { group: p.group, slice: p.slice as usize, streams: p.streams as usize }
    }

    fn check(&self) -> Result<()> {
        if self.slice == 0 || self.group.gx == 0 || self.group.gy == 0 || self.streams == 0 {
            return Err(Error::Shape(format!("degenerate schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FunctionalOptions {
    /// Score scale; `None` means `1/√D`.
    pub scale: Option<f64>,
    /// Compare each running row maximum against a brute-force maximum of
    /// all scores seen so far.
    pub check_invariants: bool,
    /// Drop the output rescale when the running maximum grows.
    #[doc(hidden)]
    pub corrupt_rescale: bool,
}

/// Replay one head under `sched`.
pub fn execute_functional(head: &HeadTensors, sched: &FunctionalSchedule, opts: &FunctionalOptions) -> Result<Matrix> {
    let mut out = execute_functional_heads(std::slice::from_ref(head), sched, opts)?;
    Ok(out.pop().expect("one head in, one head out"))
}

/// Replay several heads. With two streams, consecutive heads are paired and
/// their inner iterations interleaved step by step on the same group.
pub fn execute_functional_heads(
    heads: &[HeadTensors],
    sched: &FunctionalSchedule,
    opts: &FunctionalOptions,
) -> Result<Vec<Matrix>> {
    sched.check()?;
    let mut out = Vec::with_capacity(heads.len());
    for chunk in heads.chunks(sched.streams) {
        let mut runs = chunk.iter().map(|h| HeadRun::new(h, sched, opts)).collect::<Result<Vec<_>>>()?;
        let mut live = true;
        while live {
            live = false;
            for r in runs.iter_mut() {
                live |= r.step()?;
            }
        }
        out.extend(runs.into_iter().map(HeadRun::finish));
    }
    Ok(out)
}

/// State of one tile for the current row block.
struct TileState {
    rows: std::ops::Range<usize>,
    /// Partial output, `rows.len() × D`.
    o: Matrix,
}

/// One head progressing block by block.
struct HeadRun<'a> {
    head: &'a HeadTensors,
    sched: FunctionalSchedule,
    opts: FunctionalOptions,
    scale: f64,
    seq: usize,
    dim: usize,
    row_block: usize,
    col_block: usize,
    tiles: Vec<TileState>,
    /// Running max and denominator per row of the row block, shared by the
    /// tiles of one group row after each reduction.
    m: Vec<f64>,
    l: Vec<f64>,
    out: Matrix,
}

impl<'a> HeadRun<'a> {
    fn new(head: &'a HeadTensors, sched: &FunctionalSchedule, opts: &FunctionalOptions) -> Result<Self> {
        let (seq, dim) = head.check()?;
        let scale = opts.scale.unwrap_or(1.0 / (dim as f64).sqrt());
        let mut run = HeadRun {
            head,
            sched: *sched,
            opts: *opts,
            scale,
            seq,
            dim,
            row_block: 0,
            col_block: 0,
            tiles: Vec::new(),
            m: Vec::new(),
            l: Vec::new(),
            out: Matrix::zeros(seq, dim),
        };
        run.start_row_block();
        Ok(run)
    }

    fn rows_per_block(&self) -> usize {
        self.sched.group.gy as usize * self.sched.slice
    }

    fn cols_per_block(&self) -> usize {
        self.sched.group.gx as usize * self.sched.slice
    }

    fn start_row_block(&mut self) {
        let s = self.sched.slice;
        let base = self.row_block * self.rows_per_block();
        let (gx, gy) = (self.sched.group.gx as usize, self.sched.group.gy as usize);
        self.tiles.clear();
        for y in 0..gy {
            let lo = (base + y * s).min(self.seq);
            let hi = (lo + s).min(self.seq);
            for _ in 0..gx {
                self.tiles.push(TileState { rows: lo..hi, o: Matrix::zeros(hi - lo, self.dim) });
            }
        }
        let n = (base + self.rows_per_block()).min(self.seq) - base.min(self.seq);
        self.m = vec![f64::NEG_INFINITY; n];
        self.l = vec![0.0; n];
    }

    fn done(&self) -> bool {
        self.row_block * self.rows_per_block() >= self.seq
    }

    /// One inner iteration of the current row block. Returns false once
    /// every row block has been written back.
    fn step(&mut self) -> Result<bool> {
        if self.done() {
            return Ok(false);
        }
        let s = self.sched.slice;
        let gx = self.sched.group.gx as usize;
        let gy = self.sched.group.gy as usize;
        let base = self.row_block * self.rows_per_block();
        let col_base = self.col_block * self.cols_per_block();
        let q = &self.head.q;
        let k = &self.head.k;
        let v = &self.head.v;

        for y in 0..gy {
            let rows = self.tiles[y * gx].rows.clone();
            if rows.is_empty() {
                continue;
            }
            let cols: Vec<std::ops::Range<usize>> = (0..gx)
                .map(|x| {
                    let lo = (col_base + x * s).min(self.seq);
                    lo..(lo + s).min(self.seq)
                })
                .collect();

            // Local scores and local row maxima on every tile of the row.
            let scores: Vec<Matrix> = cols
                .iter()
                .map(|c| {
                    Matrix::from_fn(rows.len(), c.len(), |i, j| self.scale * dot(q.row(rows.start + i), k.row(c.start + j)))
                })
                .collect();
            for i in 0..rows.len() {
                let r = rows.start + i - base;
                // Max reduction across the row, then broadcast.
                let block_max = scores.iter().flat_map(|sc| sc.row(i).iter().copied()).fold(f64::NEG_INFINITY, f64::max);
                let m_old = self.m[r];
                let m_new = m_old.max(block_max);
                let alpha = if m_old == f64::NEG_INFINITY { 0.0 } else { (m_old - m_new).exp() };

                // Exponentials, local sums and the sum reduction.
                let mut block_sum = 0.0;
                for (x, sc) in scores.iter().enumerate() {
                    let p: Vec<f64> = sc.row(i).iter().map(|z| (z - m_new).exp()).collect();
                    block_sum += p.iter().sum::<f64>();
                    let o = self.tiles[y * gx + x].o.row_mut(i);
                    if !self.opts.corrupt_rescale {
                        o.iter_mut().for_each(|a| *a *= alpha);
                    }
                    for (j, pj) in p.iter().enumerate() {
                        for (a, b) in o.iter_mut().zip(v.row(cols[x].start + j)) {
                            *a += pj * b;
                        }
                    }
                }
                self.l[r] = self.l[r] * alpha + block_sum;
                self.m[r] = m_new;

                if self.opts.check_invariants {
                    let row = rows.start + i;
                    let seen = (col_base + self.cols_per_block()).min(self.seq);
                    let brute = (0..seen).map(|c| self.scale * dot(q.row(row), k.row(c))).fold(f64::NEG_INFINITY, f64::max);
                    if m_new != brute {
                        return Err(Error::Invariant(format!(
                            "row {row}: running max {m_new} after {seen} columns, expected {brute}"
                        )));
                    }
                }
            }
        }

        self.col_block += 1;
        if self.col_block * self.cols_per_block() >= self.seq {
            self.write_back();
            self.col_block = 0;
            self.row_block += 1;
            if !self.done() {
                self.start_row_block();
            }
        }
        Ok(true)
    }

    /// Normalize each partial output, then sum-reduce across the group row.
    fn write_back(&mut self) {
        let gx = self.sched.group.gx as usize;
        let base = self.row_block * self.rows_per_block();
        for row_tiles in self.tiles.chunks(gx) {
            let rows = row_tiles[0].rows.clone();
            for i in 0..rows.len() {
                let l = self.l[rows.start + i - base];
                let dst = self.out.row_mut(rows.start + i);
                for t in row_tiles {
                    for (d, a) in dst.iter_mut().zip(t.o.row(i)) {
                        *d += a / l;
                    }
                }
            }
        }
    }

    fn finish(self) -> Matrix {
        self.out
    }
}
