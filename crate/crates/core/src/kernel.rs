//! Vectorized FlashAttention kernels written purely in engine instructions.
//!
//! Three entry points share one per-(query, key-block) routine:
//!
//! * [`flash_vec`]: head dimension fits one register (`d <= vlen`);
//! * [`flash_vec_tiled`]: `d > vlen`, the head dimension is processed in
//!   `vlen`-wide chunks, and output chunks are either kept in registers
//!   (when `unroll` covers every chunk) or spilled to the output buffer
//!   inside the key-block loop;
//! * [`flash_vec_multiquery`]: `Br` query rows share each staged K/V tile,
//!   with per-row max and exponent sum kept in a small state buffer.
//!
//! The key-column block size `Bc` always equals `vlen`. Short tails in `N`,
//! `d` and `Br` run with a reduced active length.

use crate::engine::{ActiveLength, ExecStats, MemMut, MemRef, Operand, VReg, VectorEngine, NUM_VREGS};
use crate::error::{Error, Result};
use crate::exp_approx::{vexp, QuantSpec};
use crate::matrix::Matrix;
use crate::oracles::AttentionProblem;

/// Initial running maximum. Finite, so `oldmax - max` never becomes
/// `inf - inf`; its exponential clamps to the clip constant (approx mode) or
/// underflows to zero (exact mode) and multiplies an all-zero history.
pub const MAX_SENTINEL: f32 = -3.0e38;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExpMode {
    /// Library exponential applied lane-wise (reference mode).
    Exact,
    /// Bit-manipulation exponential.
    Approx,
}

impl std::fmt::Display for ExpMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExpMode::Exact => "exact",
            ExpMode::Approx => "approx",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub vlen: usize,
    /// Query rows processed per K/V tile.
    pub br: usize,
    /// Number of head-dimension chunks the kernel may keep register-resident.
    pub unroll: usize,
    pub exp_mode: ExpMode,
    pub scale_scores: bool,
    pub quant: QuantSpec,
}

impl KernelConfig {
    pub fn new(vlen: usize) -> Self {
        Self { vlen, br: 1, unroll: 1, exp_mode: ExpMode::Exact, scale_scores: false, quant: QuantSpec::default() }
    }

    pub fn with_br(mut self, br: usize) -> Self {
        self.br = br;
        self
    }

    pub fn with_unroll(mut self, unroll: usize) -> Self {
        self.unroll = unroll;
        self
    }

    pub fn with_exp(mut self, mode: ExpMode) -> Self {
        self.exp_mode = mode;
        self
    }

    pub fn with_scaling(mut self, on: bool) -> Self {
        self.scale_scores = on;
        self
    }

    /// Key-column block size; tied to the vector length.
    pub fn bc(&self) -> usize {
        self.vlen
    }

    /// Number of `vlen`-wide chunks covering head dimension `d`.
    pub fn chunks(&self, d: usize) -> usize {
        d.div_ceil(self.vlen)
    }

    /// Whether all output chunks stay in registers for head dimension `d`.
    pub fn outputs_resident(&self, d: usize) -> bool {
        self.unroll >= self.chunks(d)
    }

    /// Live vector registers needed by the per-row kernels for head
    /// dimension `d`, mask included.
    pub fn live_registers(&self, d: usize) -> usize {
        live_registers(self.outputs_resident(d), self.chunks(d))
    }

    fn validate(&self, p: &AttentionProblem, engine: &VectorEngine, resident: bool) -> Result<()> {
        if engine.vlen() != self.vlen {
            return Err(Error::Config(format!(
                "kernel vlen {} does not match engine vlen {}",
                self.vlen,
                engine.vlen()
            )));
        }
        if self.br == 0 {
            return Err(Error::Config("Br must be >= 1".into()));
        }
        if self.unroll == 0 {
            return Err(Error::Config("unroll must be >= 1".into()));
        }
        if self.scale_scores != p.scale_scores() {
            return Err(Error::Config("score scaling differs between problem and kernel config".into()));
        }
        let live = live_registers(resident, self.chunks(p.head_dim()));
        if live > NUM_VREGS {
            return Err(Error::Config(format!(
                "kernel needs {live} live vector registers (d = {}, vlen = {}, unroll = {}), only {NUM_VREGS} exist; lower unroll",
                p.head_dim(),
                self.vlen,
                self.unroll
            )));
        }
        Ok(())
    }
}

/// Fixed working registers (14 vector registers plus the mask register).
const BASE_REGISTERS: usize = 15;

fn live_registers(resident: bool, chunks: usize) -> usize {
    BASE_REGISTERS + if resident { chunks } else { 1 }
}

/// Result of one kernel execution.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRun {
    pub output: Matrix,
    pub stats: ExecStats,
    /// Final running maximum of each query row.
    pub row_max: Vec<f32>,
    /// Final exponent sum of each query row, relative to `row_max`.
    pub row_sum: Vec<f32>,
}

struct Regs {
    q: VReg,
    k: VReg,
    a: VReg,
    s: VReg,
    max: VReg,
    oldmax: VReg,
    b: VReg,
    c: VReg,
    sum: VReg,
    oldsum: VReg,
    v: VReg,
    d: VReg,
    out: VReg,
    zero: VReg,
    /// One per head-dimension chunk when resident, otherwise a single
    /// reload register.
    oldout: Vec<VReg>,
}

impl Regs {
    fn allocate(oldout: usize) -> Result<Self> {
        let mut next = 0usize;
        let mut take = || {
            let r = VReg::new(next);
            next += 1;
            r
        };
        Ok(Self {
            q: take()?,
            k: take()?,
            a: take()?,
            s: take()?,
            max: take()?,
            oldmax: take()?,
            b: take()?,
            c: take()?,
            sum: take()?,
            oldsum: take()?,
            v: take()?,
            d: take()?,
            out: take()?,
            zero: take()?,
            oldout: (0..oldout).map(|_| take()).collect::<Result<_>>()?,
        })
    }
}

/// Where a visit reads its K and V vectors from.
#[derive(Clone, Copy)]
struct KvSource<'a> {
    k: MemRef<'a>,
    /// Column of `k` holding the first key of the block.
    k_col: usize,
    v: MemRef<'a>,
    /// Row of `v` holding the first value of the block.
    v_row: usize,
}

struct Kernel<'e> {
    engine: &'e mut VectorEngine,
    cfg: KernelConfig,
    regs: Regs,
    full: ActiveLength,
    /// `(start, active length)` of each head-dimension chunk.
    chunks: Vec<(usize, ActiveLength)>,
    score_scale: Option<f32>,
}

impl<'e> Kernel<'e> {
    fn new(p: &AttentionProblem, cfg: KernelConfig, engine: &'e mut VectorEngine, resident: bool) -> Result<Self> {
        cfg.validate(p, engine, resident)?;
        let d = p.head_dim();
        let nh = cfg.chunks(d);
        let regs = Regs::allocate(if resident { nh } else { 1 })?;
        let chunks = (0..nh)
            .map(|h| {
                let start = h * cfg.vlen;
                Ok((start, engine.avl((d - start).min(cfg.vlen))?))
            })
            .collect::<Result<Vec<_>>>()?;
        engine.take_stats();
        let full = ActiveLength::full(engine.config());
        let k = Self { engine, cfg, regs, full, chunks, score_scale: p.score_scale().map(|s| s as f32) };
        if k.cfg.exp_mode == ExpMode::Approx {
            k.engine.vfmv_splat(k.regs.zero, 0.0, full)?;
        }
        Ok(k)
    }

    fn nh(&self) -> usize {
        self.chunks.len()
    }

    fn exp(&mut self, v: VReg, avl: ActiveLength) -> Result<()> {
        match self.cfg.exp_mode {
            ExpMode::Exact => self.engine.vexp_exact(v, v, avl),
            ExpMode::Approx => vexp(self.engine, v, self.regs.zero, &self.cfg.quant, avl),
        }
    }

    /// Running max and sum registers start from the sentinel and zero.
    fn init_running(&mut self) -> Result<()> {
        let full = self.full;
        self.engine.vfmv_splat(self.regs.oldmax, MAX_SENTINEL, full)?;
        self.engine.vfmv_splat(self.regs.oldsum, 0.0, full)
    }

    fn init_resident_outputs(&mut self) -> Result<()> {
        for h in 0..self.nh() {
            let avl = self.chunks[h].1;
            self.engine.vfmv_splat(self.regs.oldout[h], 0.0, avl)?;
        }
        Ok(())
    }

    /// Scores, max, exponentials and exponent sum of one key block.
    /// Leaves `e^{s - m}` in `c`, the correction `e^{m_old - m}` in `b`,
    /// the broadcast block sum in `sum`, and returns the lookahead mask.
    fn score_phase(
        &mut self,
        p: &AttentionProblem,
        row: usize,
        kv: KvSource<'_>,
        avl_s: ActiveLength,
        reload_q: bool,
    ) -> Result<crate::engine::MaskReg> {
        let r = &self.regs;
        let (q, k, a, s) = (r.q, r.k, r.a, r.s);
        let (max, oldmax, b, c, sum) = (r.max, r.oldmax, r.b, r.c, r.sum);
        let full = self.full;
        let q_mem = MemRef::new(p.q(), Operand::Query);

        self.engine.vfmv_splat(s, 0.0, avl_s)?;
        for h in 0..self.nh() {
            let (start, avl_h) = self.chunks[h];
            if reload_q {
                self.engine.vload(q, q_mem, row, start, avl_h)?;
            }
            for j in 0..avl_h.get() {
                self.engine.vload(k, kv.k, start + j, kv.k_col, avl_s)?;
                self.engine.vrgather_bcast(a, q, j, avl_s)?;
                self.engine.vmacc(s, k, a, avl_s)?;
            }
        }
        if let Some(scale) = self.score_scale {
            self.engine.vfmul_vs(s, s, scale, avl_s)?;
        }
        self.engine.vredmax(max, s, oldmax, avl_s)?;
        self.engine.vrgather_bcast(max, max, 0, full)?;
        self.engine.vfsub(b, oldmax, max, full)?;
        self.exp(b, full)?;
        self.engine.vfsub(c, s, max, avl_s)?;
        self.exp(c, avl_s)?;
        self.engine.vredsum(sum, c, avl_s)?;
        self.engine.vrgather_bcast(sum, sum, 0, full)?;
        self.engine.vmsneq(oldmax, max, full)
    }

    /// `out = sum_j c[j] * V[first + j, chunk]` for one head-dimension chunk,
    /// walking the block from its last key to its first.
    fn value_phase(&mut self, kv: KvSource<'_>, h: usize, avl_s: ActiveLength) -> Result<()> {
        let (start, avl_h) = self.chunks[h];
        let (v, d, c, out) = (self.regs.v, self.regs.d, self.regs.c, self.regs.out);
        self.engine.vfmv_splat(out, 0.0, avl_h)?;
        let n = avl_s.get();
        for j in 0..n {
            self.engine.vload(v, kv.v, kv.v_row + n - 1 - j, start, avl_h)?;
            self.engine.vrgather_bcast(d, c, n - 1 - j, avl_h)?;
            self.engine.vmacc(out, v, d, avl_h)?;
        }
        Ok(())
    }

    fn correct_sum(&mut self, mask: &crate::engine::MaskReg) -> Result<()> {
        let (oldsum, b, sum) = (self.regs.oldsum, self.regs.b, self.regs.sum);
        let full = self.full;
        self.engine.vfmul_masked(oldsum, oldsum, b, mask, full)?;
        self.engine.vfadd(sum, oldsum, sum, full)?;
        self.engine.vfmv(oldsum, sum, full)
    }

    fn correct_resident_output(&mut self, h: usize, mask: &crate::engine::MaskReg) -> Result<()> {
        let avl_h = self.chunks[h].1;
        let (oldout, b, out) = (self.regs.oldout[h], self.regs.b, self.regs.out);
        self.engine.vfmul_masked(oldout, oldout, b, mask, avl_h)?;
        self.engine.vfadd(out, oldout, out, avl_h)?;
        self.engine.vfmv(oldout, out, avl_h)
    }

    fn correct_spilled_output(
        &mut self,
        h: usize,
        mask: &crate::engine::MaskReg,
        partial: &mut Matrix,
        row: usize,
    ) -> Result<()> {
        let (start, avl_h) = self.chunks[h];
        let (oldout, b, out) = (self.regs.oldout[0], self.regs.b, self.regs.out);
        self.engine.vload(oldout, MemRef::new(partial, Operand::Partial), row, start, avl_h)?;
        self.engine.vfmul_masked(oldout, oldout, b, mask, avl_h)?;
        self.engine.vfadd(out, oldout, out, avl_h)?;
        self.engine.vstore(out, MemMut::new(partial, Operand::Partial), row, start, avl_h)
    }

    /// One query row against one key block.
    fn visit(
        &mut self,
        p: &AttentionProblem,
        row: usize,
        kv: KvSource<'_>,
        avl_s: ActiveLength,
        reload_q: bool,
        mut partial: Option<&mut Matrix>,
    ) -> Result<()> {
        let mask = self.score_phase(p, row, kv, avl_s, reload_q)?;
        let single_chunk = self.nh() == 1;
        if single_chunk {
            // sum correction precedes the output update in the one-chunk form
            self.correct_sum(&mask)?;
        }
        for h in 0..self.nh() {
            self.value_phase(kv, h, avl_s)?;
            match partial.as_deref_mut() {
                Some(buf) => self.correct_spilled_output(h, &mask, buf, row)?,
                None => self.correct_resident_output(h, &mask)?,
            }
        }
        if !single_chunk {
            self.correct_sum(&mask)?;
        }
        let (oldmax, max) = (self.regs.oldmax, self.regs.max);
        let full = self.full;
        self.engine.vfmv(oldmax, max, full)
    }

    /// Divides the row's output by its exponent sum and stores it.
    fn finish_row(&mut self, row: usize, out_buf: &mut Matrix, resident: bool) -> Result<()> {
        let (sum, out) = (self.regs.sum, self.regs.out);
        let full = self.full;
        self.engine.vrgather_bcast(sum, sum, 0, full)?;
        for h in 0..self.nh() {
            let (start, avl_h) = self.chunks[h];
            let src = if resident {
                self.regs.oldout[h]
            } else {
                self.engine.vload(out, MemRef::new(out_buf, Operand::Output), row, start, avl_h)?;
                out
            };
            self.engine.vfdiv(out, src, sum, avl_h)?;
            self.engine.vstore(out, MemMut::new(out_buf, Operand::Output), row, start, avl_h)?;
        }
        Ok(())
    }

    fn record_row(&self, row: usize, row_max: &mut [f32], row_sum: &mut [f32]) {
        row_max[row] = self.engine.lane0_f32(self.regs.oldmax);
        row_sum[row] = self.engine.lane0_f32(self.regs.sum);
    }

    fn block_avl(&self, n: usize, start: usize) -> Result<ActiveLength> {
        self.engine.avl((n - start).min(self.cfg.bc()))
    }
}

fn finish_run(output: Matrix, stats: ExecStats, row_max: Vec<f32>, row_sum: Vec<f32>) -> Result<KernelRun> {
    if !output.is_finite() {
        return Err(Error::NumericDomain("kernel produced a non-finite output".into()));
    }
    Ok(KernelRun { output, stats, row_max, row_sum })
}

/// Processes every query row on its own against all key blocks.
fn run_rows_direct(p: &AttentionProblem, cfg: KernelConfig, engine: &mut VectorEngine) -> Result<KernelRun> {
    let (n, d) = (p.seq_len(), p.head_dim());
    let resident = cfg.outputs_resident(d);
    let mut kern = Kernel::new(p, cfg, engine, resident)?;
    let single_chunk = kern.nh() == 1;
    let mut out = Matrix::zeros(n, d);
    let (mut row_max, mut row_sum) = (vec![0.0; n], vec![0.0; n]);

    for row in 0..n {
        if single_chunk {
            let avl_d = kern.chunks[0].1;
            let q = kern.regs.q;
            kern.engine.vload(q, MemRef::new(p.q(), Operand::Query), row, 0, avl_d)?;
        }
        kern.init_running()?;
        if resident {
            kern.init_resident_outputs()?;
        }
        for start in (0..n).step_by(cfg.bc()) {
            let avl_s = kern.block_avl(n, start)?;
            let kv = KvSource {
                k: MemRef::new(p.k_t(), Operand::Key),
                k_col: start,
                v: MemRef::new(p.v(), Operand::Value),
                v_row: start,
            };
            let partial = if resident { None } else { Some(&mut out) };
            kern.visit(p, row, kv, avl_s, !single_chunk, partial)?;
        }
        kern.record_row(row, &mut row_max, &mut row_sum);
        kern.finish_row(row, &mut out, resident)?;
    }
    let stats = *kern.engine.stats();
    finish_run(out, stats, row_max, row_sum)
}

/// Vectorized FlashAttention for a head dimension that fits one register.
///
/// Engine counters are reset at the start of the run.
pub fn flash_vec(p: &AttentionProblem, cfg: &KernelConfig, engine: &mut VectorEngine) -> Result<KernelRun> {
    if p.head_dim() > cfg.vlen {
        return Err(Error::Config(format!(
            "head dimension {} exceeds vlen {}; use the tiled kernel",
            p.head_dim(),
            cfg.vlen
        )));
    }
    run_rows_direct(p, *cfg, engine)
}

/// Vectorized FlashAttention with the head dimension split into `vlen`
/// chunks. Falls back to [`flash_vec`] when `d <= vlen`.
pub fn flash_vec_tiled(p: &AttentionProblem, cfg: &KernelConfig, engine: &mut VectorEngine) -> Result<KernelRun> {
    if p.head_dim() <= cfg.vlen {
        return flash_vec(p, cfg, engine);
    }
    run_rows_direct(p, *cfg, engine)
}

/// Vectorized FlashAttention over blocks of `Br` query rows.
///
/// With `Br = 1` this is exactly [`flash_vec_tiled`]. With `Br > 1`, each
/// K/V block is loaded once per row block into a tile buffer that all rows
/// of the block read from; per-row max and sum are saved to a state buffer
/// between key blocks and output chunks accumulate in the output buffer.
pub fn flash_vec_multiquery(p: &AttentionProblem, cfg: &KernelConfig, engine: &mut VectorEngine) -> Result<KernelRun> {
    if cfg.br == 1 {
        return flash_vec_tiled(p, cfg, engine);
    }
    let (n, d) = (p.seq_len(), p.head_dim());
    let mut kern = Kernel::new(p, *cfg, engine, false)?;
    let bc = cfg.bc();
    let mut out = Matrix::zeros(n, d);
    let mut tile_k = Matrix::zeros(d, bc);
    let mut tile_v = Matrix::zeros(bc, d);
    let mut state = Matrix::zeros(2, cfg.br);
    let (mut row_max, mut row_sum) = (vec![0.0; n], vec![0.0; n]);
    let last_block = (n - 1) / bc * bc;
    let one = kern.engine.avl(1)?;
    let full = kern.full;

    for r0 in (0..n).step_by(cfg.br) {
        let rows = r0..(r0 + cfg.br).min(n);
        for start in (0..n).step_by(bc) {
            let avl_s = kern.block_avl(n, start)?;
            stage_tiles(&mut kern, p, start, avl_s, &mut tile_k, &mut tile_v)?;
            let kv = KvSource {
                k: MemRef::new(&tile_k, Operand::Tile),
                k_col: 0,
                v: MemRef::new(&tile_v, Operand::Tile),
                v_row: 0,
            };
            for row in rows.clone() {
                let slot = row - r0;
                let (oldmax, oldsum) = (kern.regs.oldmax, kern.regs.oldsum);
                if start == 0 {
                    kern.init_running()?;
                } else {
                    let st = MemRef::new(&state, Operand::RowState);
                    kern.engine.vload(oldmax, st, 0, slot, one)?;
                    kern.engine.vrgather_bcast(oldmax, oldmax, 0, full)?;
                    kern.engine.vload(oldsum, st, 1, slot, one)?;
                    kern.engine.vrgather_bcast(oldsum, oldsum, 0, full)?;
                }
                kern.visit(p, row, kv, avl_s, true, Some(&mut out))?;
                if start == last_block {
                    kern.record_row(row, &mut row_max, &mut row_sum);
                    kern.finish_row(row, &mut out, false)?;
                } else {
                    kern.engine.vstore(oldmax, MemMut::new(&mut state, Operand::RowState), 0, slot, one)?;
                    kern.engine.vstore(oldsum, MemMut::new(&mut state, Operand::RowState), 1, slot, one)?;
                }
            }
        }
    }
    let stats = *kern.engine.stats();
    finish_run(out, stats, row_max, row_sum)
}

/// Copies one K block (`d x avl_s`) and one V block (`avl_s x d`) into the
/// shared tile buffers.
fn stage_tiles(
    kern: &mut Kernel<'_>,
    p: &AttentionProblem,
    start: usize,
    avl_s: ActiveLength,
    tile_k: &mut Matrix,
    tile_v: &mut Matrix,
) -> Result<()> {
    let (k, v) = (kern.regs.k, kern.regs.v);
    for j in 0..p.head_dim() {
        kern.engine.vload(k, MemRef::new(p.k_t(), Operand::Key), j, start, avl_s)?;
        kern.engine.vstore(k, MemMut::new(tile_k, Operand::Tile), j, 0, avl_s)?;
    }
    for t in 0..avl_s.get() {
        for h in 0..kern.nh() {
            let (c0, avl_h) = kern.chunks[h];
            kern.engine.vload(v, MemRef::new(p.v(), Operand::Value), start + t, c0, avl_h)?;
            kern.engine.vstore(v, MemMut::new(tile_v, Operand::Tile), t, c0, avl_h)?;
        }
    }
    Ok(())
}
