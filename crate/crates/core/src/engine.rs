//! Countable execution model of the RISC-V Vector instruction subset used by
//! the FlashAttention kernels.
//!
//! The engine owns an architectural register file of [`NUM_VREGS`] vector
//! registers, each holding `vlen` 32-bit lanes. Lanes are stored as raw bit
//! patterns, so the float and integer views of a register are free
//! reinterpretations of the same cells.
//!
//! Semantics shared by every instruction:
//!
//! * only lanes `0..avl` are read or written; lanes at or above the active
//!   length keep their previous contents (tail-undisturbed);
//! * masked forms leave lanes whose mask bit is clear untouched
//!   (mask-undisturbed);
//! * reductions fold in ascending lane order;
//! * multiply-accumulate rounds after the multiply and after the add;
//! * each instruction bumps exactly one counter in [`ExecStats`].
//!
//! Configuration changes (setting the active length) are free.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Number of architectural vector registers.
pub const NUM_VREGS: usize = 32;

/// Lane count of the modeled 1024-bit engine with 32-bit elements.
pub const DEFAULT_VLEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EngineConfig {
    vlen: usize,
}

impl EngineConfig {
    pub fn new(vlen: usize) -> Result<Self> {
        if vlen < 2 || !vlen.is_power_of_two() {
            return Err(Error::Config(format!("vlen must be a power of two >= 2, got {vlen}")));
        }
        Ok(Self { vlen })
    }

    pub fn vlen(&self) -> usize {
        self.vlen
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self { vlen: DEFAULT_VLEN }
    }
}

/// Index of an architectural vector register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VReg(u8);

impl VReg {
    pub fn new(index: usize) -> Result<Self> {
        if index >= NUM_VREGS {
            return Err(Error::Range(format!("vector register v{index} does not exist")));
        }
        Ok(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Number of active lanes for one instruction, `1 <= avl <= vlen`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveLength(usize);

impl ActiveLength {
    pub fn new(avl: usize, config: &EngineConfig) -> Result<Self> {
        if avl == 0 || avl > config.vlen {
            return Err(Error::Range(format!("active length {avl} outside 1..={}", config.vlen)));
        }
        Ok(Self(avl))
    }

    pub fn full(config: &EngineConfig) -> Self {
        Self(config.vlen)
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// Snapshot of one vector register.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VectorReg {
    lanes: Vec<u32>,
}

impl VectorReg {
    pub fn from_f32(values: &[f32]) -> Self {
        Self { lanes: values.iter().map(|x| x.to_bits()).collect() }
    }

    pub fn from_i32(values: &[i32]) -> Self {
        Self { lanes: values.iter().map(|&x| x as u32).collect() }
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    pub fn f32(&self, lane: usize) -> f32 {
        f32::from_bits(self.lanes[lane])
    }

    pub fn i32(&self, lane: usize) -> i32 {
        self.lanes[lane] as i32
    }

    pub fn bits(&self) -> &[u32] {
        &self.lanes
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.lanes.iter().map(|&b| f32::from_bits(b)).collect()
    }

    pub fn to_i32_vec(&self) -> Vec<i32> {
        self.lanes.iter().map(|&b| b as i32).collect()
    }
}

/// Per-lane predicate produced by the compare instructions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskReg {
    bits: Vec<bool>,
}

impl MaskReg {
    pub fn from_bools(bits: &[bool]) -> Self {
        Self { bits: bits.to_vec() }
    }

    pub fn all(vlen: usize, value: bool) -> Self {
        Self { bits: vec![value; vlen] }
    }

    pub fn get(&self, lane: usize) -> bool {
        self.bits[lane]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// What a memory access touches. Used only to attribute load/store counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Query,
    Key,
    Value,
    /// Intermediate output chunks spilled inside the key-block loop.
    Partial,
    /// Final output traffic (normalization phase).
    Output,
    /// Staged K/V tiles shared by a block of query rows.
    Tile,
    /// Per-row running max / exponent sum saved between column blocks.
    RowState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OperandCounts {
    pub query: u64,
    pub key: u64,
    pub value: u64,
    pub partial: u64,
    pub output: u64,
    pub tile: u64,
    pub row_state: u64,
}

impl OperandCounts {
    fn bump(&mut self, op: Operand) {
        match op {
            Operand::Query => self.query += 1,
            Operand::Key => self.key += 1,
            Operand::Value => self.value += 1,
            Operand::Partial => self.partial += 1,
            Operand::Output => self.output += 1,
            Operand::Tile => self.tile += 1,
            Operand::RowState => self.row_state += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.query + self.key + self.value + self.partial + self.output + self.tile + self.row_state
    }
}

/// Instruction counters, one per instruction class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ExecStats {
    pub vector_load: u64,
    pub vector_store: u64,
    pub gather_broadcast: u64,
    pub multiply_accumulate: u64,
    pub reduction_max: u64,
    pub reduction_sum: u64,
    pub mask_set: u64,
    pub masked_multiply: u64,
    /// Adds and subtracts, masked or not.
    pub add: u64,
    pub multiply_vs: u64,
    pub divide: u64,
    /// Register copies and scalar splats.
    pub moves: u64,
    pub convert_f2i: u64,
    pub add_int: u64,
    /// Library-exponential lane maps (exact-exp mode only).
    pub exact_exp: u64,
    pub elements_loaded: u64,
    pub elements_stored: u64,
    pub loads_by_operand: OperandCounts,
    pub stores_by_operand: OperandCounts,
}

impl ExecStats {
    /// Sum over every instruction class.
    pub fn total_instructions(&self) -> u64 {
        self.vector_load
            + self.vector_store
            + self.gather_broadcast
            + self.multiply_accumulate
            + self.reduction_max
            + self.reduction_sum
            + self.mask_set
            + self.masked_multiply
            + self.add
            + self.multiply_vs
            + self.divide
            + self.moves
            + self.convert_f2i
            + self.add_int
            + self.exact_exp
    }

    /// Loads whose source is the key or value matrix.
    pub fn kv_loads(&self) -> u64 {
        self.loads_by_operand.key + self.loads_by_operand.value
    }

    /// Flat `(name, value)` list in a fixed order, used by the reports.
    pub fn fields(&self) -> Vec<(&'static str, u64)> {
        let l = &self.loads_by_operand;
        let s = &self.stores_by_operand;
        vec![
            ("vector_load", self.vector_load),
            ("vector_store", self.vector_store),
            ("gather_broadcast", self.gather_broadcast),
            ("multiply_accumulate", self.multiply_accumulate),
            ("reduction_max", self.reduction_max),
            ("reduction_sum", self.reduction_sum),
            ("mask_set", self.mask_set),
            ("masked_multiply", self.masked_multiply),
            ("add", self.add),
            ("multiply_vs", self.multiply_vs),
            ("divide", self.divide),
            ("move", self.moves),
            ("convert_f2i", self.convert_f2i),
            ("add_int", self.add_int),
            ("exact_exp", self.exact_exp),
            ("total_instructions", self.total_instructions()),
            ("elements_loaded", self.elements_loaded),
            ("elements_stored", self.elements_stored),
            ("loads_query", l.query),
            ("loads_key", l.key),
            ("loads_value", l.value),
            ("loads_partial", l.partial),
            ("loads_output", l.output),
            ("loads_tile", l.tile),
            ("loads_row_state", l.row_state),
            ("stores_partial", s.partial),
            ("stores_output", s.output),
            ("stores_tile", s.tile),
            ("stores_row_state", s.row_state),
        ]
    }
}

/// Read-only memory operand.
#[derive(Debug, Clone, Copy)]
pub struct MemRef<'a> {
    pub matrix: &'a Matrix,
    pub operand: Operand,
}

impl<'a> MemRef<'a> {
    pub fn new(matrix: &'a Matrix, operand: Operand) -> Self {
        Self { matrix, operand }
    }
}

/// Writable memory operand.
#[derive(Debug)]
pub struct MemMut<'a> {
    pub matrix: &'a mut Matrix,
    pub operand: Operand,
}

impl<'a> MemMut<'a> {
    pub fn new(matrix: &'a mut Matrix, operand: Operand) -> Self {
        Self { matrix, operand }
    }
}

/// Register file plus counters. Single-threaded mutable state; use one
/// engine per concurrent run.
#[derive(Debug, Clone)]
pub struct VectorEngine {
    config: EngineConfig,
    regs: Vec<u32>,
    stats: ExecStats,
}

impl VectorEngine {
    pub fn new(config: EngineConfig) -> Self {
        Self { config, regs: vec![0; NUM_VREGS * config.vlen], stats: ExecStats::default() }
    }

    pub fn with_vlen(vlen: usize) -> Result<Self> {
        Ok(Self::new(EngineConfig::new(vlen)?))
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn vlen(&self) -> usize {
        self.config.vlen
    }

    pub fn stats(&self) -> &ExecStats {
        &self.stats
    }

    pub fn take_stats(&mut self) -> ExecStats {
        std::mem::take(&mut self.stats)
    }

    pub fn avl(&self, n: usize) -> Result<ActiveLength> {
        ActiveLength::new(n, &self.config)
    }

    /// Snapshot of a register. Not an instruction; nothing is counted.
    pub fn read(&self, v: VReg) -> VectorReg {
        VectorReg { lanes: self.lanes(v).to_vec() }
    }

    /// Lane 0 of a register as a float (scalar move out, uncounted).
    pub fn lane0_f32(&self, v: VReg) -> f32 {
        f32::from_bits(self.lanes(v)[0])
    }

    /// Overwrites a register without counting an instruction. Meant for
    /// test setup and debugging, never for kernel work.
    pub fn poke(&mut self, v: VReg, value: &VectorReg) -> Result<()> {
        if value.len() != self.vlen() {
            return Err(Error::Range(format!(
                "register value has {} lanes, engine vlen is {}",
                value.len(),
                self.vlen()
            )));
        }
        let vlen = self.vlen();
        self.regs[v.index() * vlen..(v.index() + 1) * vlen].copy_from_slice(&value.lanes);
        Ok(())
    }

    #[inline]
    fn lanes(&self, v: VReg) -> &[u32] {
        let vlen = self.config.vlen;
        &self.regs[v.index() * vlen..(v.index() + 1) * vlen]
    }

    #[inline]
    fn f(&self, v: VReg, lane: usize) -> f32 {
        f32::from_bits(self.regs[v.index() * self.config.vlen + lane])
    }

    #[inline]
    fn set_f(&mut self, v: VReg, lane: usize, x: f32) {
        self.regs[v.index() * self.config.vlen + lane] = x.to_bits();
    }

    #[inline]
    fn check_avl(&self, avl: ActiveLength) -> Result<usize> {
        let n = avl.get();
        if n == 0 || n > self.config.vlen {
            return Err(Error::Range(format!("active length {n} outside 1..={}", self.config.vlen)));
        }
        Ok(n)
    }

    fn check_mask(&self, mask: &MaskReg) -> Result<()> {
        if mask.bits.len() != self.config.vlen {
            return Err(Error::Range(format!(
                "mask has {} bits, engine vlen is {}",
                mask.bits.len(),
                self.config.vlen
            )));
        }
        Ok(())
    }

    fn check_span(m: &Matrix, row: usize, col: usize, n: usize) -> Result<()> {
        if row >= m.rows() || col + n > m.cols() {
            return Err(Error::Range(format!(
                "access row {row} cols {col}..{} outside {}x{} matrix",
                col + n,
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }

    /// Unit-stride load of `avl` consecutive elements of one matrix row.
    pub fn vload(&mut self, vd: VReg, mem: MemRef<'_>, row: usize, col: usize, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        Self::check_span(mem.matrix, row, col, n)?;
        let src = &mem.matrix.row(row)[col..col + n];
        let base = vd.index() * self.config.vlen;
        for (dst, x) in self.regs[base..base + n].iter_mut().zip(src) {
            *dst = x.to_bits();
        }
        self.stats.vector_load += 1;
        self.stats.elements_loaded += n as u64;
        self.stats.loads_by_operand.bump(mem.operand);
        Ok(())
    }

    /// Unit-stride store of lanes `0..avl` into one matrix row.
    pub fn vstore(&mut self, vs: VReg, mem: MemMut<'_>, row: usize, col: usize, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        Self::check_span(mem.matrix, row, col, n)?;
        let lanes = &self.regs[vs.index() * self.config.vlen..][..n];
        for (dst, &b) in mem.matrix.row_mut(row)[col..col + n].iter_mut().zip(lanes) {
            *dst = f32::from_bits(b);
        }
        self.stats.vector_store += 1;
        self.stats.elements_stored += n as u64;
        self.stats.stores_by_operand.bump(mem.operand);
        Ok(())
    }

    /// `vrgather.vx`: every active lane of `vd` receives `vs[idx]`.
    pub fn vrgather_bcast(&mut self, vd: VReg, vs: VReg, idx: usize, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        if idx >= self.config.vlen {
            return Err(Error::Range(format!("gather index {idx} >= vlen {}", self.config.vlen)));
        }
        let x = self.lanes(vs)[idx];
        let base = vd.index() * self.config.vlen;
        self.regs[base..base + n].fill(x);
        self.stats.gather_broadcast += 1;
        Ok(())
    }

    /// `vd[i] += vs1[i] * vs2[i]`, rounding after the product and the sum.
    pub fn vmacc(&mut self, vd: VReg, vs1: VReg, vs2: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        for i in 0..n {
            let prod = self.f(vs1, i) * self.f(vs2, i);
            let acc = self.f(vd, i) + prod;
            self.set_f(vd, i, acc);
        }
        self.stats.multiply_accumulate += 1;
        Ok(())
    }

    /// `vfredmax.vs`: lane 0 of `vd` = max(`seed[0]`, max of active `vs`).
    /// Other lanes of `vd` are left unchanged.
    pub fn vredmax(&mut self, vd: VReg, vs: VReg, seed: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        let mut acc = self.f(seed, 0);
        if !acc.is_finite() {
            return Err(Error::NumericDomain(format!("vredmax seed is {acc}")));
        }
        for i in 0..n {
            let x = self.f(vs, i);
            if !x.is_finite() {
                return Err(Error::NumericDomain(format!("vredmax lane {i} is {x}")));
            }
            if x > acc {
                acc = x;
            }
        }
        self.set_f(vd, 0, acc);
        self.stats.reduction_max += 1;
        Ok(())
    }

    /// `vfredosum.vs` without a seed: lane 0 of `vd` = ordered sum of the
    /// active lanes of `vs`.
    pub fn vredsum(&mut self, vd: VReg, vs: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        let mut acc = self.f(vs, 0);
        for i in 1..n {
            acc += self.f(vs, i);
        }
        self.set_f(vd, 0, acc);
        self.stats.reduction_sum += 1;
        Ok(())
    }

    /// `vmfne.vv`: bit i set where the lanes differ. Bits past `avl` are clear.
    pub fn vmsneq(&mut self, vs1: VReg, vs2: VReg, avl: ActiveLength) -> Result<MaskReg> {
        let n = self.check_avl(avl)?;
        let mut bits = vec![false; self.config.vlen];
        for (i, bit) in bits.iter_mut().enumerate().take(n) {
            let (a, b) = (self.f(vs1, i), self.f(vs2, i));
            if a.is_nan() || b.is_nan() {
                return Err(Error::NumericDomain(format!("vmsneq lane {i} is NaN")));
            }
            *bit = a != b;
        }
        self.stats.mask_set += 1;
        Ok(MaskReg { bits })
    }

    /// `vmfle.vf`: bit i set where `vs[i] <= threshold`.
    pub fn vmfle(&mut self, vs: VReg, threshold: f32, avl: ActiveLength) -> Result<MaskReg> {
        let n = self.check_avl(avl)?;
        let mut bits = vec![false; self.config.vlen];
        for (i, bit) in bits.iter_mut().enumerate().take(n) {
            let a = self.f(vs, i);
            if a.is_nan() {
                return Err(Error::NumericDomain(format!("vmfle lane {i} is NaN")));
            }
            *bit = a <= threshold;
        }
        self.stats.mask_set += 1;
        Ok(MaskReg { bits })
    }

    /// Masked `vfmul.vv`: `vd[i] = vs1[i] * vs2[i]` where the mask is set.
    pub fn vfmul_masked(&mut self, vd: VReg, vs1: VReg, vs2: VReg, mask: &MaskReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        self.check_mask(mask)?;
        for i in 0..n {
            if mask.bits[i] {
                let x = self.f(vs1, i) * self.f(vs2, i);
                self.set_f(vd, i, x);
            }
        }
        self.stats.masked_multiply += 1;
        Ok(())
    }

    pub fn vfadd(&mut self, vd: VReg, vs1: VReg, vs2: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        for i in 0..n {
            let x = self.f(vs1, i) + self.f(vs2, i);
            self.set_f(vd, i, x);
        }
        self.stats.add += 1;
        Ok(())
    }

    pub fn vfsub(&mut self, vd: VReg, vs1: VReg, vs2: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        for i in 0..n {
            let x = self.f(vs1, i) - self.f(vs2, i);
            self.set_f(vd, i, x);
        }
        self.stats.add += 1;
        Ok(())
    }

    /// Masked `vfadd.vf`: `vd[i] = vs[i] + scalar` where the mask is set.
    pub fn vfadd_masked(&mut self, vd: VReg, vs: VReg, scalar: f32, mask: &MaskReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        self.check_mask(mask)?;
        for i in 0..n {
            if mask.bits[i] {
                let x = self.f(vs, i) + scalar;
                self.set_f(vd, i, x);
            }
        }
        self.stats.add += 1;
        Ok(())
    }

    pub fn vfdiv(&mut self, vd: VReg, vs1: VReg, vs2: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        if let Some(i) = (0..n).find(|&i| self.f(vs2, i) == 0.0) {
            return Err(Error::NumericDomain(format!("vfdiv divisor lane {i} is zero")));
        }
        for i in 0..n {
            let x = self.f(vs1, i) / self.f(vs2, i);
            self.set_f(vd, i, x);
        }
        self.stats.divide += 1;
        Ok(())
    }

    /// `vmv.v.v`: bit-exact copy of the active lanes.
    pub fn vfmv(&mut self, vd: VReg, vs: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        let vlen = self.config.vlen;
        let (d, s) = (vd.index() * vlen, vs.index() * vlen);
        self.regs.copy_within(s..s + n, d);
        self.stats.moves += 1;
        Ok(())
    }

    /// `vfmv.v.f`: splat a scalar into the active lanes.
    pub fn vfmv_splat(&mut self, vd: VReg, scalar: f32, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        let base = vd.index() * self.config.vlen;
        self.regs[base..base + n].fill(scalar.to_bits());
        self.stats.moves += 1;
        Ok(())
    }

    /// `vfmul.vf`: multiply every active lane by a scalar.
    pub fn vfmul_vs(&mut self, vd: VReg, vs: VReg, scalar: f32, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        for i in 0..n {
            let x = self.f(vs, i) * scalar;
            self.set_f(vd, i, x);
        }
        self.stats.multiply_vs += 1;
        Ok(())
    }

    /// `vfcvt.x.f.v` with round-to-nearest-even. The integer result is
    /// written as a two's-complement bit pattern.
    pub fn vfcvt_f2i(&mut self, vd: VReg, vs: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        // 2^31 is exactly representable; anything at or above it overflows.
        const LIMIT: f32 = 2_147_483_648.0;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let r = self.f(vs, i).round_ties_even();
            if !(-LIMIT..LIMIT).contains(&r) {
                return Err(Error::NumericDomain(format!(
                    "vfcvt_f2i lane {i}: {} outside signed 32-bit range",
                    self.f(vs, i)
                )));
            }
            out.push(r as i32);
        }
        let base = vd.index() * self.config.vlen;
        for (dst, x) in self.regs[base..base + n].iter_mut().zip(out) {
            *dst = x as u32;
        }
        self.stats.convert_f2i += 1;
        Ok(())
    }

    /// `vadd.vx` on the integer view. Overflow is an error, not a wrap.
    pub fn vadd_int(&mut self, vd: VReg, vs: VReg, scalar: i32, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        let vlen = self.config.vlen;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.regs[vs.index() * vlen + i] as i32;
            let sum = a
                .checked_add(scalar)
                .ok_or_else(|| Error::NumericDomain(format!("vadd_int lane {i}: {a} + {scalar} overflows")))?;
            out.push(sum);
        }
        for (dst, x) in self.regs[vd.index() * vlen..][..n].iter_mut().zip(out) {
            *dst = x as u32;
        }
        self.stats.add_int += 1;
        Ok(())
    }

    /// Switches a register from the integer view to the float view.
    ///
    /// Both views share the same bits, so this is not an instruction and
    /// counts nothing. It exists to make the type pun explicit at call sites.
    pub fn reinterpret_i2f(&mut self, _v: VReg) {}

    /// Library exponential applied lane-wise; stands in for an exact
    /// exponential unit and counts as one instruction.
    pub fn vexp_exact(&mut self, vd: VReg, vs: VReg, avl: ActiveLength) -> Result<()> {
        let n = self.check_avl(avl)?;
        for i in 0..n {
            let x = self.f(vs, i);
            if x.is_nan() {
                return Err(Error::NumericDomain(format!("vexp_exact lane {i} is NaN")));
            }
            self.set_f(vd, i, x.exp());
        }
        self.stats.exact_exp += 1;
        Ok(())
    }
}
