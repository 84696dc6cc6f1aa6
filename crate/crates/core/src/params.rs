//! Blocking parameters and the per-call packing decision.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel;
use crate::matrix::{Layout, StrideLayout};

/// Largest microtile (in accumulators) the generic kernel is expected to keep
/// in registers.
pub const REGISTER_TILE_BUDGET: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockingParams {
    pub m_r: usize,
    pub n_r: usize,
    pub m_c: usize,
    pub n_c: usize,
    pub k_c: usize,
    pub l1_bytes: usize,
    pub l2_bytes: usize,
    pub l3_bytes: usize,
    pub line_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Profile {
    GenericSmall,
    GenericLarge,
    File(std::path::PathBuf),
}

impl BlockingParams {
    pub const GENERIC_LARGE: BlockingParams = BlockingParams {
        m_r: 6,
        n_r: 8,
        m_c: 72,
        n_c: 4080,
        k_c: 256,
        l1_bytes: 32 * 1024,
        l2_bytes: 1024 * 1024,
        l3_bytes: 8 * 1024 * 1024,
        line_bytes: 64,
    };

    pub const GENERIC_SMALL: BlockingParams = BlockingParams {
        m_r: 4,
        n_r: 4,
        m_c: 64,
        n_c: 512,
        k_c: 128,
        l1_bytes: 32 * 1024,
        l2_bytes: 256 * 1024,
        l3_bytes: 4 * 1024 * 1024,
        line_bytes: 64,
    };

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if self.m_r == 0 || self.n_r == 0 || self.k_c == 0 {
            return bad(format!("m_r={}, n_r={}, k_c={} must all be >= 1", self.m_r, self.n_r, self.k_c));
        }
        if self.m_c == 0 || self.m_c % self.m_r != 0 {
            return bad(format!("m_c={} is not a positive multiple of m_r={}", self.m_c, self.m_r));
        }
        if self.n_c == 0 || self.n_c % self.n_r != 0 {
            return bad(format!("n_c={} is not a positive multiple of n_r={}", self.n_c, self.n_r));
        }
        if self.l1_bytes == 0 || self.l2_bytes == 0 || self.l3_bytes == 0 {
            return bad("cache capacities must be positive".into());
        }
        if !self.line_bytes.is_power_of_two() || self.line_bytes < crate::matrix::ELEM_BYTES {
            return bad(format!("line size {} must be a power of two >= 8", self.line_bytes));
        }
        if self.m_r * self.n_r > REGISTER_TILE_BUDGET {
            return bad(format!(
                "{}x{} microtile exceeds the register budget of {REGISTER_TILE_BUDGET} accumulators",
                self.m_r, self.n_r
            ));
        }
        if !kernel::is_instantiated(self.m_r, self.n_r) {
            return Err(Error::UnsupportedMicrotile { mr: self.m_r, nr: self.n_r });
        }
        Ok(())
    }

    /// Parses the flat `key=value` format. Keys missing from the text keep
    /// their `GENERIC_LARGE` value.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::GENERIC_LARGE;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                msg: format!("expected key=value, got `{content}`"),
            })?;
            let value: usize = value.trim().parse().map_err(|_| Error::Config {
                line,
                msg: format!("`{}` is not a non-negative integer", value.trim()),
            })?;
            let slot = match key.trim() {
                "mr" => &mut p.m_r,
                "nr" => &mut p.n_r,
                "mc" => &mut p.m_c,
                "nc" => &mut p.n_c,
                "kc" => &mut p.k_c,
                "l1" => &mut p.l1_bytes,
                "l2" => &mut p.l2_bytes,
                "l3" => &mut p.l3_bytes,
                "line" => &mut p.line_bytes,
                other => {
                    return Err(Error::Config { line, msg: format!("unknown key `{other}`") });
                }
            };
            *slot = value;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_config_string(&self) -> String {
        format!(
            "mr={}\nnr={}\nmc={}\nnc={}\nkc={}\nl1={}\nl2={}\nl3={}\nline={}\n",
            self.m_r, self.n_r, self.m_c, self.n_c, self.k_c, self.l1_bytes, self.l2_bytes, self.l3_bytes, self.line_bytes
        )
    }
}

impl Default for BlockingParams {
    fn default() -> Self {
        Self::GENERIC_LARGE
    }
}

pub fn default_params(profile: &Profile) -> Result<BlockingParams> {
    let p = match profile {
        Profile::GenericSmall => BlockingParams::GENERIC_SMALL,
        Profile::GenericLarge => BlockingParams::GENERIC_LARGE,
        Profile::File(path) => return BlockingParams::load(path),
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PackingDecision {
    pub pack_a: bool,
    pub pack_b: bool,
}

impl PackingDecision {
    pub const NONE: PackingDecision = PackingDecision { pack_a: false, pack_b: false };
    pub const BOTH: PackingDecision = PackingDecision { pack_a: true, pack_b: true };
}

/// True when unpacked A stays resident in L2 for a whole `k_c` panel.
pub fn a_fits_l2_unpacked(a: &StrideLayout, params: &BlockingParams) -> bool {
    match a.layout() {
        Layout::ColMajor => a.col_stride_bytes().saturating_mul(params.k_c) <= params.l2_bytes,
        Layout::RowMajor => params.m_c.saturating_mul(a.row_stride_bytes()) <= params.l2_bytes,
    }
}

/// Chooses which operands the fused path packs for an `m x n` update.
///
/// A is packed only when more than one B micropanel reuses it and its
/// unpacked footprint would spill L2; B is packed when more than one A
/// micropanel reuses it.
pub fn decide_packing(m: usize, n: usize, a: &StrideLayout, params: &BlockingParams) -> PackingDecision {
    let pack_a = n > params.n_r && !a_fits_l2_unpacked(a, params);
    let pack_b = m > params.m_r;
    PackingDecision { pack_a, pack_b }
}
