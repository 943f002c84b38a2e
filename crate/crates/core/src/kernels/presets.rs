use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    cice_evp_step, dycore_step, physics_step, pop_hmix_step, pop_vmix_step, vertical_prefix_sum, BlockField,
    ChunkedColumns, DycoreParams, ElementField, EvpParams, ExecMode, HmixParams, KernelError, PhysicsParams,
    VmixParams,
};
use crate::archsim::CoreGroup;
use crate::offload::RegionStats;

/// Desk-scale problem sizes. Atmosphere presets grow the element and chunk
/// counts with the square of the resolution ratio; ocean/ice presets grow
/// the block counts likewise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePreset {
    Ne30,
    Ne120,
    Ne240,
    Ne480,
    Ts015,
    Ts010,
    Ts005,
    Ts003,
}

impl SizePreset {
    pub const ALL: [SizePreset; 8] = [
        SizePreset::Ne30,
        SizePreset::Ne120,
        SizePreset::Ne240,
        SizePreset::Ne480,
        SizePreset::Ts015,
        SizePreset::Ts010,
        SizePreset::Ts005,
        SizePreset::Ts003,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SizePreset::Ne30 => "ne30",
            SizePreset::Ne120 => "ne120",
            SizePreset::Ne240 => "ne240",
            SizePreset::Ne480 => "ne480",
            SizePreset::Ts015 => "ts015",
            SizePreset::Ts010 => "ts010",
            SizePreset::Ts005 => "ts005",
            SizePreset::Ts003 => "ts003",
        }
    }

    /// 0 for the coarsest preset of each family, 3 for the finest.
    pub fn level(&self) -> usize {
        match self {
            SizePreset::Ne30 | SizePreset::Ts015 => 0,
            SizePreset::Ne120 | SizePreset::Ts010 => 1,
            SizePreset::Ne240 | SizePreset::Ts005 => 2,
            SizePreset::Ne480 | SizePreset::Ts003 => 3,
        }
    }

    /// (30/30)², (120/30)², (240/30)², (480/30)².
    pub fn atm_factor(&self) -> usize {
        [1, 16, 64, 256][self.level()]
    }

    /// (15/15)², (15/10)², (15/5)², (15/3)², rounded down.
    pub fn ocn_factor(&self) -> usize {
        [1, 2, 9, 25][self.level()]
    }
}

impl fmt::Display for SizePreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SizePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SizePreset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| format!("unknown size preset {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerifyClass {
    /// Parallel output must equal the serial output bit for bit.
    BitExact,
    /// Reordered floating-point additions; compared with a relative bound.
    Tolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    CamDyn,
    CamPhys,
    PopVmix,
    PopHmix,
    CiceEvp,
    PrefixSum,
}

impl KernelKind {
    pub const ALL: [KernelKind; 6] = [
        KernelKind::CamDyn,
        KernelKind::CamPhys,
        KernelKind::PopVmix,
        KernelKind::PopHmix,
        KernelKind::CiceEvp,
        KernelKind::PrefixSum,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::CamDyn => "cam-dyn",
            KernelKind::CamPhys => "cam-phys",
            KernelKind::PopVmix => "pop-vmix",
            KernelKind::PopHmix => "pop-hmix",
            KernelKind::CiceEvp => "cice-evp",
            KernelKind::PrefixSum => "prefix-sum",
        }
    }

    pub fn class(&self) -> VerifyClass {
        match self {
            KernelKind::PrefixSum => VerifyClass::Tolerance,
            _ => VerifyClass::BitExact,
        }
    }

    /// Coupled-model component the kernel belongs to.
    pub fn component(&self) -> &'static str {
        match self {
            KernelKind::CamDyn | KernelKind::CamPhys | KernelKind::PrefixSum => "ATM",
            KernelKind::PopVmix | KernelKind::PopHmix => "OCN",
            KernelKind::CiceEvp => "ICE",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KernelKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown kernel {s:?}"))
    }
}

/// Subcycles per EVP call in the standard cases.
pub const EVP_SUBCYCLES: usize = 120;
/// Column length of the prefix-sum case.
pub const PREFIX_LEVELS: usize = 1024;

/// A kernel's flattened output in row-major order.
#[derive(Debug, Clone)]
pub struct CaseOutput {
    pub kind: KernelKind,
    pub dims: Vec<u64>,
    pub data: Vec<f64>,
    pub stats: Vec<RegionStats>,
}

fn seeds(seed: u64) -> (u64, u64) {
    (seed, seed ^ 0x9e37_79b9_7f4a_7c15)
}

/// Generates the seeded input of `kind` at `preset`, runs it once and
/// returns the output.
pub fn run_case(
    kind: KernelKind,
    group: &CoreGroup,
    mode: ExecMode,
    preset: SizePreset,
    seed: u64,
) -> Result<CaseOutput, KernelError> {
    let (s1, s2) = seeds(seed);
    let (dims, data, stats) = match kind {
        KernelKind::CamPhys => {
            let c = ChunkedColumns::random(36 * preset.atm_factor(), 1, 32, s1);
            let out = physics_step(group, &c, &PhysicsParams::default(), mode)?;
            (vec![c.nchunks, c.ncols, c.pver], out.output.t, vec![out.stats])
        }
        KernelKind::CamDyn => {
            let f = ElementField::random(4 * preset.atm_factor(), 32, 4, s1);
            let out = dycore_step(group, &f, &DycoreParams::default(), mode)?;
            (vec![f.nelem, f.pver, f.np, f.np], out.output.values, vec![out.stats])
        }
        KernelKind::PopVmix => {
            let b = BlockField::ocean(preset.ocn_factor(), 60, 56, 10).random(-2.0, 30.0, s1);
            let out = pop_vmix_step(group, &b, &VmixParams::default(), mode)?;
            (vec![b.mxblk, b.nlayer, b.nyblk, b.nxblk], out.output.values, vec![out.stats])
        }
        KernelKind::PopHmix => {
            let b = BlockField::ocean(preset.ocn_factor(), 60, 56, 10).random(-2.0, 30.0, s1);
            let out = pop_hmix_step(group, &b, &HmixParams::default(), mode)?;
            (vec![b.mxblk, b.nlayer, b.nyblk, b.nxblk], out.output.values, vec![out.stats])
        }
        KernelKind::CiceEvp => {
            let shape = BlockField::zeros(32 * preset.ocn_factor(), 5, 8, 4, 4);
            let state = shape.clone().random(-1.0, 1.0, s1);
            let forcing = shape.random(-1.0, 1.0, s2);
            let out = cice_evp_step(group, &state, &forcing, EVP_SUBCYCLES, &EvpParams::default(), mode)?;
            (state.dims().to_vec(), out.output.values, vec![out.stats])
        }
        KernelKind::PrefixSum => {
            let columns = 4 * preset.atm_factor();
            let mut rng = ChaCha8Rng::seed_from_u64(s1);
            let mut data = Vec::with_capacity(columns * PREFIX_LEVELS);
            let mut stats = Vec::with_capacity(columns);
            for _ in 0..columns {
                let div: Vec<f64> = (0..PREFIX_LEVELS).map(|_| rng.gen_range(0.0..1.0)).collect();
                let dp: Vec<f64> = (0..PREFIX_LEVELS).map(|_| rng.gen_range(0.5..1.5)).collect();
                let out = vertical_prefix_sum(group, &div, &dp, mode)?;
                data.extend(out.output);
                stats.push(out.stats);
            }
            (vec![columns, PREFIX_LEVELS], data, stats)
        }
    };
    Ok(CaseOutput { kind, dims: dims.into_iter().map(|d| d as u64).collect(), data, stats })
}
