use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Search schedule family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Single scale, 4 propagations with 3 random searches.
    Basic,
    /// Every scale runs 4 propagations with 3 random searches at `R n`.
    Multiscale,
    /// Sub-scales, 4 propagations at `2 R n*` then 8 at `R n*` per scale.
    Plus,
    /// Plus without sub-scales; the finest scale only runs 4 propagations.
    Fast,
    /// Fast without the finest scale and with a 2x2-subsampled kd-tree.
    #[serde(rename = "fastx2")]
    FastX2,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::Multiscale => "multiscale",
            Variant::Plus => "plus",
            Variant::Fast => "fast",
            Variant::FastX2 => "fastx2",
        }
    }

    /// Lattice stride of the finest executed scale.
    pub fn finest_lattice(self) -> usize {
        match self {
            Variant::FastX2 => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "basic" => Ok(Variant::Basic),
            "multiscale" => Ok(Variant::Multiscale),
            "plus" => Ok(Variant::Plus),
            "fast" => Ok(Variant::Fast),
            "fastx2" => Ok(Variant::FastX2),
            other => Err(FlowError::param(format!("unknown variant {other:?}"))),
        }
    }
}

/// A run of `propagations` propagation passes interleaved with
/// `propagations - 1` random-search passes at `radius_mult * R * n*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub propagations: usize,
    pub radius_mult: f32,
}

/// One scale of the search: the propagation lattice `n`, the sub-scale `n*`
/// that sets patch stride, blur level and search distance, and its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub lattice: usize,
    pub sub_scale: usize,
    pub blocks: Vec<Block>,
}

/// All tunables of one flow computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Patch radius of the forward flow and of the first backward flow.
    pub r: usize,
    /// Patch radius of the second backward flow.
    pub r2: usize,
    /// kd-tree leaf size.
    pub leaf_size: usize,
    /// Number of coarser scales above full resolution.
    pub k: usize,
    /// Base random search distance in pixels.
    pub search_radius: f32,
    pub variant: Variant,
    pub seed: u64,
    /// Round random-search offsets to whole pixels.
    pub integer_search: bool,
    pub stages: Vec<Stage>,
}

impl MatchParams {
    /// Defaults: `r = 4`, `r2 = 3`, `l = 8`, `R = 1`.
    pub fn new(variant: Variant, k: usize) -> Self {
        let k = if variant == Variant::Basic { 0 } else { k };
        MatchParams {
            r: 4,
            r2: 3,
            leaf_size: 8,
            k,
            search_radius: 1.0,
            variant,
            seed: 0,
            integer_search: false,
            stages: default_stages(variant, k),
        }
    }

    /// Regenerate the schedule after changing `variant` or `k`.
    pub fn rebuild_stages(&mut self) {
        if self.variant == Variant::Basic {
            self.k = 0;
        }
        self.stages = default_stages(self.variant, self.k);
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_radius(mut self, r: usize) -> Self {
        self.r = r;
        self
    }

    /// Stride of the kd-tree sampling of the second image.
    pub fn tree_subsample(&self) -> usize {
        match self.variant {
            Variant::FastX2 => 2,
            _ => 1,
        }
    }

    /// Scale-space levels the schedule reads.
    pub fn required_scales(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.stages.iter().map(|st| st.sub_scale).collect();
        s.push(1);
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 1 || self.r2 < 1 {
            return Err(FlowError::param("patch radii r and r2 must be >= 1"));
        }
        if self.leaf_size < 1 {
            return Err(FlowError::param("leaf size must be >= 1"));
        }
        if !(self.search_radius > 0.0 && self.search_radius.is_finite()) {
            return Err(FlowError::param("random search distance R must be > 0"));
        }
        if self.variant == Variant::FastX2 && self.k < 1 {
            return Err(FlowError::param("fastx2 needs k >= 1"));
        }
        if self.stages.is_empty() {
            return Err(FlowError::param("schedule has no stages"));
        }
        let mut prev = usize::MAX;
        for (i, st) in self.stages.iter().enumerate() {
            if !st.lattice.is_power_of_two() {
                return Err(FlowError::param(format!("stage {i}: lattice {} is not a power of two", st.lattice)));
            }
            if st.lattice > prev {
                return Err(FlowError::param(format!("stage {i}: lattice must not increase")));
            }
            if st.sub_scale < st.lattice {
                return Err(FlowError::param(format!(
                    "stage {i}: sub-scale {} below lattice {}",
                    st.sub_scale, st.lattice
                )));
            }
            if st.blocks.is_empty() || st.blocks.iter().any(|b| b.propagations == 0 || !(b.radius_mult > 0.0)) {
                return Err(FlowError::param(format!("stage {i}: empty or degenerate schedule block")));
            }
            prev = st.lattice;
        }
        let finest = self.stages.last().map(|s| s.lattice).unwrap_or(0);
        if finest != self.variant.finest_lattice() {
            return Err(FlowError::param(format!(
                "schedule ends at lattice {finest}, variant {} needs {}",
                self.variant,
                self.variant.finest_lattice()
            )));
        }
        Ok(())
    }
}

fn block(propagations: usize, radius_mult: f32) -> Block {
    Block {
        propagations,
        radius_mult,
    }
}

/// Schedules per variant. Coarse-to-fine, starting at lattice `2^k`.
pub fn default_stages(variant: Variant, k: usize) -> Vec<Stage> {
    let stage = |lattice: usize, sub_scale: usize, blocks: Vec<Block>| Stage {
        lattice,
        sub_scale,
        blocks,
    };
    let plus_blocks = || vec![block(4, 2.0), block(8, 1.0)];
    let base = || vec![block(4, 1.0)];
    let mut out = Vec::new();
    match variant {
        Variant::Basic => out.push(stage(1, 1, base())),
        Variant::Multiscale => {
            for j in (0..=k).rev() {
                out.push(stage(1 << j, 1 << j, base()));
            }
        }
        Variant::Plus => {
            for j in (0..=k).rev() {
                let n = 1usize << j;
                if j < k && j >= 1 {
                    out.push(stage(n, 3 * n / 2, plus_blocks()));
                }
                out.push(stage(n, n, plus_blocks()));
            }
        }
        Variant::Fast => {
            for j in (0..=k).rev() {
                let n = 1usize << j;
                out.push(stage(n, n, if j == 0 { base() } else { plus_blocks() }));
            }
        }
        Variant::FastX2 => {
            for j in (1..=k.max(1)).rev() {
                let n = 1usize << j;
                out.push(stage(n, n, if j == 1 { base() } else { plus_blocks() }));
            }
        }
    }
    out
}
