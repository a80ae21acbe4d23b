//! Parameter resolution: command-line flags override the optional TOML
//! file, which overrides built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use flowfields::filtering::{FilterParams, Lookup};
use flowfields::{MatchParams, Variant};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default, rename = "match")]
    pub matching: MatchSection,
    #[serde(default)]
    pub filter: FilterSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchSection {
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    #[serde(rename = "R")]
    pub search_radius: Option<f32>,
    pub r: Option<usize>,
    pub r2: Option<usize>,
    pub l: Option<usize>,
    pub seed: Option<u64>,
    pub integer_search: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub eps: Option<f32>,
    pub s: Option<usize>,
    pub e: Option<usize>,
    pub q: Option<usize>,
    pub region_threshold: Option<f32>,
    pub lookup: Option<String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// basic, multiscale, plus, fast or fastx2 [default: plus]
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Number of coarser scales [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Random search distance in pixels [default: 1]
    #[arg(long = "R")]
    pub search_radius: Option<f32>,
    /// Patch radius [default: 4]
    #[arg(long)]
    pub r: Option<usize>,
    /// Patch radius of the second backward flow [default: 3]
    #[arg(long)]
    pub r2: Option<usize>,
    /// kd-tree leaf size [default: 8]
    #[arg(long = "l")]
    pub leaf_size: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Round random-search offsets to whole pixels
    #[arg(long)]
    pub integer_search: bool,
    /// TOML file with [match] and [filter] tables
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl MatchArgs {
    pub fn resolve(&self, file: &MatchSection) -> Result<MatchParams> {
        let variant = self.variant.or(file.variant).unwrap_or(Variant::Plus);
        let k = self.k.or(file.k).unwrap_or(3);
        let mut p = MatchParams::new(variant, k);
        if let Some(v) = self.search_radius.or(file.search_radius) {
            p.search_radius = v;
        }
        if let Some(v) = self.r.or(file.r) {
            p.r = v;
        }
        if let Some(v) = self.r2.or(file.r2) {
            p.r2 = v;
        }
        if let Some(v) = self.leaf_size.or(file.l) {
            p.leaf_size = v;
        }
        p.seed = self.seed.or(file.seed).unwrap_or(0);
        p.integer_search = self.integer_search || file.integer_search.unwrap_or(false);
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// Consistency threshold in pixels [default: 1.5]
    #[arg(long)]
    pub eps: Option<f32>,
    /// Minimum region size [default: 100]
    #[arg(long)]
    pub s: Option<usize>,
    /// Minimum survivors per block [default: 3]
    #[arg(long)]
    pub e: Option<usize>,
    /// Sparsification block size [default: 3, 4 for fastx2]
    #[arg(long)]
    pub q: Option<usize>,
    /// Backward flow lookup: bilinear or nearest [default: bilinear]
    #[arg(long)]
    pub lookup: Option<Lookup>,
}

impl FilterArgs {
    pub fn resolve(&self, file: &FilterSection, variant: Variant) -> Result<FilterParams> {
        let mut p = FilterParams::default();
        if variant == Variant::FastX2 {
            p.q = 4;
        }
        if let Some(v) = self.eps.or(file.eps) {
            p.eps = v;
        }
        if let Some(v) = self.s.or(file.s) {
            p.s = v;
        }
        if let Some(v) = self.e.or(file.e) {
            p.e = v;
        }
        if let Some(v) = self.q.or(file.q) {
            p.q = v;
        }
        if let Some(v) = file.region_threshold {
            p.region_threshold = v;
        }
        if let Some(v) = self.lookup {
            p.lookup = v;
        } else if let Some(s) = &file.lookup {
            p.lookup = s.parse()?;
        }
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_args() -> MatchArgs {
        MatchArgs {
            variant: None,
            k: None,
            search_radius: None,
            r: None,
            r2: None,
            leaf_size: None,
            seed: None,
            integer_search: false,
            config: None,
        }
    }

    #[test]
    fn defaults_are_plus_k3() {
        let p = empty_args().resolve(&MatchSection::default()).unwrap();
        assert_eq!(p, MatchParams::new(Variant::Plus, 3));
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file: FileConfig = toml::from_str("[match]\nvariant = \"fast\"\nk = 2\nR = 2.0\n[filter]\neps = 2.5\n").unwrap();
        let mut args = empty_args();
        args.k = Some(1);
        let p = args.resolve(&file.matching).unwrap();
        assert_eq!(p.variant, Variant::Fast);
        assert_eq!(p.k, 1);
        assert_eq!(p.search_radius, 2.0);
        assert_eq!(p.r, 4);

        let fa = FilterArgs {
            eps: None,
            s: Some(50),
            e: None,
            q: None,
            lookup: None,
        };
        let f = fa.resolve(&file.filter, p.variant).unwrap();
        assert_eq!((f.eps, f.s, f.q), (2.5, 50, 3));
        assert_eq!(fa.resolve(&FilterSection::default(), Variant::FastX2).unwrap().q, 4);
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        let mut args = empty_args();
        args.search_radius = Some(0.0);
        assert!(args.resolve(&MatchSection::default()).is_err());
        assert!(toml::from_str::<FileConfig>("[match]\nradius = 3\n").is_err());
    }
}
