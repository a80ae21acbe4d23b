//! Coarse-to-fine patch matching: kd-tree seeding, directional propagation
//! and bounded random search over multi-scale census costs.

mod engine;
mod field;
mod params;
mod passes;

pub use engine::{compute_flow, run_stages, run_variant, run_variant_with, MatchObserver, NoObserver, PassInfo, PassKind};
pub use field::FlowField;
pub use params::{default_stages, Block, MatchParams, Stage, Variant};
pub use passes::{
    build_tree, propagate_pass, random_search_pass, rescore, row_rng, seed_from_kdtree, PropagationDirection, SearchBounds,
};
