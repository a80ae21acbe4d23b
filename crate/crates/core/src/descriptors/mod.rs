//! Patch descriptors: WHT signatures and the kd-tree used for seeding, and
//! the matching costs evaluated during the search.

pub mod cost;
pub mod kdtree;
pub mod wht;

pub use cost::{
    census_cost, census_max_cost, feature_cost, member_offsets, CensusScale, CensusTerm, DataTerm, FeatureScale,
    FeatureTerm, PatchCost,
};
pub use kdtree::{build_kdtree, KdTree};
pub use wht::{wht_signature, wht_signatures, wht_signatures_at, WhtVector, WHT_DIM};
