//! Metrics, flow file formats, visualisation and analysis tools.

mod color;
mod fill;
mod formats;
mod metrics;
mod nnf;
mod sieve;

pub use color::{auto_max_magnitude, flow_to_color};
pub use fill::{fill_dense, fill_dense_k, FILL_NEIGHBOURS};
pub use formats::{
    decode_flo, encode_flo, kitti_decode, kitti_encode, read_flo, read_flow, read_kitti_png, write_flo, write_flow,
    write_kitti_png, FlowFormat, FLO_TAG,
};
pub use metrics::{compute_metrics, GroundTruth, MetricsReport};
pub use nnf::{brute_force_nnf, NNF_GUARD};
pub use sieve::{sieve_analysis, write_sieve_csv, SieveBin, SieveConfig, SieveCurve, SieveParams, DEFAULT_BINS};
