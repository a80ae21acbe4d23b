use std::time::{Duration, Instant};

use super::field::FlowField;
use super::params::{MatchParams, Stage};
use super::passes::{build_tree, propagate_pass, random_search_pass, rescore, seed_from_kdtree, PropagationDirection, SearchBounds};
use crate::descriptors::{CensusTerm, DataTerm};
use crate::error::{FlowError, Result};
use crate::imageio::{build_scale_space, LabImage, ScaleSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PassKind {
    Propagation(PropagationDirection),
    RandomSearch { radius: f32 },
}

/// Where in the schedule a pass ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassInfo {
    pub stage: usize,
    pub lattice: usize,
    pub sub_scale: usize,
    /// Running index of the pass within its stage.
    pub index: usize,
    pub kind: PassKind,
}

/// Hooks into a running match. All methods default to no-ops.
pub trait MatchObserver {
    fn stage_started(&mut self, _stage: usize, _spec: &Stage, _field: &FlowField) {}
    fn pass_finished(&mut self, _pass: &PassInfo, _field: &FlowField) {}
    /// Return true to receive `visit` for every pixel of every propagation.
    fn wants_visits(&self) -> bool {
        false
    }
    fn visit(&mut self, _pass: &PassInfo, _x: usize, _y: usize) {}
    fn timing(&mut self, _label: &str, _elapsed: Duration) {}
}

pub struct NoObserver;

impl MatchObserver for NoObserver {}

/// Match with the census data term on prebuilt scale spaces.
pub fn run_variant(ss1: &ScaleSpace, ss2: &ScaleSpace, params: &MatchParams) -> Result<FlowField> {
    let term = CensusTerm::new(ss1, ss2)?;
    run_variant_with(ss1.base(), ss2.base(), &term, params, &mut NoObserver)
}

/// Build the scale spaces the schedule needs and match `img1` to `img2`.
pub fn compute_flow(img1: &LabImage, img2: &LabImage, params: &MatchParams) -> Result<FlowField> {
    params.validate()?;
    let scales = params.required_scales();
    let (ss1, ss2) = rayon::join(|| build_scale_space(img1, &scales), || build_scale_space(img2, &scales));
    run_variant(&ss1?, &ss2?, params)
}

/// Full pipeline with an arbitrary data term: kd-tree seeding on the
/// coarsest lattice, then every stage of the schedule.
pub fn run_variant_with(
    img1: &LabImage,
    img2: &LabImage,
    data: &dyn DataTerm,
    params: &MatchParams,
    obs: &mut dyn MatchObserver,
) -> Result<FlowField> {
    params.validate()?;
    let dims = (img1.width(), img1.height());
    for d in [(img2.width(), img2.height()), data.dims()] {
        if d != dims {
            return Err(FlowError::DimensionMismatch { expected: dims, actual: d });
        }
    }
    let t = Instant::now();
    let tree = build_tree(img2, params.r, params.leaf_size, params.tree_subsample())?;
    obs.timing("kdtree", t.elapsed());

    let t = Instant::now();
    let first = &params.stages[0];
    let cost = data.at_scale(first.sub_scale, params.r, Some(first.lattice))?;
    let ff = seed_from_kdtree(img1, &tree, cost.as_ref(), first.lattice, params.r)?;
    drop(cost);
    obs.timing("seed", t.elapsed());

    run_stages(ff, data, params, obs)
}

/// Run the schedule starting from an arbitrary field. Costs are recomputed
/// at the start of every stage; pixels off the stage lattice are dropped.
pub fn run_stages(
    mut ff: FlowField,
    data: &dyn DataTerm,
    params: &MatchParams,
    obs: &mut dyn MatchObserver,
) -> Result<FlowField> {
    params.validate()?;
    if ff.dims() != data.dims() {
        return Err(FlowError::DimensionMismatch {
            expected: data.dims(),
            actual: ff.dims(),
        });
    }
    let (w, h) = ff.dims();
    let mut pass_key = 0u64;
    for (si, stage) in params.stages.iter().enumerate() {
        let t = Instant::now();
        let (n, ns) = (stage.lattice, stage.sub_scale);
        let cost = data.at_scale(ns, params.r, Some(n))?;
        let bounds = SearchBounds::new(w, h, params.r * ns);
        rescore(&mut ff, cost.as_ref(), n, &bounds);
        obs.stage_started(si, stage, &ff);

        let mut index = 0;
        let mut props = 0;
        for block in &stage.blocks {
            let radius = block.radius_mult * params.search_radius * ns as f32;
            for p in 0..block.propagations {
                if p > 0 {
                    random_search_pass(&mut ff, cost.as_ref(), n, radius, &bounds, params.seed, pass_key, params.integer_search);
                    pass_key += 1;
                    let info = PassInfo {
                        stage: si,
                        lattice: n,
                        sub_scale: ns,
                        index,
                        kind: PassKind::RandomSearch { radius },
                    };
                    obs.pass_finished(&info, &ff);
                    index += 1;
                }
                let dir = PropagationDirection::nth(props);
                props += 1;
                let info = PassInfo {
                    stage: si,
                    lattice: n,
                    sub_scale: ns,
                    index,
                    kind: PassKind::Propagation(dir),
                };
                if obs.wants_visits() {
                    propagate_pass(&mut ff, cost.as_ref(), n, dir, &bounds, &mut |x, y| obs.visit(&info, x, y));
                } else {
                    propagate_pass(&mut ff, cost.as_ref(), n, dir, &bounds, &mut |_, _| {});
                }
                obs.pass_finished(&info, &ff);
                index += 1;
            }
        }
        obs.timing(&format!("stage {si} n={n} n*={ns}"), t.elapsed());
    }
    Ok(ff)
}
