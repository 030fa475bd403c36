//! Budgeted iterative pose refinement behind a pluggable refiner interface.
//!
//! The refinement loop is refiner-agnostic: anything that can evaluate a
//! loss at a pose and propose a non-increasing step can be driven by it,
//! with the per-query step budget coming from the uncertainty gate. The
//! built-in [`SyntheticFieldRefiner`] minimizes `1 - cos(field(p), target)`
//! against a synthetic scene's feature field using central finite
//! differences and a backtracking line search, which guarantees monotone
//! loss traces.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::geometry::{pose_error, Pose, PoseError, Quat};
use crate::store::FeatureEmbedding;
use crate::synth::SynthScene;
use crate::uncertainty::ScoredQuery;

/// Behavioral contract for one query's refiner.
///
/// `loss` must be deterministic for a fixed scene and query; `step` must
/// never return a non-finite pose and should return the input pose when it
/// cannot make progress.
pub trait Refiner {
    fn loss(&self, pose: &Pose) -> Result<f64>;
    /// Propose the next pose; returns the new pose and its loss.
    fn step(&mut self, pose: &Pose) -> Result<(Pose, f64)>;
}

/// One recorded iteration of a refinement trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub pose: Pose,
    pub loss: f64,
    pub trans_err_m: Option<f64>,
    pub rot_err_deg: Option<f64>,
}

/// Full refinement history of one query, iteration 0 included.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineTrace {
    pub id: String,
    pub initial: Pose,
    /// `steps_used + 1` points; index is the iteration number.
    pub points: Vec<TracePoint>,
    pub steps_used: usize,
    pub early_stopped: bool,
}

impl RefineTrace {
    pub fn final_pose(&self) -> &Pose {
        &self.points.last().expect("trace has iteration 0").pose
    }

    pub fn final_loss(&self) -> f64 {
        self.points.last().expect("trace has iteration 0").loss
    }
}

/// Early-stop rule: stop once the loss decrease stays below `min_decrease`
/// for `patience` consecutive steps. Fixed-budget protocol runs keep this
/// off so step accounting stays exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub min_decrease: f64,
    pub patience: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        EarlyStop {
            min_decrease: 1e-10,
            patience: 3,
        }
    }
}

/// A refinement abort carrying the partial trace accumulated so far.
#[derive(Debug)]
pub struct RefineFailure {
    pub error: CoreError,
    pub partial: RefineTrace,
}

fn trace_point(pose: Pose, loss: f64, gt: Option<&Pose>) -> TracePoint {
    let err = gt.map(|g| pose_error(&pose, g));
    TracePoint {
        pose,
        loss,
        trans_err_m: err.map(|e| e.trans_m),
        rot_err_deg: err.map(|e| e.rot_deg),
    }
}

/// Drive a refiner for up to `budget` steps from `start`.
///
/// With `early_stop` unset this executes exactly `budget` step calls; budget
/// 0 returns the start pose untouched. Ground truth, when given, adds error
/// columns to every trace point.
pub fn refine<R: Refiner>(
    refiner: &mut R,
    id: &str,
    start: &Pose,
    budget: usize,
    gt: Option<&Pose>,
    early_stop: Option<EarlyStop>,
) -> std::result::Result<RefineTrace, Box<RefineFailure>> {
    let mut trace = RefineTrace {
        id: id.to_string(),
        initial: *start,
        points: Vec::with_capacity(budget + 1),
        steps_used: 0,
        early_stopped: false,
    };
    let fail = |error: CoreError, partial: RefineTrace| {
        Box::new(RefineFailure { error, partial })
    };

    let mut loss = match refiner.loss(start) {
        Ok(l) => l,
        Err(e) => return Err(fail(e.for_query(id), trace)),
    };
    trace.points.push(trace_point(*start, loss, gt));

    let mut pose = *start;
    let mut flat_streak = 0usize;
    for _ in 0..budget {
        let (next, next_loss) = match refiner.step(&pose) {
            Ok(r) => r,
            Err(e) => return Err(fail(e.for_query(id), trace)),
        };
        if !next.is_finite() || !next_loss.is_finite() {
            return Err(fail(
                CoreError::NonFinite(format!("refiner step for query `{id}`")),
                trace,
            ));
        }
        trace.steps_used += 1;
        trace.points.push(trace_point(next, next_loss, gt));

        if let Some(rule) = early_stop {
            if loss - next_loss < rule.min_decrease {
                flat_streak += 1;
            } else {
                flat_streak = 0;
            }
            if flat_streak >= rule.patience {
                trace.early_stopped = true;
                pose = next;
                break;
            }
        }
        pose = next;
        loss = next_loss;
    }
    let _ = pose;
    Ok(trace)
}

/// Tunables of the synthetic-field refiner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinerParams {
    /// Central-difference step for the three translation axes (meters).
    pub eps_t: f64,
    /// Central-difference step for the three rotation axes (radians).
    pub eps_r: f64,
    /// Line-search shrink factor in (0, 1).
    pub beta: f64,
    /// Max line-search backtracks before giving up on the step.
    pub max_backtracks: usize,
    /// Initial line-search step length along the negative gradient.
    pub step_scale: f64,
}

impl Default for RefinerParams {
    fn default() -> Self {
        RefinerParams {
            eps_t: 1e-3,
            eps_r: 1e-3,
            beta: 0.5,
            max_backtracks: 20,
            step_scale: 1.0,
        }
    }
}

/// Gradient-descent refiner minimizing `1 - cos(field(pose), target)` over
/// a synthetic scene's feature field.
pub struct SyntheticFieldRefiner<'a> {
    scene: &'a SynthScene,
    target: Vec<f64>,
    target_norm: f64,
    params: RefinerParams,
}

impl<'a> SyntheticFieldRefiner<'a> {
    /// Target from a stored (f32) embedding, e.g. a replayed query feature.
    pub fn new(
        scene: &'a SynthScene,
        target: &FeatureEmbedding,
        params: RefinerParams,
    ) -> Result<SyntheticFieldRefiner<'a>> {
        Self::with_target(scene, target.values().iter().map(|&v| v as f64).collect(), params)
    }

    /// Target as a full-precision vector.
    pub fn with_target(
        scene: &'a SynthScene,
        target: Vec<f64>,
        params: RefinerParams,
    ) -> Result<SyntheticFieldRefiner<'a>> {
        if target.len() != scene.spec.dim {
            return Err(CoreError::DimensionMismatch(format!(
                "target dim {} vs scene dim {}",
                target.len(),
                scene.spec.dim
            )));
        }
        if !(params.eps_t > 0.0 && params.eps_r > 0.0) {
            return Err(CoreError::InvalidInput(
                "finite-difference steps must be positive".into(),
            ));
        }
        if !(params.beta > 0.0 && params.beta < 1.0) {
            return Err(CoreError::InvalidInput(format!(
                "line-search shrink factor must lie in (0, 1), got {}",
                params.beta
            )));
        }
        let target_norm = norm(&target);
        if target_norm == 0.0 {
            return Err(CoreError::DegenerateEmbedding("zero-norm refinement target".into()));
        }
        Ok(SyntheticFieldRefiner {
            scene,
            target,
            target_norm,
            params,
        })
    }

    fn loss_of_field(&self, field: &[f64]) -> Result<f64> {
        let fnorm = norm(field);
        if fnorm == 0.0 {
            return Err(CoreError::DegenerateEmbedding("zero-norm field value".into()));
        }
        let dot: f64 = field.iter().zip(&self.target).map(|(a, b)| a * b).sum();
        Ok(1.0 - dot / (fnorm * self.target_norm))
    }

    fn loss_at(&self, pose: &Pose) -> Result<f64> {
        self.loss_of_field(&self.scene.feature_field(pose))
    }

    /// Move `alpha` along `dir`: translation directly, rotation as an
    /// axis-angle right-multiplication, renormalized.
    fn apply(&self, pose: &Pose, dir: &[f64; 6], alpha: f64) -> Result<Pose> {
        let t = [
            pose.t[0] + alpha * dir[0],
            pose.t[1] + alpha * dir[1],
            pose.t[2] + alpha * dir[2],
        ];
        let u = [alpha * dir[3], alpha * dir[4], alpha * dir[5]];
        let angle = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        let q = if angle > 0.0 {
            pose.q.mul(&Quat::from_axis_angle(u, angle)).renormalized()?
        } else {
            pose.q
        };
        Ok(Pose::new(t, q))
    }

    /// Central finite-difference gradient over the three translation axes
    /// and the three small-angle rotation axes.
    pub fn fd_gradient(&self, pose: &Pose) -> Result<[f64; 6]> {
        let mut g = [0.0f64; 6];
        for k in 0..3 {
            let mut hi = *pose;
            hi.t[k] += self.params.eps_t;
            let mut lo = *pose;
            lo.t[k] -= self.params.eps_t;
            g[k] = (self.loss_at(&hi)? - self.loss_at(&lo)?) / (2.0 * self.params.eps_t);
        }
        for k in 0..3 {
            let mut axis = [0.0f64; 3];
            axis[k] = 1.0;
            let rot = Quat::from_axis_angle(axis, self.params.eps_r);
            let inv = Quat::from_axis_angle(axis, -self.params.eps_r);
            let hi = Pose::new(pose.t, pose.q.mul(&rot));
            let lo = Pose::new(pose.t, pose.q.mul(&inv));
            g[3 + k] = (self.loss_at(&hi)? - self.loss_at(&lo)?) / (2.0 * self.params.eps_r);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("finite-difference gradient".into()));
        }
        Ok(g)
    }

    /// Translation part of the finite-difference gradient.
    pub fn fd_translation_gradient(&self, pose: &Pose) -> Result<[f64; 3]> {
        let g = self.fd_gradient(pose)?;
        Ok([g[0], g[1], g[2]])
    }

    /// Closed-form translation gradient of the loss, via the field's
    /// analytic Jacobian. Used to cross-check the finite differences.
    pub fn analytic_translation_gradient(&self, pose: &Pose) -> Result<[f64; 3]> {
        let field = self.scene.feature_field(pose);
        let jac = self.scene.field_translation_jacobian(pose);
        let fnorm = norm(&field);
        if fnorm == 0.0 {
            return Err(CoreError::DegenerateEmbedding("zero-norm field value".into()));
        }
        let dot: f64 = field.iter().zip(&self.target).map(|(a, b)| a * b).sum();

        let mut jt_g = [0.0f64; 3];
        let mut jt_f = [0.0f64; 3];
        for (i, row) in jac.iter().enumerate() {
            for k in 0..3 {
                jt_g[k] += row[k] * self.target[i];
                jt_f[k] += row[k] * field[i];
            }
        }
        let mut out = [0.0f64; 3];
        for k in 0..3 {
            out[k] = -jt_g[k] / (fnorm * self.target_norm)
                + dot * jt_f[k] / (fnorm.powi(3) * self.target_norm);
        }
        Ok(out)
    }
}

impl Refiner for SyntheticFieldRefiner<'_> {
    fn loss(&self, pose: &Pose) -> Result<f64> {
        self.loss_at(pose)
    }

    fn step(&mut self, pose: &Pose) -> Result<(Pose, f64)> {
        let base = self.loss_at(pose)?;
        let g = self.fd_gradient(pose)?;
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Below this the finite differences measure rounding noise, not a
        // descent direction.
        if gnorm < 1e-8 {
            return Ok((*pose, base));
        }
        let dir = [-g[0], -g[1], -g[2], -g[3], -g[4], -g[5]];

        let mut alpha = self.params.step_scale;
        for _ in 0..=self.params.max_backtracks {
            let candidate = self.apply(pose, &dir, alpha)?;
            let l = self.loss_at(&candidate)?;
            // Require a decrease above f64 rounding noise, otherwise the
            // search would accept meaningless nano-steps at convergence.
            if l < base - 1e-14 {
                return Ok((candidate, l));
            }
            alpha *= self.params.beta;
        }
        // No strict decrease found: hold position.
        Ok((*pose, base))
    }
}

/// Loss of the synthetic field refiner at a pose, as a free function.
pub fn synthetic_field_loss(scene: &SynthScene, target: &FeatureEmbedding, pose: &Pose) -> Result<f64> {
    SyntheticFieldRefiner::new(scene, target, RefinerParams::default())?.loss(pose)
}

/// Per-query failure of a batch refinement.
#[derive(Debug)]
pub struct RefineBatchFailure {
    pub id: String,
    pub error: CoreError,
    pub partial: RefineTrace,
}

/// Outcome of refining a scored batch.
#[derive(Debug)]
pub struct BatchRefineOutcome {
    /// Traces of completed refinements, in scored order (dropped queries and
    /// failures excluded).
    pub traces: Vec<RefineTrace>,
    pub failures: Vec<RefineBatchFailure>,
    /// Mean steps over completed, non-dropped queries.
    pub avg_steps: f64,
}

/// Refine every non-dropped query with its assigned budget. Per-query
/// failures are collected and the batch continues.
pub fn scheduled_refine_batch<R, F>(
    scored: &[ScoredQuery],
    make_refiner: F,
    early_stop: Option<EarlyStop>,
) -> BatchRefineOutcome
where
    R: Refiner,
    F: Fn(&ScoredQuery) -> Result<R> + Sync,
{
    let results: Vec<std::result::Result<RefineTrace, Box<RefineFailure>>> = scored
        .par_iter()
        .filter(|s| !s.dropped)
        .map(|s| {
            let mut refiner = make_refiner(s).map_err(|error| {
                Box::new(RefineFailure {
                    error: error.for_query(&s.id),
                    partial: RefineTrace {
                        id: s.id.clone(),
                        initial: s.predicted,
                        points: Vec::new(),
                        steps_used: 0,
                        early_stopped: false,
                    },
                })
            })?;
            refine(&mut refiner, &s.id, &s.predicted, s.steps, s.gt.as_ref(), early_stop)
        })
        .collect();

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err(f) => failures.push(RefineBatchFailure {
                id: f.partial.id.clone(),
                error: f.error,
                partial: f.partial,
            }),
        }
    }
    let avg_steps = if traces.is_empty() {
        0.0
    } else {
        traces.iter().map(|t| t.steps_used as f64).sum::<f64>() / traces.len() as f64
    };
    BatchRefineOutcome {
        traces,
        failures,
        avg_steps,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Write one trace as CSV: `iter,loss,tx,ty,tz,qw,qx,qy,qz[,terr_m,rerr_deg]`.
pub fn write_trace_csv<W: Write>(w: &mut W, trace: &RefineTrace) -> Result<()> {
    let with_errors = trace.points.first().is_some_and(|p| p.trans_err_m.is_some());
    if with_errors {
        writeln!(w, "iter,loss,tx,ty,tz,qw,qx,qy,qz,terr_m,rerr_deg")?;
    } else {
        writeln!(w, "iter,loss,tx,ty,tz,qw,qx,qy,qz")?;
    }
    for (i, p) in trace.points.iter().enumerate() {
        write!(
            w,
            "{i},{},{},{},{},{},{},{},{}",
            p.loss, p.pose.t[0], p.pose.t[1], p.pose.t[2], p.pose.q.w, p.pose.q.x, p.pose.q.y, p.pose.q.z
        )?;
        if with_errors {
            write!(w, ",{},{}", p.trans_err_m.unwrap(), p.rot_err_deg.unwrap())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// One row of the batch summary CSV.
#[derive(Debug, Clone)]
pub struct RefineSummaryRow {
    pub id: String,
    pub score: f64,
    pub reliable: bool,
    pub steps_used: usize,
    pub pre: Option<PoseError>,
    pub post: Option<PoseError>,
}

/// Pair completed traces with their scored queries by id.
pub fn summarize_batch(scored: &[ScoredQuery], traces: &[RefineTrace]) -> Vec<RefineSummaryRow> {
    let by_id: std::collections::HashMap<&str, &RefineTrace> =
        traces.iter().map(|t| (t.id.as_str(), t)).collect();
    scored
        .iter()
        .filter_map(|s| {
            let t = by_id.get(s.id.as_str())?;
            let pre = s.gt.as_ref().map(|g| pose_error(&s.predicted, g));
            let post = s.gt.as_ref().map(|g| pose_error(t.final_pose(), g));
            Some(RefineSummaryRow {
                id: s.id.clone(),
                score: s.score.value,
                reliable: s.reliable,
                steps_used: t.steps_used,
                pre,
                post,
            })
        })
        .collect()
}

/// Write the batch summary CSV:
/// `id,score,reliable,steps_used,pre_terr,pre_rerr,post_terr,post_rerr`.
/// Error cells are empty when ground truth is unavailable.
pub fn write_batch_summary_csv<W: Write>(w: &mut W, rows: &[RefineSummaryRow]) -> Result<()> {
    writeln!(w, "id,score,reliable,steps_used,pre_terr,pre_rerr,post_terr,post_rerr")?;
    for r in rows {
        let cell = |e: Option<PoseError>, f: fn(&PoseError) -> f64| {
            e.as_ref().map(|v| f(v).to_string()).unwrap_or_default()
        };
        writeln!(
            w,
            "{},{:.6},{},{},{},{},{},{}",
            r.id,
            r.score,
            r.reliable,
            r.steps_used,
            cell(r.pre, |e| e.trans_m),
            cell(r.pre, |e| e.rot_deg),
            cell(r.post, |e| e.trans_m),
            cell(r.post, |e| e.rot_deg),
        )?;
    }
    Ok(())
}
