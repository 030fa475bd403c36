//! Evaluation metrics: median errors, nested accuracy levels, threshold
//! sweeps with retained ratios and normalized errors, per-class convergence
//! curves, and step-budget overhead accounting.
//!
//! Statistics over an empty retained set are reported as undefined rather
//! than zero, so a fully filtered scene can never fake perfect accuracy.

use std::io::Write;

use crate::error::{CoreError, Result};
use crate::geometry::{pose_error, rot_error, trans_error, Pose, PoseError};
use crate::refine::RefineTrace;
use crate::uncertainty::{GatingMode, GatingPolicy, ScoredQuery};

/// The standard nested accuracy thresholds: (meters, degrees) for the high,
/// medium and low levels.
pub const DEFAULT_ACCURACY_THRESHOLDS: [(f64, f64); 3] = [(0.25, 2.0), (0.5, 5.0), (5.0, 10.0)];

/// Percentage of predictions within each nested (meters, degrees) level.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyLevels {
    pub high: f64,
    pub medium: f64,
    pub low: f64,
    pub thresholds: [(f64, f64); 3],
}

/// Componentwise median translation / rotation error. Even-sized inputs
/// average the two middle values.
pub fn median_errors(results: &[(Pose, Pose)]) -> Result<PoseError> {
    if results.is_empty() {
        return Err(CoreError::InvalidInput("median of an empty result set".into()));
    }
    let terr: Vec<f64> = results.iter().map(|(p, g)| trans_error(p, g)).collect();
    let rerr: Vec<f64> = results.iter().map(|(p, g)| rot_error(p, g)).collect();
    Ok(PoseError {
        trans_m: median(terr),
        rot_deg: median(rerr),
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// A prediction counts at a level iff its translation error is within the
/// meters bound AND its rotation error within the degrees bound.
pub fn accuracy_levels(results: &[(Pose, Pose)], thresholds: [(f64, f64); 3]) -> Result<AccuracyLevels> {
    if results.is_empty() {
        return Err(CoreError::InvalidInput(
            "accuracy over an empty result set is undefined".into(),
        ));
    }
    for w in thresholds.windows(2) {
        if w[0].0 > w[1].0 || w[0].1 > w[1].1 {
            return Err(CoreError::InvalidInput(format!(
                "accuracy thresholds must be nested, got {thresholds:?}"
            )));
        }
    }
    let total = results.len() as f64;
    let pct_within = |m: f64, deg: f64| {
        let hits = results
            .iter()
            .filter(|(p, g)| {
                let e = pose_error(p, g);
                e.trans_m <= m && e.rot_deg <= deg
            })
            .count();
        hits as f64 / total * 100.0
    };
    Ok(AccuracyLevels {
        high: pct_within(thresholds[0].0, thresholds[0].1),
        medium: pct_within(thresholds[1].0, thresholds[1].1),
        low: pct_within(thresholds[2].0, thresholds[2].1),
        thresholds,
    })
}

/// One point of a reliability-threshold sweep. Statistics are `None` when
/// the retained set is empty (or when the normalization anchor is).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub gamma: f64,
    /// Retained fraction of the full query set, in `[0, 1]`.
    pub retained_ratio: f64,
    pub mean_terr: Option<f64>,
    pub mean_rerr: Option<f64>,
    pub median_terr: Option<f64>,
    pub median_rerr: Option<f64>,
    /// Mean errors divided by the sweep's first-point mean, 1.0 there.
    pub norm_terr: Option<f64>,
    pub norm_rerr: Option<f64>,
}

/// Sweep the reliability threshold over an ascending grid: per point, retain
/// queries with score strictly above gamma and report their error stats.
pub fn threshold_sweep(scored: &[ScoredQuery], gammas: &[f64]) -> Result<Vec<SweepPoint>> {
    if gammas.is_empty() {
        return Err(CoreError::InvalidInput("empty sweep grid".into()));
    }
    if gammas.windows(2).any(|w| w[0] > w[1]) {
        return Err(CoreError::InvalidInput("sweep grid must be ascending".into()));
    }
    if scored.is_empty() {
        return Err(CoreError::InvalidInput("sweep over an empty query set".into()));
    }
    if let Some(q) = scored.iter().find(|s| s.gt.is_none()) {
        return Err(CoreError::InvalidInput(format!(
            "sweep needs ground truth, query `{}` has none",
            q.id
        )));
    }

    let total = scored.len() as f64;
    let mut anchor: Option<(f64, f64)> = None;
    let mut out = Vec::with_capacity(gammas.len());
    for (i, &gamma) in gammas.iter().enumerate() {
        let retained: Vec<&ScoredQuery> = scored.iter().filter(|s| s.score.value > gamma).collect();
        let ratio = retained.len() as f64 / total;
        let (mean_terr, mean_rerr, median_terr, median_rerr) = if retained.is_empty() {
            (None, None, None, None)
        } else {
            let te: Vec<f64> = retained
                .iter()
                .map(|s| trans_error(&s.predicted, s.gt.as_ref().unwrap()))
                .collect();
            let re: Vec<f64> = retained
                .iter()
                .map(|s| rot_error(&s.predicted, s.gt.as_ref().unwrap()))
                .collect();
            (
                Some(mean(&te)),
                Some(mean(&re)),
                Some(median(te)),
                Some(median(re)),
            )
        };
        if i == 0 {
            anchor = mean_terr.zip(mean_rerr);
        }
        let norm = |m: Option<f64>, a: f64| m.map(|v| v / a).filter(|v| v.is_finite());
        let (norm_terr, norm_rerr) = match anchor {
            Some((at, ar)) => (norm(mean_terr, at), norm(mean_rerr, ar)),
            None => (None, None),
        };
        out.push(SweepPoint {
            gamma,
            retained_ratio: ratio,
            mean_terr,
            mean_rerr,
            median_terr,
            median_rerr,
            norm_terr,
            norm_rerr,
        });
    }
    Ok(out)
}

/// Refinement class labels for convergence curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefineClass {
    /// High similarity: score strictly above the threshold.
    Hs,
    /// Low similarity.
    Ls,
}

impl RefineClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            RefineClass::Hs => "hs",
            RefineClass::Ls => "ls",
        }
    }
}

/// Per-iteration mean errors of one class, indices `0..=max_iter` over the
/// whole input; shorter traces carry their final value forward.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    pub class: RefineClass,
    pub mean_terr: Vec<f64>,
    pub mean_rerr: Vec<f64>,
}

/// Mean error per iteration for each class present in the input.
pub fn convergence_curves(items: &[(&RefineTrace, RefineClass)]) -> Result<Vec<ConvergenceCurve>> {
    if let Some((t, _)) = items
        .iter()
        .find(|(t, _)| t.points.iter().any(|p| p.trans_err_m.is_none()))
    {
        return Err(CoreError::InvalidInput(format!(
            "convergence curves need ground-truth errors, trace `{}` has none",
            t.id
        )));
    }
    let max_iter = items.iter().map(|(t, _)| t.steps_used).max().unwrap_or(0);

    let mut out = Vec::new();
    for class in [RefineClass::Hs, RefineClass::Ls] {
        let traces: Vec<&RefineTrace> = items
            .iter()
            .filter(|(_, c)| *c == class)
            .map(|(t, _)| *t)
            .collect();
        if traces.is_empty() {
            continue;
        }
        let mut mean_terr = Vec::with_capacity(max_iter + 1);
        let mut mean_rerr = Vec::with_capacity(max_iter + 1);
        for iter in 0..=max_iter {
            let at = |t: &'_ RefineTrace| t.points[iter.min(t.steps_used)].clone();
            mean_terr.push(mean(
                &traces.iter().map(|t| at(t).trans_err_m.unwrap()).collect::<Vec<_>>(),
            ));
            mean_rerr.push(mean(
                &traces.iter().map(|t| at(t).rot_err_deg.unwrap()).collect::<Vec<_>>(),
            ));
        }
        out.push(ConvergenceCurve {
            class,
            mean_terr,
            mean_rerr,
        });
    }
    Ok(out)
}

/// Step-budget accounting of a scored batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    /// Mean assigned budget over non-dropped queries.
    pub avg_steps: f64,
    /// `(ls - avg_steps) / ls * 100`: saving versus refining everything
    /// with the uniform `ls` budget.
    pub reduction_pct: f64,
}

/// Compute the budget saving of gated refinement over the uniform schedule.
pub fn overhead_report(scored: &[ScoredQuery], policy: &GatingPolicy) -> Result<OverheadReport> {
    if policy.mode != GatingMode::Refine {
        return Err(CoreError::InvalidInput(
            "overhead accounting applies to refine mode only".into(),
        ));
    }
    let budgets: Vec<f64> = scored
        .iter()
        .filter(|s| !s.dropped)
        .map(|s| s.steps as f64)
        .collect();
    if budgets.is_empty() {
        return Err(CoreError::InvalidInput("overhead of an empty batch is undefined".into()));
    }
    let avg_steps = mean(&budgets);
    let reduction_pct = if policy.ls_steps == 0 {
        0.0
    } else {
        (policy.ls_steps as f64 - avg_steps) / policy.ls_steps as f64 * 100.0
    };
    Ok(OverheadReport {
        avg_steps,
        reduction_pct,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(CoreError::InvalidInput(format!(
            "rank correlation needs equal lengths, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(CoreError::InvalidInput(
            "rank correlation needs at least two samples".into(),
        ));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(CoreError::InvalidInput(
            "rank correlation undefined for a constant sequence".into(),
        ));
    }
    Ok(cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j].
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Write the sweep CSV:
/// `gamma,retained_ratio,mean_terr,mean_rerr,median_terr,median_rerr,norm_terr,norm_rerr`.
/// Undefined statistics render as `nan`.
pub fn write_sweep_csv<W: Write>(w: &mut W, points: &[SweepPoint]) -> Result<()> {
    writeln!(
        w,
        "gamma,retained_ratio,mean_terr,mean_rerr,median_terr,median_rerr,norm_terr,norm_rerr"
    )?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            p.gamma,
            p.retained_ratio,
            cell(p.mean_terr),
            cell(p.mean_rerr),
            cell(p.median_terr),
            cell(p.median_rerr),
            cell(p.norm_terr),
            cell(p.norm_rerr),
        )?;
    }
    Ok(())
}

/// Write convergence curves as `iter,class,mean_terr,mean_rerr` rows.
pub fn write_convergence_csv<W: Write>(w: &mut W, curves: &[ConvergenceCurve]) -> Result<()> {
    writeln!(w, "iter,class,mean_terr,mean_rerr")?;
    for c in curves {
        for (i, (te, re)) in c.mean_terr.iter().zip(&c.mean_rerr).enumerate() {
            writeln!(w, "{i},{},{te},{re}", c.class.as_str())?;
        }
    }
    Ok(())
}

/// Inputs of the plain-text summary block.
#[derive(Debug, Clone, Default)]
pub struct SummaryStats {
    pub total: usize,
    pub retained: Option<usize>,
    pub full_median: Option<PoseError>,
    pub full_accuracy: Option<AccuracyLevels>,
    pub retained_median: Option<PoseError>,
    pub retained_accuracy: Option<AccuracyLevels>,
    pub avg_steps: Option<f64>,
    pub uniform_steps: Option<usize>,
    pub reduction_pct: Option<f64>,
}

/// Render the summary text block: median errors as `m/deg` pairs, accuracy
/// percentages at one decimal, undefined statistics spelled out.
pub fn format_summary(s: &SummaryStats) -> String {
    let med = |m: &Option<PoseError>| match m {
        Some(e) => format!("{:.3}/{:.2}", e.trans_m, e.rot_deg),
        None => "undefined".to_string(),
    };
    let acc = |a: &Option<AccuracyLevels>| match a {
        Some(a) => format!("{:.1}/{:.1}/{:.1}", a.high, a.medium, a.low),
        None => "undefined".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!("queries: {}\n", s.total));
    if let Some(r) = s.retained {
        let pct = if s.total > 0 {
            r as f64 / s.total as f64 * 100.0
        } else {
            0.0
        };
        out.push_str(&format!("retained: {r} ({pct:.1}%)\n"));
    }
    out.push_str("set        med_terr/med_rerr [m/deg]   high/medium/low [%]\n");
    out.push_str(&format!(
        "full       {:<27} {}\n",
        med(&s.full_median),
        acc(&s.full_accuracy)
    ));
    if s.retained.is_some() {
        out.push_str(&format!(
            "retained   {:<27} {}\n",
            med(&s.retained_median),
            acc(&s.retained_accuracy)
        ));
    }
    if let Some(avg) = s.avg_steps {
        let uniform = s
            .uniform_steps
            .map(|u| u.to_string())
            .unwrap_or_else(|| "-".into());
        let red = s
            .reduction_pct
            .map(|r| format!("{r:.1}%"))
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "avg steps: {avg:.1}   uniform: {uniform}   reduction: {red}\n"
        ));
    }
    out
}
