//! Subcommand implementations. Each returns the process exit code: 0 for
//! success, 1 when per-item failures occurred in lenient mode. Usage and
//! format errors propagate as `Err` and exit with code 2.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use hrapr_core::error::{CoreError, Result};
use hrapr_core::eval::{
    accuracy_levels, convergence_curves, format_summary, median_errors, overhead_report,
    threshold_sweep, write_convergence_csv, write_sweep_csv, RefineClass, SummaryStats,
    DEFAULT_ACCURACY_THRESHOLDS,
};
use hrapr_core::geometry::Pose;
use hrapr_core::refine::{
    scheduled_refine_batch, summarize_batch, write_batch_summary_csv, write_trace_csv, EarlyStop,
    RefinerParams, SyntheticFieldRefiner,
};
use hrapr_core::replay::{load_queries, QueryLabel, QueryRecord};
use hrapr_core::store::{
    build_database, read_embeddings_file, read_poses_file, PoseFeatureDB,
};
use hrapr_core::synth::generate_scene;
use hrapr_core::uncertainty::{
    reliable_fraction, score_batch, write_scored_csv, GatingMode, ScoredQuery,
};
use hrapr_core::write_atomic;

use crate::config::{resolve, CommonOpts, Resolved};

fn load_db(stem: &Path, resolved: &Resolved) -> Result<PoseFeatureDB> {
    PoseFeatureDB::load_with_index(stem, resolved.run.index())
}

fn check_dims(db: &PoseFeatureDB, query_dim: usize) -> Result<()> {
    if db.dim() != query_dim {
        return Err(CoreError::DimensionMismatch(format!(
            "query files have dim {query_dim}, database has dim {}",
            db.dim()
        )));
    }
    Ok(())
}

fn require_gt(queries: &[QueryRecord]) -> Result<()> {
    if let Some(q) = queries.iter().find(|q| q.gt.is_none()) {
        return Err(CoreError::InvalidInput(format!(
            "this command needs ground truth, query `{}` has none",
            q.id
        )));
    }
    Ok(())
}

fn gt_pairs(queries: &[QueryRecord]) -> Vec<(Pose, Pose)> {
    queries
        .iter()
        .filter_map(|q| q.gt.map(|g| (q.predicted, g)))
        .collect()
}

// ---------------------------------------------------------------------------
// build-db
// ---------------------------------------------------------------------------

pub fn build_db(poses: &Path, feat: &Path, out_stem: &Path, opts: &CommonOpts) -> Result<i32> {
    let resolved = resolve(opts)?;
    let (pose_dim, parsed) = read_poses_file(poses)?;
    let (feat_dim, rows) = read_embeddings_file(feat)?;
    if feat_dim != pose_dim {
        return Err(CoreError::DimensionMismatch(format!(
            "{} declares dim {pose_dim} but {} has dim {feat_dim}",
            poses.display(),
            feat.display()
        )));
    }
    if rows.len() != parsed.len() {
        return Err(CoreError::InvalidInput(format!(
            "{} has {} entries but {} has {} rows",
            poses.display(),
            parsed.len(),
            feat.display(),
            rows.len()
        )));
    }
    let records = parsed
        .into_iter()
        .zip(rows)
        .map(|((id, pose), row)| (id, pose, row))
        .collect();
    let db = build_database(records, pose_dim, resolved.run.index())?;
    db.save(out_stem)?;
    println!(
        "built database: count {} dim {} payload {} bytes",
        db.len(),
        db.dim(),
        db.embedding_payload_bytes()
    );
    Ok(0)
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

pub fn score(db_stem: &Path, queries_stem: &Path, out: &Path, strict: bool, opts: &CommonOpts) -> Result<i32> {
    let resolved = resolve(opts)?;
    let db = load_db(db_stem, &resolved)?;
    let (queries, dim) = load_queries(queries_stem)?;
    check_dims(&db, dim)?;
    let policy = resolved.run.policy()?;

    let batch = score_batch(&db, &queries, &policy, resolved.run.d_th, strict)?;
    let mut buf = Vec::new();
    write_scored_csv(&mut buf, &batch.scored)?;
    write_atomic(out, &buf)?;

    let r = reliable_fraction(&batch.scored);
    println!(
        "scored {} queries: {} reliable (r = {:.4}), {} failed",
        batch.scored.len(),
        batch.scored.iter().filter(|s| s.reliable).count(),
        r,
        batch.failures.len()
    );
    for f in &batch.failures {
        eprintln!("warning: query `{}` failed: {}", f.id, f.error);
    }
    Ok(if batch.failures.is_empty() { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn sweep(db_stem: &Path, queries_stem: &Path, out: &Path, opts: &CommonOpts) -> Result<i32> {
    let resolved = resolve(opts)?;
    let db = load_db(db_stem, &resolved)?;
    let (queries, dim) = load_queries(queries_stem)?;
    check_dims(&db, dim)?;
    require_gt(&queries)?;
    let policy = resolved.run.policy()?;

    let batch = score_batch(&db, &queries, &policy, resolved.run.d_th, true)?;
    let points = threshold_sweep(&batch.scored, &resolved.run.grid)?;
    for p in &points {
        if p.retained_ratio < 0.01 {
            eprintln!(
                "warning: gamma {} retains {:.2}% of queries",
                p.gamma,
                p.retained_ratio * 100.0
            );
        }
    }
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &points)?;
    write_atomic(out, &buf)?;
    println!("sweep over {} thresholds written to {}", points.len(), out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// refine
// ---------------------------------------------------------------------------

fn trace_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.csv")
}

#[allow(clippy::too_many_arguments)]
pub fn refine(
    db_stem: &Path,
    queries_stem: &Path,
    scene_manifest: &Path,
    out_dir: &Path,
    strict: bool,
    early_stop: bool,
    no_traces: bool,
    opts: &CommonOpts,
) -> Result<i32> {
    let mut with_manifest = opts.clone();
    // The scene manifest doubles as a config file for its run keys; an
    // explicit --config wins.
    if with_manifest.config.is_none() {
        with_manifest.config = Some(scene_manifest.to_path_buf());
    }
    let resolved = resolve(&with_manifest)?;

    let mut scene_spec = resolved.scene.clone();
    for (k, v) in crate::config::read_kv_file(scene_manifest)? {
        scene_spec.apply_kv(&k, &v)?;
    }
    let scene = generate_scene(&scene_spec)?;

    let db = load_db(db_stem, &resolved)?;
    let (queries, dim) = load_queries(queries_stem)?;
    check_dims(&db, dim)?;
    if dim != scene.spec.dim {
        return Err(CoreError::DimensionMismatch(format!(
            "queries dim {dim} vs scene dim {}",
            scene.spec.dim
        )));
    }
    let policy = resolved.run.policy()?;
    if policy.mode != GatingMode::Refine {
        return Err(CoreError::InvalidInput("refinement needs mode = refine".into()));
    }

    let batch = score_batch(&db, &queries, &policy, resolved.run.d_th, strict)?;
    let embeddings: HashMap<&str, &hrapr_core::FeatureEmbedding> =
        queries.iter().map(|q| (q.id.as_str(), &q.embedding)).collect();

    let stop = early_stop.then(EarlyStop::default);
    let outcome = scheduled_refine_batch(
        &batch.scored,
        |s: &ScoredQuery| {
            let emb = embeddings.get(s.id.as_str()).ok_or_else(|| {
                CoreError::InvalidInput(format!("no embedding for query `{}`", s.id))
            })?;
            SyntheticFieldRefiner::new(&scene, emb, RefinerParams::default())
        },
        stop,
    );

    std::fs::create_dir_all(out_dir)?;
    let rows = summarize_batch(&batch.scored, &outcome.traces);
    let mut buf = Vec::new();
    write_batch_summary_csv(&mut buf, &rows)?;
    write_atomic(&out_dir.join("summary.csv"), &buf)?;

    if !no_traces {
        let traces_dir = out_dir.join("traces");
        std::fs::create_dir_all(&traces_dir)?;
        for trace in &outcome.traces {
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, trace)?;
            write_atomic(&traces_dir.join(trace_file_name(&trace.id)), &buf)?;
        }
    }

    let has_gt = queries.iter().all(|q| q.gt.is_some());
    if has_gt && !outcome.traces.is_empty() {
        let class_of: HashMap<&str, RefineClass> = batch
            .scored
            .iter()
            .map(|s| {
                (s.id.as_str(), if s.reliable { RefineClass::Hs } else { RefineClass::Ls })
            })
            .collect();
        let items: Vec<_> = outcome
            .traces
            .iter()
            .map(|t| (t, class_of[t.id.as_str()]))
            .collect();
        let curves = convergence_curves(&items)?;
        let mut buf = Vec::new();
        write_convergence_csv(&mut buf, &curves)?;
        write_atomic(&out_dir.join("convergence.csv"), &buf)?;
    }

    let overhead = overhead_report(&batch.scored, &policy)?;
    println!(
        "refined {} queries: avg steps {:.2} (assigned {:.2}, uniform {}, reduction {:.1}%)",
        outcome.traces.len(),
        outcome.avg_steps,
        overhead.avg_steps,
        policy.ls_steps,
        overhead.reduction_pct
    );
    let failures = batch.failures.len() + outcome.failures.len();
    for f in &batch.failures {
        eprintln!("warning: scoring `{}` failed: {}", f.id, f.error);
    }
    for f in &outcome.failures {
        eprintln!("warning: refining `{}` failed: {}", f.id, f.error);
    }
    Ok(if failures == 0 { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub struct SynthOverrides {
    pub seed: Option<u64>,
    pub dim: Option<usize>,
    pub train: Option<usize>,
    pub near: Option<usize>,
    pub far: Option<usize>,
    pub extent: Option<f64>,
    pub feature_noise: Option<f64>,
}

pub fn synth(out_stem: &Path, over: &SynthOverrides, opts: &CommonOpts) -> Result<i32> {
    let resolved = resolve(opts)?;
    let mut spec = resolved.scene.clone();
    if let Some(v) = over.seed {
        spec.seed = v;
    }
    if let Some(v) = over.dim {
        spec.dim = v;
    }
    if let Some(v) = over.train {
        spec.num_train = v;
    }
    if let Some(v) = over.near {
        spec.num_test_near = v;
    }
    if let Some(v) = over.far {
        spec.num_test_far = v;
    }
    if let Some(v) = over.extent {
        spec.extent_m = v;
    }
    if let Some(v) = over.feature_noise {
        spec.feature_noise = v;
    }

    let scene = generate_scene(&spec)?;
    scene.export(out_stem)?;

    let mode = match resolved.run.mode {
        GatingMode::Refine => "refine",
        GatingMode::Filter => "filter",
    };
    let mut manifest = String::new();
    manifest.push_str("# scene\n");
    for (k, v) in spec.manifest_entries() {
        manifest.push_str(&format!("{k} = {v}\n"));
    }
    manifest.push_str("# run parameters\n");
    manifest.push_str(&format!("d_th = {}\n", resolved.run.d_th));
    manifest.push_str(&format!("gamma = {}\n", resolved.run.gamma));
    manifest.push_str(&format!("hs_steps = {}\n", resolved.run.hs_steps));
    manifest.push_str(&format!("ls_steps = {}\n", resolved.run.ls_steps));
    manifest.push_str(&format!("mode = {mode}\n"));
    let manifest_path = manifest_path(out_stem);
    write_atomic(&manifest_path, manifest.as_bytes())?;

    println!(
        "scene: {} train, {} near + {} far queries, dim {}",
        scene.train.len(),
        spec.num_test_near,
        spec.num_test_far,
        spec.dim
    );
    let split: Vec<(QueryLabel, &str)> = vec![(QueryLabel::Near, "near"), (QueryLabel::Far, "far")];
    let mut medians = Vec::new();
    for (label, name) in split {
        let subset: Vec<&QueryRecord> = scene.queries.iter().filter(|q| q.label == label).collect();
        if subset.is_empty() {
            continue;
        }
        let pairs: Vec<(Pose, Pose)> = subset.iter().map(|q| (q.predicted, q.gt.unwrap())).collect();
        let med = median_errors(&pairs)?;
        println!("{name} median errors: {:.4} m / {:.3} deg", med.trans_m, med.rot_deg);
        medians.push(med);
    }
    if medians.len() == 2 {
        println!(
            "far/near ratio: {:.2}x trans, {:.2}x rot",
            medians[1].trans_m / medians[0].trans_m,
            medians[1].rot_deg / medians[0].rot_deg
        );
    }
    println!("manifest: {}", manifest_path.display());
    Ok(0)
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    stem.with_file_name(name)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub fn evaluate(
    queries_stem: &Path,
    db_stem: Option<&Path>,
    out: Option<&Path>,
    opts: &CommonOpts,
) -> Result<i32> {
    let resolved = resolve(opts)?;
    let (queries, _) = load_queries(queries_stem)?;
    require_gt(&queries)?;
    if queries.is_empty() {
        return Err(CoreError::InvalidInput("no queries to evaluate".into()));
    }

    let full_pairs = gt_pairs(&queries);
    let mut stats = SummaryStats {
        total: queries.len(),
        full_median: Some(median_errors(&full_pairs)?),
        full_accuracy: Some(accuracy_levels(&full_pairs, DEFAULT_ACCURACY_THRESHOLDS)?),
        ..SummaryStats::default()
    };

    if let Some(db_stem) = db_stem {
        let db = load_db(db_stem, &resolved)?;
        check_dims(&db, queries[0].embedding.dim())?;
        let mut policy = resolved.run.policy()?;
        policy.mode = GatingMode::Filter;
        let batch = score_batch(&db, &queries, &policy, resolved.run.d_th, true)?;
        let retained: Vec<(Pose, Pose)> = batch
            .scored
            .iter()
            .filter(|s| !s.dropped)
            .map(|s| (s.predicted, s.gt.unwrap()))
            .collect();
        stats.retained = Some(retained.len());
        if !retained.is_empty() {
            stats.retained_median = Some(median_errors(&retained)?);
            stats.retained_accuracy = Some(accuracy_levels(&retained, DEFAULT_ACCURACY_THRESHOLDS)?);
        }
    }

    let text = format_summary(&stats);
    print!("{text}");
    if let Some(path) = out {
        write_atomic(path, text.as_bytes())?;
    }
    Ok(0)
}
