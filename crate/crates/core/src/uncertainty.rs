//! Similarity-based uncertainty scoring and step-budget gating.
//!
//! A query's predicted position retrieves nearby training entries; the
//! maximum cosine similarity between the query embedding and the retrieved
//! embeddings is the reliability score. An empty retrieval scores exactly 0.
//! The score is then compared against the threshold `gamma`: reliable
//! predictions (strictly above) get the small `hs` refinement budget,
//! unreliable ones the large `ls` budget, or are dropped entirely in filter
//! mode.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::geometry::Pose;
use crate::replay::QueryRecord;
use crate::store::{FeatureEmbedding, PoseFeatureDB};

/// Max cosine over the retrieved candidates, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScore {
    /// Max cosine in `[-1, 1]`; exactly `0.0` when nothing was retrieved.
    pub value: f64,
    /// Number of database entries within the search radius.
    pub retrieved_count: usize,
    /// Id of the entry achieving the max; ties go to the nearest position.
    pub best_match_id: Option<String>,
}

impl SimilarityScore {
    /// The empty-retrieval fallback score.
    pub fn empty() -> SimilarityScore {
        SimilarityScore {
            value: 0.0,
            retrieved_count: 0,
            best_match_id: None,
        }
    }
}

/// What happens to unreliable predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatingMode {
    /// Refine everything; reliable poses get `hs_steps`, the rest `ls_steps`.
    Refine,
    /// No refinement; unreliable poses are dropped from the output set.
    Filter,
}

/// Reliability threshold plus the per-class refinement budgets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingPolicy {
    pub gamma: f64,
    pub hs_steps: usize,
    pub ls_steps: usize,
    pub mode: GatingMode,
}

impl GatingPolicy {
    pub fn new(gamma: f64, hs_steps: usize, ls_steps: usize, mode: GatingMode) -> Result<GatingPolicy> {
        if !gamma.is_finite() {
            return Err(CoreError::InvalidInput(format!("gamma must be finite, got {gamma}")));
        }
        if mode == GatingMode::Refine && hs_steps > ls_steps {
            return Err(CoreError::InvalidInput(format!(
                "hs_steps ({hs_steps}) must not exceed ls_steps ({ls_steps})"
            )));
        }
        Ok(GatingPolicy {
            gamma,
            hs_steps,
            ls_steps,
            mode,
        })
    }
}

/// A scored query with its gating outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredQuery {
    pub id: String,
    pub predicted: Pose,
    pub score: SimilarityScore,
    /// `score.value > gamma`, strict.
    pub reliable: bool,
    /// Assigned refinement budget (0 in filter mode).
    pub steps: usize,
    /// Set in filter mode for unreliable queries.
    pub dropped: bool,
    pub gt: Option<Pose>,
}

/// Failure attributed to one query of a lenient batch run.
#[derive(Debug)]
pub struct QueryFailure {
    pub id: String,
    pub error: CoreError,
}

/// Result of a lenient batch run: scored queries in input order (failures
/// removed) plus the per-query failures.
#[derive(Debug)]
pub struct BatchOutcome {
    pub scored: Vec<ScoredQuery>,
    pub failures: Vec<QueryFailure>,
}

/// Cosine of the angle between two embeddings, using the cached norms.
///
/// Zero-norm operands are an error rather than 0: a 0 score is reserved for
/// the empty-retrieval fallback and must stay distinguishable.
pub fn cosine_similarity(a: &FeatureEmbedding, b: &FeatureEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "cosine of dim {} vs dim {}",
            a.dim(),
            b.dim()
        )));
    }
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(CoreError::DegenerateEmbedding(
            "cosine of a zero-norm embedding".into(),
        ));
    }
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    Ok(dot / (a.norm() * b.norm()))
}

/// Score one prediction: retrieve training entries within `radius_m` of the
/// predicted position and take the max cosine against the query embedding.
pub fn similarity_score(
    db: &PoseFeatureDB,
    query_embedding: &FeatureEmbedding,
    predicted: &Pose,
    radius_m: f64,
) -> Result<SimilarityScore> {
    if query_embedding.dim() != db.dim() {
        return Err(CoreError::DimensionMismatch(format!(
            "query dim {} vs database dim {}",
            query_embedding.dim(),
            db.dim()
        )));
    }
    if query_embedding.norm() == 0.0 {
        return Err(CoreError::DegenerateEmbedding("zero-norm query embedding".into()));
    }

    let retrieved = db.retrieve_by_position(predicted.t, radius_m);
    if retrieved.is_empty() {
        return Ok(SimilarityScore::empty());
    }

    let mut best_value = f64::NEG_INFINITY;
    let mut best_id: Option<&str> = None;
    // Candidates come sorted by position distance, so keeping the first max
    // implements the nearest-wins tie rule.
    for hit in &retrieved {
        let c = cosine_similarity(query_embedding, &hit.entry.embedding)?;
        if c > best_value {
            best_value = c;
            best_id = Some(&hit.entry.id);
        }
    }
    Ok(SimilarityScore {
        value: best_value,
        retrieved_count: retrieved.len(),
        best_match_id: best_id.map(str::to_string),
    })
}

/// Map a score to (reliable, assigned step budget) under `policy`.
///
/// Reliability is strict: a score exactly at `gamma` is unreliable.
pub fn classify_and_schedule(score: &SimilarityScore, policy: &GatingPolicy) -> (bool, usize) {
    let reliable = score.value > policy.gamma;
    let steps = match policy.mode {
        GatingMode::Refine => {
            if reliable {
                policy.hs_steps
            } else {
                policy.ls_steps
            }
        }
        GatingMode::Filter => 0,
    };
    (reliable, steps)
}

fn score_one(
    db: &PoseFeatureDB,
    query: &QueryRecord,
    policy: &GatingPolicy,
    radius_m: f64,
) -> Result<ScoredQuery> {
    let score = similarity_score(db, &query.embedding, &query.predicted, radius_m)
        .map_err(|e| e.for_query(&query.id))?;
    let (reliable, steps) = classify_and_schedule(&score, policy);
    Ok(ScoredQuery {
        id: query.id.clone(),
        predicted: query.predicted,
        score,
        reliable,
        steps,
        dropped: policy.mode == GatingMode::Filter && !reliable,
        gt: query.gt,
    })
}

/// Score a batch of queries. Output order matches input order. In lenient
/// mode (`strict = false`) per-query failures are collected and the batch
/// continues; in strict mode the first failure aborts.
pub fn score_batch(
    db: &PoseFeatureDB,
    queries: &[QueryRecord],
    policy: &GatingPolicy,
    radius_m: f64,
    strict: bool,
) -> Result<BatchOutcome> {
    let results: Vec<Result<ScoredQuery>> = queries
        .par_iter()
        .map(|q| score_one(db, q, policy, radius_m))
        .collect();

    let mut scored = Vec::with_capacity(queries.len());
    let mut failures = Vec::new();
    for (query, result) in queries.iter().zip(results) {
        match result {
            Ok(s) => scored.push(s),
            Err(e) if strict => return Err(e),
            Err(e) => failures.push(QueryFailure {
                id: query.id.clone(),
                error: e,
            }),
        }
    }
    Ok(BatchOutcome { scored, failures })
}

/// Write the scored CSV: `id,score,retrieved,reliable,steps,best_match`,
/// score fixed to 6 decimals.
pub fn write_scored_csv<W: Write>(w: &mut W, scored: &[ScoredQuery]) -> Result<()> {
    writeln!(w, "id,score,retrieved,reliable,steps,best_match")?;
    for s in scored {
        writeln!(
            w,
            "{},{:.6},{},{},{},{}",
            s.id,
            s.score.value,
            s.score.retrieved_count,
            s.reliable,
            s.steps,
            s.score.best_match_id.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

/// Fraction of queries classified reliable.
pub fn reliable_fraction(scored: &[ScoredQuery]) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    scored.iter().filter(|s| s.reliable).count() as f64 / scored.len() as f64
}
