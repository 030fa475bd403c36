//! Query replay files: predicted poses (optionally with ground truth) plus
//! their feature embeddings, exported either by the synthetic benchmark or
//! by a real pose-regressor pipeline.
//!
//! `<stem>.queries` is text. Header `hrapr-q v1 dim=<D> count=<C> gt=<0|1>`.
//! With `gt=1` each line is
//! `id ptx pty ptz pqw pqx pqy pqz gtx gty gtz gqw gqx gqy gqz label`;
//! with `gt=0` the seven ground-truth columns are omitted. `label` is
//! `near`, `far`, or `-` when unlabeled. Embeddings live in the sidecar
//! `<stem>.qfeat`, same binary layout as `.feat`, row `i` matching line `i`.

use std::path::Path;

use crate::error::{CoreError, Result};
use crate::fileio;
use crate::geometry::{format_pose, parse_pose_fields, Pose};
use crate::store::{with_ext, FeatureEmbedding};

/// Near/far split label carried through from scene generation; replay
/// exports from real data are usually unlabeled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryLabel {
    Near,
    Far,
    Unlabeled,
}

impl QueryLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            QueryLabel::Near => "near",
            QueryLabel::Far => "far",
            QueryLabel::Unlabeled => "-",
        }
    }

    fn parse(s: &str) -> Option<QueryLabel> {
        match s {
            "near" => Some(QueryLabel::Near),
            "far" => Some(QueryLabel::Far),
            "-" => Some(QueryLabel::Unlabeled),
            _ => None,
        }
    }
}

/// One query: the predicted pose to be scored, its embedding, and ground
/// truth when available.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub predicted: Pose,
    pub embedding: FeatureEmbedding,
    pub gt: Option<Pose>,
    pub label: QueryLabel,
}

/// Write `<stem>.queries` and `<stem>.qfeat`.
///
/// Ground truth is all-or-nothing per file; mixing records with and without
/// it is an error.
pub fn save_queries(stem: &Path, dim: usize, records: &[QueryRecord]) -> Result<()> {
    let with_gt = records.iter().filter(|r| r.gt.is_some()).count();
    let has_gt = match with_gt {
        0 => false,
        n if n == records.len() => true,
        _ => {
            return Err(CoreError::InvalidInput(
                "query export mixes records with and without ground truth".into(),
            ))
        }
    };

    let mut text = format!(
        "hrapr-q v1 dim={dim} count={} gt={}\n",
        records.len(),
        if has_gt { 1 } else { 0 }
    );
    for r in records {
        if r.embedding.dim() != dim {
            return Err(CoreError::DimensionMismatch(format!(
                "query `{}` has dim {}, export dim is {dim}",
                r.id,
                r.embedding.dim()
            )));
        }
        text.push_str(&r.id);
        text.push(' ');
        text.push_str(&format_pose(&r.predicted));
        if let Some(gt) = &r.gt {
            text.push(' ');
            text.push_str(&format_pose(gt));
        }
        text.push(' ');
        text.push_str(r.label.as_str());
        text.push('\n');
    }
    fileio::write_atomic(&with_ext(stem, "queries"), text.as_bytes())?;

    let rows: Vec<&[f32]> = records.iter().map(|r| r.embedding.values()).collect();
    fileio::write_atomic(&with_ext(stem, "qfeat"), &fileio::encode_feat(dim, &rows))?;
    Ok(())
}

/// Load a query export; returns the records and the embedding dimension.
pub fn load_queries(stem: &Path) -> Result<(Vec<QueryRecord>, usize)> {
    let q_path = with_ext(stem, "queries");
    let text = std::fs::read_to_string(&q_path).map_err(|e| CoreError::path(&q_path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| CoreError::format(&q_path, "line", 1, "missing header line"))?;
    let (dim, count, has_gt) = parse_query_header(&q_path, header)?;

    let expected_fields = if has_gt { 16 } else { 9 };
    let mut parsed: Vec<(String, Pose, Option<Pose>, QueryLabel)> = Vec::with_capacity(count);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx as u64 + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != expected_fields {
            return Err(CoreError::format(
                &q_path,
                "line",
                lineno,
                format!("expected {expected_fields} fields, found {}", fields.len()),
            ));
        }
        let predicted = parse_pose_fields(&fields[1..8]).ok_or_else(|| {
            CoreError::format(&q_path, "line", lineno, "unparseable predicted pose")
        })?;
        let gt = if has_gt {
            Some(parse_pose_fields(&fields[8..15]).ok_or_else(|| {
                CoreError::format(&q_path, "line", lineno, "unparseable ground-truth pose")
            })?)
        } else {
            None
        };
        let label = QueryLabel::parse(fields[expected_fields - 1]).ok_or_else(|| {
            CoreError::format(
                &q_path,
                "line",
                lineno,
                format!("bad label {:?}, expected near/far/-", fields[expected_fields - 1]),
            )
        })?;
        if !predicted.is_finite() || gt.as_ref().is_some_and(|g| !g.is_finite()) {
            return Err(CoreError::format(&q_path, "line", lineno, "non-finite pose"));
        }
        parsed.push((fields[0].to_string(), predicted, gt, label));
    }
    if parsed.len() != count {
        return Err(CoreError::format(
            &q_path,
            "line",
            text.lines().count() as u64,
            format!("header promises {count} queries, file has {}", parsed.len()),
        ));
    }

    let f_path = with_ext(stem, "qfeat");
    let feat = fileio::read_feat(&f_path)?;
    if feat.dim != dim {
        return Err(CoreError::format(
            &f_path,
            "byte",
            8,
            format!("qfeat dim {} disagrees with queries dim {dim}", feat.dim),
        ));
    }
    if feat.rows.len() != count {
        return Err(CoreError::format(
            &f_path,
            "byte",
            12,
            format!("qfeat count {} disagrees with queries count {count}", feat.rows.len()),
        ));
    }

    let mut out = Vec::with_capacity(count);
    for ((id, predicted, gt, label), row) in parsed.into_iter().zip(feat.rows) {
        let embedding = FeatureEmbedding::new(row).map_err(|e| e.for_query(&id))?;
        out.push(QueryRecord {
            id,
            predicted,
            embedding,
            gt,
            label,
        });
    }
    Ok((out, dim))
}

fn parse_query_header(path: &Path, header: &str) -> Result<(usize, usize, bool)> {
    let err = |msg: String| CoreError::format(path, "line", 1, msg);
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "hrapr-q" || fields[1] != "v1" {
        return Err(err(format!(
            "bad header {header:?}, expected `hrapr-q v1 dim=<D> count=<C> gt=<0|1>`"
        )));
    }
    let dim = fields[2]
        .strip_prefix("dim=")
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| err(format!("bad dim field {:?}", fields[2])))?;
    let count = fields[3]
        .strip_prefix("count=")
        .and_then(|v| v.parse::<usize>().ok())
        .ok_or_else(|| err(format!("bad count field {:?}", fields[3])))?;
    let has_gt = match fields[4].strip_prefix("gt=") {
        Some("0") => false,
        Some("1") => true,
        _ => return Err(err(format!("bad gt field {:?}", fields[4]))),
    };
    Ok((dim, count, has_gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;

    fn query(id: &str, gt: bool, label: QueryLabel) -> QueryRecord {
        QueryRecord {
            id: id.to_string(),
            predicted: Pose::new([0.5, -0.25, 1.0 / 3.0], Quat::normalize(1.0, 0.1, 0.0, 0.0).unwrap()),
            embedding: FeatureEmbedding::new(vec![0.25, -1.5, 3.0]).unwrap(),
            gt: gt.then(|| Pose::new([0.5, -0.2, 0.3], Quat::IDENTITY)),
            label,
        }
    }

    #[test]
    fn roundtrip_with_gt() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("q");
        let records = vec![
            query("q0", true, QueryLabel::Near),
            query("q1", true, QueryLabel::Far),
        ];
        save_queries(&stem, 3, &records).unwrap();
        let (back, dim) = load_queries(&stem).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(back, records);
    }

    #[test]
    fn roundtrip_without_gt() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("q");
        let records = vec![query("q0", false, QueryLabel::Unlabeled)];
        save_queries(&stem, 3, &records).unwrap();
        let (back, _) = load_queries(&stem).unwrap();
        assert_eq!(back, records);
        let header = std::fs::read_to_string(with_ext(&stem, "queries")).unwrap();
        assert!(header.starts_with("hrapr-q v1 dim=3 count=1 gt=0\n"));
    }

    #[test]
    fn mixed_gt_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            query("q0", true, QueryLabel::Near),
            query("q1", false, QueryLabel::Near),
        ];
        assert!(save_queries(&dir.path().join("q"), 3, &records).is_err());
    }

    #[test]
    fn sidecar_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("q");
        save_queries(&stem, 3, &[query("q0", true, QueryLabel::Near)]).unwrap();
        let f = with_ext(&stem, "qfeat");
        let mut bytes = std::fs::read(&f).unwrap();
        bytes.truncate(bytes.len() - 4);
        std::fs::write(&f, &bytes).unwrap();
        assert!(load_queries(&stem).is_err());
    }
}
