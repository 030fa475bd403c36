//! Training-set database: (ground-truth pose, feature embedding) pairs with
//! radius retrieval over 3-D positions.
//!
//! The database is immutable after construction. Retrieval is a linear scan
//! by default, matching the O(n) position search the pipeline budgets for; a
//! uniform-grid index over translation cells is available as an accelerator
//! and is required to return exactly what the scan returns.
//!
//! On disk a database is two files sharing a stem:
//! - `<stem>.poses`: text, header `hrapr-db v1 dim=<D> count=<C>`, then one
//!   line `id tx ty tz qw qx qy qz` per entry;
//! - `<stem>.feat`: binary `HRFE` container, row `i` belonging to line `i`.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{CoreError, Result};
use crate::fileio;
use crate::geometry::{dist3, format_pose, parse_pose_fields, Pose};

/// Dense feature vector with its Euclidean norm cached at construction, so
/// the scoring hot path costs one dot product per candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEmbedding {
    values: Vec<f32>,
    cached_norm: f64,
}

impl FeatureEmbedding {
    /// Wrap a raw vector, rejecting non-finite entries.
    pub fn new(values: Vec<f32>) -> Result<FeatureEmbedding> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite(format!(
                "embedding component {i} is {}",
                values[i]
            )));
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        Ok(FeatureEmbedding {
            values,
            cached_norm: norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.cached_norm
    }
}

/// One training image: id, ground-truth pose, embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct DBEntry {
    pub id: String,
    pub pose: Pose,
    pub embedding: FeatureEmbedding,
}

/// Position index backing [`PoseFeatureDB::retrieve_by_position`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum IndexConfig {
    /// Linear scan over all entries. This is the reference behavior.
    #[default]
    Exhaustive,
    /// Uniform grid over translation space with the given cell edge (meters).
    Grid { cell_m: f64 },
}

#[derive(Debug, Clone)]
enum PositionIndex {
    Exhaustive,
    Grid {
        cell_m: f64,
        cells: HashMap<[i64; 3], Vec<u32>>,
    },
}

/// A retrieval hit: the entry plus its distance to the query position.
#[derive(Debug, Clone, Copy)]
pub struct Retrieved<'a> {
    pub entry: &'a DBEntry,
    pub distance_m: f64,
}

/// Immutable store of training entries with a position index.
#[derive(Debug, Clone)]
pub struct PoseFeatureDB {
    entries: Vec<DBEntry>,
    dim: usize,
    index: PositionIndex,
}

impl fmt::Display for PoseFeatureDB {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "db[count={} dim={}]", self.entries.len(), self.dim)
    }
}

/// Build a database from raw records, validating ids, dimensions and values.
///
/// `dim` is authoritative; it also fixes the dimension of an empty database.
/// Input order is preserved.
pub fn build_database(
    records: Vec<(String, Pose, Vec<f32>)>,
    dim: usize,
    index: IndexConfig,
) -> Result<PoseFeatureDB> {
    if dim == 0 {
        return Err(CoreError::InvalidInput("embedding dim must be positive".into()));
    }
    if let IndexConfig::Grid { cell_m } = index {
        if !(cell_m.is_finite() && cell_m > 0.0) {
            return Err(CoreError::InvalidInput(format!(
                "grid cell size must be positive and finite, got {cell_m}"
            )));
        }
    }

    let mut seen: HashMap<String, usize> = HashMap::with_capacity(records.len());
    let mut entries = Vec::with_capacity(records.len());
    for (i, (id, pose, raw)) in records.into_iter().enumerate() {
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(CoreError::InvalidInput(format!(
                "record {i}: id {id:?} must be non-empty and whitespace-free"
            )));
        }
        if seen.insert(id.clone(), i).is_some() {
            return Err(CoreError::DuplicateId(id));
        }
        if raw.len() != dim {
            return Err(CoreError::DimensionMismatch(format!(
                "record {i} (id `{id}`) has dim {}, database dim is {dim}",
                raw.len()
            )));
        }
        if !pose.is_finite() {
            return Err(CoreError::NonFinite(format!("record {i} (id `{id}`) pose")));
        }
        let embedding = FeatureEmbedding::new(raw)
            .map_err(|e| CoreError::InvalidInput(format!("record {i} (id `{id}`): {e}")))?;
        entries.push(DBEntry {
            id,
            pose,
            embedding,
        });
    }

    let index = build_index(&entries, index);
    Ok(PoseFeatureDB {
        entries,
        dim,
        index,
    })
}

fn build_index(entries: &[DBEntry], config: IndexConfig) -> PositionIndex {
    match config {
        IndexConfig::Exhaustive => PositionIndex::Exhaustive,
        IndexConfig::Grid { cell_m } => {
            let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
            for (i, e) in entries.iter().enumerate() {
                cells.entry(cell_key(e.pose.t, cell_m)).or_default().push(i as u32);
            }
            PositionIndex::Grid { cell_m, cells }
        }
    }
}

fn cell_key(t: [f64; 3], cell_m: f64) -> [i64; 3] {
    [
        (t[0] / cell_m).floor() as i64,
        (t[1] / cell_m).floor() as i64,
        (t[2] / cell_m).floor() as i64,
    ]
}

impl PoseFeatureDB {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[DBEntry] {
        &self.entries
    }

    /// Bytes of embedding payload (`count * dim * 4`), excluding headers.
    pub fn embedding_payload_bytes(&self) -> u64 {
        self.entries.len() as u64 * self.dim as u64 * 4
    }

    /// All entries whose translation lies within `radius_m` of `position`
    /// (inclusive boundary), sorted by ascending distance; ties keep input
    /// order. Negative radius yields nothing.
    pub fn retrieve_by_position(&self, position: [f64; 3], radius_m: f64) -> Vec<Retrieved<'_>> {
        if radius_m < 0.0 || !radius_m.is_finite() {
            return Vec::new();
        }
        let mut hits: Vec<(u32, f64)> = match &self.index {
            PositionIndex::Exhaustive => self
                .entries
                .iter()
                .enumerate()
                .filter_map(|(i, e)| {
                    let d = dist3(e.pose.t, position);
                    (d <= radius_m).then_some((i as u32, d))
                })
                .collect(),
            PositionIndex::Grid { cell_m, cells } => {
                let lo = cell_key(
                    [position[0] - radius_m, position[1] - radius_m, position[2] - radius_m],
                    *cell_m,
                );
                let hi = cell_key(
                    [position[0] + radius_m, position[1] + radius_m, position[2] + radius_m],
                    *cell_m,
                );
                let mut out = Vec::new();
                for cx in lo[0]..=hi[0] {
                    for cy in lo[1]..=hi[1] {
                        for cz in lo[2]..=hi[2] {
                            if let Some(bucket) = cells.get(&[cx, cy, cz]) {
                                for &i in bucket {
                                    let d = dist3(self.entries[i as usize].pose.t, position);
                                    if d <= radius_m {
                                        out.push((i, d));
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
        };
        hits.sort_unstable_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        hits.into_iter()
            .map(|(i, d)| Retrieved {
                entry: &self.entries[i as usize],
                distance_m: d,
            })
            .collect()
    }

    /// Write `<stem>.poses` and `<stem>.feat`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let mut poses = format!("hrapr-db v1 dim={} count={}\n", self.dim, self.entries.len());
        for e in &self.entries {
            poses.push_str(&e.id);
            poses.push(' ');
            poses.push_str(&format_pose(&e.pose));
            poses.push('\n');
        }
        fileio::write_atomic(&with_ext(stem, "poses"), poses.as_bytes())?;

        let rows: Vec<&[f32]> = self.entries.iter().map(|e| e.embedding.values()).collect();
        fileio::write_atomic(&with_ext(stem, "feat"), &fileio::encode_feat(self.dim, &rows))?;
        Ok(())
    }

    /// Load a database saved by [`PoseFeatureDB::save`] with the default
    /// (exhaustive) index.
    pub fn load(stem: &Path) -> Result<PoseFeatureDB> {
        Self::load_with_index(stem, IndexConfig::Exhaustive)
    }

    /// Load with an explicit index configuration. Entry payloads round-trip
    /// bit-exactly; the index is rebuilt, not stored.
    pub fn load_with_index(stem: &Path, index: IndexConfig) -> Result<PoseFeatureDB> {
        let poses_path = with_ext(stem, "poses");
        let feat_path = with_ext(stem, "feat");
        let (dim, parsed) = read_poses_file(&poses_path)?;
        let (feat_dim, rows) = read_embeddings_file(&feat_path)?;
        if feat_dim != dim {
            return Err(CoreError::format(
                &feat_path,
                "byte",
                8,
                format!("feat dim {feat_dim} disagrees with poses dim {dim}"),
            ));
        }
        if rows.len() != parsed.len() {
            return Err(CoreError::format(
                &feat_path,
                "byte",
                12,
                format!("feat count {} disagrees with poses count {}", rows.len(), parsed.len()),
            ));
        }

        let records: Vec<(String, Pose, Vec<f32>)> = parsed
            .into_iter()
            .zip(rows)
            .map(|((id, pose), row)| (id, pose, row))
            .collect();
        build_database(records, dim, index)
    }
}

/// Read a `.poses` text file: the declared dimension and the (id, pose)
/// list, validated for field count, finiteness and unit quaternions.
pub fn read_poses_file(path: &Path) -> Result<(usize, Vec<(String, Pose)>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::path(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| CoreError::format(path, "line", 1, "missing header line"))?;
    let (dim, count) = parse_db_header(path, header)?;

    let mut parsed: Vec<(String, Pose)> = Vec::with_capacity(count);
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx as u64 + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(CoreError::format(
                path,
                "line",
                lineno,
                format!("expected 8 fields `id tx ty tz qw qx qy qz`, found {}", fields.len()),
            ));
        }
        let pose = parse_pose_fields(&fields[1..])
            .ok_or_else(|| CoreError::format(path, "line", lineno, "unparseable pose fields"))?;
        if !pose.is_finite() {
            return Err(CoreError::format(path, "line", lineno, "non-finite pose"));
        }
        if (pose.q.norm() - 1.0).abs() > 1e-6 {
            return Err(CoreError::format(
                path,
                "line",
                lineno,
                format!("quaternion norm {} is not unit", pose.q.norm()),
            ));
        }
        parsed.push((fields[0].to_string(), pose));
    }
    if parsed.len() != count {
        return Err(CoreError::format(
            path,
            "line",
            text.lines().count() as u64,
            format!("header promises {count} entries, file has {}", parsed.len()),
        ));
    }
    Ok((dim, parsed))
}

/// Read an `HRFE` embedding file: the dimension and the rows.
pub fn read_embeddings_file(path: &Path) -> Result<(usize, Vec<Vec<f32>>)> {
    let feat = fileio::read_feat(path)?;
    Ok((feat.dim, feat.rows))
}

fn parse_db_header(path: &Path, header: &str) -> Result<(usize, usize)> {
    let err = |msg: String| CoreError::format(path, "line", 1, msg);
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != "hrapr-db" || fields[1] != "v1" {
        return Err(err(format!(
            "bad header {header:?}, expected `hrapr-db v1 dim=<D> count=<C>`"
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
    Ok((dim, count))
}

pub(crate) fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut name = stem.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    stem.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;
    use proptest::prelude::*;

    fn rec(id: &str, t: [f64; 3], v: Vec<f32>) -> (String, Pose, Vec<f32>) {
        (id.to_string(), Pose::new(t, Quat::IDENTITY), v)
    }

    #[test]
    fn empty_database_retrieves_nothing() {
        let db = build_database(vec![], 4, IndexConfig::Exhaustive).unwrap();
        assert_eq!(db.len(), 0);
        assert_eq!(db.dim(), 4);
        assert!(db.retrieve_by_position([0.0; 3], 100.0).is_empty());
    }

    #[test]
    fn build_basic() {
        let db = build_database(
            vec![
                rec("a", [0.0; 3], vec![1.0, 0.0, 0.0, 0.0]),
                rec("b", [1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]),
                rec("c", [2.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]),
            ],
            4,
            IndexConfig::Exhaustive,
        )
        .unwrap();
        assert_eq!(db.len(), 3);
        assert_eq!(db.dim(), 4);
        assert_eq!(db.embedding_payload_bytes(), 3 * 4 * 4);
    }

    #[test]
    fn build_rejects_bad_records() {
        let dup = build_database(
            vec![rec("a", [0.0; 3], vec![1.0]), rec("a", [1.0, 0.0, 0.0], vec![2.0])],
            1,
            IndexConfig::Exhaustive,
        );
        assert!(matches!(dup, Err(CoreError::DuplicateId(id)) if id == "a"));

        let mismatch = build_database(vec![rec("b", [0.0; 3], vec![1.0, 2.0])], 1, IndexConfig::Exhaustive);
        assert!(matches!(mismatch, Err(CoreError::DimensionMismatch(msg)) if msg.contains("`b`")));

        let nan = build_database(vec![rec("c", [0.0; 3], vec![f32::NAN])], 1, IndexConfig::Exhaustive);
        assert!(matches!(nan, Err(CoreError::InvalidInput(msg)) if msg.contains("`c`")));

        let ws = build_database(vec![rec("has space", [0.0; 3], vec![1.0])], 1, IndexConfig::Exhaustive);
        assert!(ws.is_err());
    }

    #[test]
    fn payload_matches_storage_budget() {
        // 7000 entries at dim 1024 store 4096 bytes per embedding.
        let db = build_database(vec![], 1024, IndexConfig::Exhaustive).unwrap();
        assert_eq!(db.embedding_payload_bytes(), 0);
        assert_eq!(1024 * 4, 4096);
        assert_eq!(7000u64 * 1024 * 4, 28_672_000);
    }

    #[test]
    fn retrieval_boundary_is_inclusive() {
        let db = build_database(
            vec![
                rec("in", [0.19, 0.0, 0.0], vec![1.0]),
                rec("edge", [0.2, 0.0, 0.0], vec![1.0]),
                rec("out", [0.21, 0.0, 0.0], vec![1.0]),
            ],
            1,
            IndexConfig::Exhaustive,
        )
        .unwrap();
        let got: Vec<&str> = db
            .retrieve_by_position([0.0; 3], 0.2)
            .iter()
            .map(|r| r.entry.id.as_str())
            .collect();
        assert_eq!(got, vec!["in", "edge"]);
    }

    #[test]
    fn retrieval_sorted_with_stable_ties() {
        let db = build_database(
            vec![
                rec("far", [0.5, 0.0, 0.0], vec![1.0]),
                rec("tie1", [0.3, 0.0, 0.0], vec![1.0]),
                rec("tie2", [-0.3, 0.0, 0.0], vec![1.0]),
                rec("near", [0.1, 0.0, 0.0], vec![1.0]),
            ],
            1,
            IndexConfig::Exhaustive,
        )
        .unwrap();
        let got: Vec<&str> = db
            .retrieve_by_position([0.0; 3], 1.0)
            .iter()
            .map(|r| r.entry.id.as_str())
            .collect();
        assert_eq!(got, vec!["near", "tie1", "tie2", "far"]);
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("db");
        let db = build_database(
            vec![
                rec("a", [0.1, -0.2, 0.3], vec![1.5, -2.25, 0.1, 3.0]),
                rec("b", [1.0 / 3.0, 0.0, 7.0], vec![0.0, 1e-8, -1e8, 42.0]),
                rec("c", [0.0; 3], vec![5.0, 6.0, 7.0, 8.0]),
            ],
            4,
            IndexConfig::Exhaustive,
        )
        .unwrap();
        db.save(&stem).unwrap();
        let back = PoseFeatureDB::load(&stem).unwrap();
        assert_eq!(db.entries(), back.entries());

        // Re-saving the loaded database reproduces the files byte for byte.
        let stem2 = dir.path().join("db2");
        back.save(&stem2).unwrap();
        let feat1 = std::fs::read(with_ext(&stem, "feat")).unwrap();
        let feat2 = std::fs::read(with_ext(&stem2, "feat")).unwrap();
        assert_eq!(feat1, feat2);
        let poses1 = std::fs::read(with_ext(&stem, "poses")).unwrap();
        let poses2 = std::fs::read(with_ext(&stem2, "poses")).unwrap();
        assert_eq!(poses1, poses2);
    }

    #[test]
    fn roundtrip_empty() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("empty");
        let db = build_database(vec![], 16, IndexConfig::Exhaustive).unwrap();
        db.save(&stem).unwrap();
        let back = PoseFeatureDB::load(&stem).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 16);
    }

    #[test]
    fn load_detects_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("db");
        let db = build_database(
            (0..5)
                .map(|i| rec(&format!("e{i}"), [i as f64, 0.0, 0.0], vec![i as f32; 4]))
                .collect(),
            4,
            IndexConfig::Exhaustive,
        )
        .unwrap();
        db.save(&stem).unwrap();

        // Drop one embedding row from the binary payload.
        let feat_path = with_ext(&stem, "feat");
        let mut bytes = std::fs::read(&feat_path).unwrap();
        bytes.truncate(bytes.len() - 16);
        std::fs::write(&feat_path, &bytes).unwrap();
        let err = PoseFeatureDB::load(&stem).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("byte"), "missing offset in: {msg}");

        // Header count 5 with only 4 rows present.
        db.save(&stem).unwrap();
        let poses_path = with_ext(&stem, "poses");
        let text = std::fs::read_to_string(&poses_path).unwrap();
        let short: Vec<&str> = text.lines().take(5).collect();
        std::fs::write(&poses_path, short.join("\n")).unwrap();
        assert!(PoseFeatureDB::load(&stem).is_err());
    }

    #[test]
    fn load_rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("db");
        build_database(vec![rec("a", [0.0; 3], vec![1.0])], 1, IndexConfig::Exhaustive)
            .unwrap()
            .save(&stem)
            .unwrap();

        let feat_path = with_ext(&stem, "feat");
        let mut bytes = std::fs::read(&feat_path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&feat_path, &bytes).unwrap();
        assert!(PoseFeatureDB::load(&stem).unwrap_err().to_string().contains("magic"));

        bytes[0] = b'H';
        bytes[4] = 9;
        std::fs::write(&feat_path, &bytes).unwrap();
        assert!(PoseFeatureDB::load(&stem).unwrap_err().to_string().contains("version"));
    }

    fn arb_db_and_queries() -> impl Strategy<Value = (Vec<[f64; 3]>, Vec<([f64; 3], f64)>, f64)> {
        (
            prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 0..60),
            prop::collection::vec((prop::array::uniform3(-10.0f64..10.0), 0.0f64..6.0), 1..20),
            0.05f64..3.0,
        )
    }

    proptest! {
        // The grid index must agree with the linear scan exactly, id for id.
        #[test]
        fn grid_matches_exhaustive((points, queries, cell) in arb_db_and_queries()) {
            let records: Vec<_> = points
                .iter()
                .enumerate()
                .map(|(i, &t)| rec(&format!("p{i}"), t, vec![1.0]))
                .collect();
            let lin = build_database(records.clone(), 1, IndexConfig::Exhaustive).unwrap();
            let grid = build_database(records, 1, IndexConfig::Grid { cell_m: cell }).unwrap();
            for (q, r) in &queries {
                let a: Vec<&str> = lin.retrieve_by_position(*q, *r).iter().map(|h| h.entry.id.as_str()).collect();
                let b: Vec<&str> = grid.retrieve_by_position(*q, *r).iter().map(|h| h.entry.id.as_str()).collect();
                prop_assert_eq!(a, b);
            }
        }

        // Growing the radius only ever grows the result set.
        #[test]
        fn retrieval_monotone_in_radius((points, queries, _cell) in arb_db_and_queries()) {
            let records: Vec<_> = points
                .iter()
                .enumerate()
                .map(|(i, &t)| rec(&format!("p{i}"), t, vec![1.0]))
                .collect();
            let db = build_database(records, 1, IndexConfig::Exhaustive).unwrap();
            for (q, r) in &queries {
                let small: std::collections::HashSet<&str> =
                    db.retrieve_by_position(*q, *r).iter().map(|h| h.entry.id.as_str()).collect();
                let large: std::collections::HashSet<&str> =
                    db.retrieve_by_position(*q, r * 1.5 + 0.1).iter().map(|h| h.entry.id.as_str()).collect();
                prop_assert!(small.is_subset(&large));
            }
        }
    }
}
