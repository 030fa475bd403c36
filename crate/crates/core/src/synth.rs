//! Deterministic synthetic scenes: a smooth training trajectory, a
//! sinusoidal feature field over pose space, and a mock pose regressor whose
//! error grows with the distance to the training set.
//!
//! The field assigns every pose a `dim`-vector with component
//! `sin(omega_i . z(p) + phi_i)`, where `z(p)` is the 7-vector of
//! translation plus canonical quaternion. Nearby poses therefore have highly
//! similar features and the expected cosine between two poses decays like a
//! Gaussian kernel in pose space, which is exactly the assumption behind
//! retrieval-based uncertainty scoring. The field is smooth with closed-form
//! derivatives, so refinement against it can be gradient-checked.
//!
//! Everything is a pure function of [`SceneSpec`]: the same spec yields a
//! bit-identical scene.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::geometry::{dist3, slerp, Pose, Quat};
use crate::replay::{save_queries, QueryLabel, QueryRecord};
use crate::store::{build_database, FeatureEmbedding, IndexConfig, PoseFeatureDB};

/// Number of trajectory waypoints the training path interpolates through.
const WAYPOINTS: usize = 8;
/// Near queries stay inside this fraction of the near thresholds, far
/// queries outside 1/this, so the split never sits on the boundary.
const BOUNDARY_MARGIN: f64 = 0.9;
/// Exponent biasing near-query offsets toward the trajectory. Higher means
/// more queries land within retrieval range of the training set.
const NEAR_OFFSET_BIAS: f64 = 3.0;
/// Far query positions are sampled in this shell (units of near radius).
const FAR_SHELL: (f64, f64) = (1.2, 1.8);
const FAR_ATTEMPTS: usize = 1000;

/// Parameters fully determining a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Embedding length of the feature field.
    pub dim: usize,
    pub num_train: usize,
    pub num_test_near: usize,
    pub num_test_far: usize,
    /// Edge of the box containing the trajectory waypoints (meters).
    pub extent_m: f64,
    /// Near/far split: a near query is within this radius (meters) ...
    pub near_radius_m: f64,
    /// ... and this angle (degrees) of some training pose; far queries are
    /// beyond both for every training pose.
    pub near_angle_deg: f64,
    /// Frequency scale of the feature field; larger means feature similarity
    /// decays faster with pose distance.
    pub freq_scale: f64,
    /// Gaussian noise added to query embeddings (never to training ones).
    pub feature_noise: f64,
    /// Mock regressor translation noise std in meters: floor + gain * dist.
    pub apr_floor_m: f64,
    pub apr_gain_m: f64,
    /// Mock regressor rotation noise std in degrees: floor + gain * dist.
    pub apr_floor_deg: f64,
    pub apr_gain_deg: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 42,
            dim: 256,
            num_train: 2000,
            num_test_near: 1000,
            num_test_far: 1000,
            extent_m: 10.0,
            near_radius_m: 2.0,
            near_angle_deg: 10.0,
            freq_scale: 2.0,
            feature_noise: 0.0,
            apr_floor_m: 0.005,
            apr_gain_m: 0.3,
            apr_floor_deg: 0.02,
            apr_gain_deg: 2.0,
        }
    }
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim as f64),
            ("extent_m", self.extent_m),
            ("near_radius_m", self.near_radius_m),
            ("near_angle_deg", self.near_angle_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::Generation(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("freq_scale", self.freq_scale),
            ("feature_noise", self.feature_noise),
            ("apr_floor_m", self.apr_floor_m),
            ("apr_gain_m", self.apr_gain_m),
            ("apr_floor_deg", self.apr_floor_deg),
            ("apr_gain_deg", self.apr_gain_deg),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Generation(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.num_train == 0 && self.num_test_near + self.num_test_far > 0 {
            return Err(CoreError::Generation(
                "test queries need a nonempty training trajectory".into(),
            ));
        }
        Ok(())
    }

    /// Render as `key = value` manifest lines.
    pub fn manifest_entries(&self) -> Vec<(String, String)> {
        vec![
            ("seed".into(), self.seed.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("num_train".into(), self.num_train.to_string()),
            ("num_test_near".into(), self.num_test_near.to_string()),
            ("num_test_far".into(), self.num_test_far.to_string()),
            ("extent_m".into(), self.extent_m.to_string()),
            ("near_radius_m".into(), self.near_radius_m.to_string()),
            ("near_angle_deg".into(), self.near_angle_deg.to_string()),
            ("freq_scale".into(), self.freq_scale.to_string()),
            ("feature_noise".into(), self.feature_noise.to_string()),
            ("apr_floor_m".into(), self.apr_floor_m.to_string()),
            ("apr_gain_m".into(), self.apr_gain_m.to_string()),
            ("apr_floor_deg".into(), self.apr_floor_deg.to_string()),
            ("apr_gain_deg".into(), self.apr_gain_deg.to_string()),
        ]
    }

    /// Apply one manifest `key = value` pair; returns false for keys that do
    /// not belong to the scene spec.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                CoreError::InvalidInput(format!("bad value {value:?} for scene key `{key}`"))
            })
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "num_train" => self.num_train = parse(key, value)?,
            "num_test_near" => self.num_test_near = parse(key, value)?,
            "num_test_far" => self.num_test_far = parse(key, value)?,
            "extent_m" => self.extent_m = parse(key, value)?,
            "near_radius_m" => self.near_radius_m = parse(key, value)?,
            "near_angle_deg" => self.near_angle_deg = parse(key, value)?,
            "freq_scale" => self.freq_scale = parse(key, value)?,
            "feature_noise" => self.feature_noise = parse(key, value)?,
            "apr_floor_m" => self.apr_floor_m = parse(key, value)?,
            "apr_gain_m" => self.apr_gain_m = parse(key, value)?,
            "apr_floor_deg" => self.apr_floor_deg = parse(key, value)?,
            "apr_gain_deg" => self.apr_gain_deg = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// One training entry of a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEntry {
    pub id: String,
    pub pose: Pose,
    /// Field value at `pose`, quantized to f32 exactly as stored on disk.
    pub embedding: Vec<f32>,
}

/// A generated scene: training trajectory, test queries, field parameters.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SceneSpec,
    /// Field frequencies, one 7-row per embedding component.
    omega: Vec<[f64; 7]>,
    /// Field phases, one per embedding component.
    phase: Vec<f64>,
    pub train: Vec<TrainEntry>,
    /// Near queries first, then far, both in generation order.
    pub queries: Vec<QueryRecord>,
}

fn pose_coords(p: &Pose) -> [f64; 7] {
    let q = p.q.canonicalized();
    [p.t[0], p.t[1], p.t[2], q.w, q.x, q.y, q.z]
}

impl SynthScene {
    /// Evaluate the feature field at a pose, in full f64 precision.
    pub fn feature_field(&self, p: &Pose) -> Vec<f64> {
        let z = pose_coords(p);
        self.omega
            .iter()
            .zip(&self.phase)
            .map(|(w, phi)| {
                let arg: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + phi;
                arg.sin()
            })
            .collect()
    }

    /// Field values quantized to the f32 storage precision.
    pub fn feature_field_f32(&self, p: &Pose) -> Vec<f32> {
        self.feature_field(p).into_iter().map(|v| v as f32).collect()
    }

    /// Closed-form Jacobian of the field with respect to translation:
    /// `d field_i / d t_k = cos(omega_i . z + phi_i) * omega_ik`.
    pub fn field_translation_jacobian(&self, p: &Pose) -> Vec<[f64; 3]> {
        let z = pose_coords(p);
        self.omega
            .iter()
            .zip(&self.phase)
            .map(|(w, phi)| {
                let arg: f64 = w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() + phi;
                let c = arg.cos();
                [c * w[0], c * w[1], c * w[2]]
            })
            .collect()
    }

    /// Build the training database for this scene.
    pub fn train_database(&self, index: IndexConfig) -> Result<PoseFeatureDB> {
        let records: Vec<(String, Pose, Vec<f32>)> = self
            .train
            .iter()
            .map(|e| (e.id.clone(), e.pose, e.embedding.clone()))
            .collect();
        build_database(records, self.spec.dim, index)
    }

    /// Write the database files (`.poses`/`.feat`) and the query files
    /// (`.queries`/`.qfeat`) under one stem.
    pub fn export(&self, stem: &std::path::Path) -> Result<()> {
        self.train_database(IndexConfig::Exhaustive)?.save(stem)?;
        save_queries(stem, self.spec.dim, &self.queries)
    }
}

fn random_unit_vec3<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn random_unit_quat<R: Rng>(rng: &mut R) -> Quat {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if let Ok(q) = Quat::normalize(w, x, y, z) {
            return q;
        }
    }
}

/// Generate a scene from its spec. Deterministic; fails when the spec cannot
/// be satisfied (for example far queries without a trajectory to be far
/// from, or no room to place them).
pub fn generate_scene(spec: &SceneSpec) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Field parameters.
    let mut omega = Vec::with_capacity(spec.dim);
    let mut phase = Vec::with_capacity(spec.dim);
    for _ in 0..spec.dim {
        let mut row = [0.0f64; 7];
        for slot in &mut row {
            let g: f64 = rng.sample(StandardNormal);
            *slot = g * spec.freq_scale;
        }
        omega.push(row);
        phase.push(rng.gen::<f64>() * std::f64::consts::TAU);
    }

    // Training trajectory: slerp through random waypoints.
    let waypoints: Vec<Pose> = (0..WAYPOINTS)
        .map(|_| {
            let t = [
                rng.gen::<f64>() * spec.extent_m,
                rng.gen::<f64>() * spec.extent_m,
                rng.gen::<f64>() * spec.extent_m,
            ];
            Pose::new(t, random_unit_quat(&mut rng))
        })
        .collect();
    let train_poses: Vec<Pose> = (0..spec.num_train)
        .map(|i| {
            let s = if spec.num_train > 1 {
                i as f64 / (spec.num_train - 1) as f64
            } else {
                0.0
            };
            let g = s * (WAYPOINTS - 1) as f64;
            let j = (g.floor() as usize).min(WAYPOINTS - 2);
            slerp(&waypoints[j], &waypoints[j + 1], g - j as f64)
        })
        .collect();

    let scene_core = SynthScene {
        spec: spec.clone(),
        omega,
        phase,
        train: Vec::new(),
        queries: Vec::new(),
    };

    let train: Vec<TrainEntry> = train_poses
        .iter()
        .enumerate()
        .map(|(i, &pose)| TrainEntry {
            id: format!("train-{i:06}"),
            pose,
            embedding: scene_core.feature_field_f32(&pose),
        })
        .collect();

    let min_dist = |t: [f64; 3]| -> f64 {
        train_poses
            .iter()
            .map(|p| dist3(p.t, t))
            .fold(f64::INFINITY, f64::min)
    };

    // Ground-truth poses for near queries: bounded offsets from a random
    // training pose, biased toward the trajectory. The rotation offset
    // scales with the translation offset, the way viewpoints drift together
    // when a camera leaves a recorded path.
    let near_rad_rad = (BOUNDARY_MARGIN * spec.near_angle_deg).to_radians();
    let mut gt_poses: Vec<(Pose, QueryLabel)> = Vec::with_capacity(spec.num_test_near + spec.num_test_far);
    for _ in 0..spec.num_test_near {
        let base = &train_poses[rng.gen_range(0..train_poses.len())];
        let dir = random_unit_vec3(&mut rng);
        let r = BOUNDARY_MARGIN * spec.near_radius_m * rng.gen::<f64>().powf(NEAR_OFFSET_BIAS);
        let t = [base.t[0] + r * dir[0], base.t[1] + r * dir[1], base.t[2] + r * dir[2]];
        let angle = near_rad_rad * (r / (BOUNDARY_MARGIN * spec.near_radius_m)) * rng.gen::<f64>();
        let q = base.q.mul(&Quat::from_axis_angle(random_unit_vec3(&mut rng), angle));
        gt_poses.push((Pose::new(t, q), QueryLabel::Near));
    }

    // Far queries: rejection-sample positions and orientations beyond both
    // near thresholds with respect to every training pose.
    let far_min_dist = spec.near_radius_m / BOUNDARY_MARGIN;
    // angle > theta is equivalent to |<q1,q2>| < cos(theta/2).
    let far_cos_half = ((spec.near_angle_deg / BOUNDARY_MARGIN).to_radians() / 2.0).cos();
    for qi in 0..spec.num_test_far {
        let mut accepted = None;
        for _ in 0..FAR_ATTEMPTS {
            let base = &train_poses[rng.gen_range(0..train_poses.len())];
            let dir = random_unit_vec3(&mut rng);
            let dist = spec.near_radius_m * (FAR_SHELL.0 + rng.gen::<f64>() * (FAR_SHELL.1 - FAR_SHELL.0));
            let t = [
                base.t[0] + dist * dir[0],
                base.t[1] + dist * dir[1],
                base.t[2] + dist * dir[2],
            ];
            if min_dist(t) <= far_min_dist {
                continue;
            }
            let q = random_unit_quat(&mut rng);
            if train_poses.iter().any(|p| p.q.dot(&q).abs() >= far_cos_half) {
                continue;
            }
            accepted = Some(Pose::new(t, q));
            break;
        }
        match accepted {
            Some(p) => gt_poses.push((p, QueryLabel::Far)),
            None => {
                return Err(CoreError::Generation(format!(
                    "could not place far query {qi} after {FAR_ATTEMPTS} attempts; \
                     the trajectory leaves no room beyond the near thresholds"
                )))
            }
        }
    }

    // Mock regressor predictions and query embeddings.
    let mut queries = Vec::with_capacity(gt_poses.len());
    let mut near_seen = 0usize;
    let mut far_seen = 0usize;
    for (gt, label) in gt_poses {
        let d = min_dist(gt.t);
        let s_t = spec.apr_floor_m + spec.apr_gain_m * d;
        let noise: [f64; 3] = [
            rng.sample::<f64, _>(StandardNormal) * s_t,
            rng.sample::<f64, _>(StandardNormal) * s_t,
            rng.sample::<f64, _>(StandardNormal) * s_t,
        ];
        let s_r = (spec.apr_floor_deg + spec.apr_gain_deg * d).to_radians();
        let angle = (rng.sample::<f64, _>(StandardNormal) * s_r).abs();
        let axis = random_unit_vec3(&mut rng);
        let predicted = Pose::new(
            [gt.t[0] + noise[0], gt.t[1] + noise[1], gt.t[2] + noise[2]],
            gt.q.mul(&Quat::from_axis_angle(axis, angle)),
        );

        let mut values = scene_core.feature_field(&gt);
        if spec.feature_noise > 0.0 {
            for v in &mut values {
                *v += rng.sample::<f64, _>(StandardNormal) * spec.feature_noise;
            }
        }
        let embedding = FeatureEmbedding::new(values.into_iter().map(|v| v as f32).collect())?;

        let id = match label {
            QueryLabel::Near => {
                near_seen += 1;
                format!("near-{:06}", near_seen - 1)
            }
            _ => {
                far_seen += 1;
                format!("far-{:06}", far_seen - 1)
            }
        };
        queries.push(QueryRecord {
            id,
            predicted,
            embedding,
            gt: Some(gt),
            label,
        });
    }

    Ok(SynthScene {
        train,
        queries,
        ..scene_core
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rot_error, trans_error};

    fn small_spec() -> SceneSpec {
        SceneSpec {
            num_train: 300,
            num_test_near: 80,
            num_test_far: 80,
            dim: 32,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.phase, b.phase);

        let c = generate_scene(&SceneSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.train[0].embedding, c.train[0].embedding);
    }

    #[test]
    fn field_is_deterministic_and_smooth() {
        let scene = generate_scene(&small_spec()).unwrap();
        let p = scene.train[17].pose;
        assert_eq!(scene.feature_field(&p), scene.feature_field(&p));

        let mut shifted = p;
        shifted.t[0] += 1e-9;
        let a = scene.feature_field(&p);
        let b = scene.feature_field(&shifted);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn translation_jacobian_matches_finite_differences() {
        let scene = generate_scene(&small_spec()).unwrap();
        let eps = 1e-4;
        for qi in [0usize, 11, 29] {
            let p = scene.queries[qi].gt.unwrap();
            let jac = scene.field_translation_jacobian(&p);
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for k in 0..3 {
                let mut hi = p;
                hi.t[k] += eps;
                let mut lo = p;
                lo.t[k] -= eps;
                let fh = scene.feature_field(&hi);
                let fl = scene.feature_field(&lo);
                for (i, (a, b)) in fh.iter().zip(&fl).enumerate() {
                    let fd = (a - b) / (2.0 * eps);
                    num += (fd - jac[i][k]).powi(2);
                    den += jac[i][k].powi(2);
                }
            }
            assert!((num.sqrt() / den.sqrt()) < 1e-5);
        }
    }

    #[test]
    fn near_far_split_respects_thresholds() {
        let spec = small_spec();
        let scene = generate_scene(&spec).unwrap();
        for q in &scene.queries {
            let gt = q.gt.unwrap();
            let witnesses = scene.train.iter().filter(|e| {
                trans_error(&e.pose, &gt) <= spec.near_radius_m
                    && rot_error(&e.pose, &gt) <= spec.near_angle_deg
            });
            match q.label {
                QueryLabel::Near => assert!(witnesses.count() > 0, "{} has no near witness", q.id),
                QueryLabel::Far => {
                    for e in &scene.train {
                        assert!(trans_error(&e.pose, &gt) > spec.near_radius_m, "{}", q.id);
                        assert!(rot_error(&e.pose, &gt) > spec.near_angle_deg, "{}", q.id);
                    }
                }
                QueryLabel::Unlabeled => panic!("generator must label queries"),
            }
        }
    }

    #[test]
    fn noiseless_regressor_predicts_exactly() {
        let spec = SceneSpec {
            feature_noise: 0.0,
            apr_floor_m: 0.0,
            apr_gain_m: 0.0,
            apr_floor_deg: 0.0,
            apr_gain_deg: 0.0,
            num_train: 50,
            num_test_near: 20,
            num_test_far: 5,
            dim: 16,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        for q in &scene.queries {
            assert_eq!(q.predicted, q.gt.unwrap());
        }
    }

    #[test]
    fn far_errors_exceed_near_errors() {
        let scene = generate_scene(&small_spec()).unwrap();
        let mut near: Vec<f64> = Vec::new();
        let mut far: Vec<f64> = Vec::new();
        for q in &scene.queries {
            let e = trans_error(&q.predicted, &q.gt.unwrap());
            match q.label {
                QueryLabel::Near => near.push(e),
                _ => far.push(e),
            }
        }
        near.sort_by(|a, b| a.partial_cmp(b).unwrap());
        far.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(far[far.len() / 2] >= 2.0 * near[near.len() / 2]);
    }

    #[test]
    fn training_self_retrieval_scores_one() {
        use crate::uncertainty::similarity_score;
        let scene = generate_scene(&small_spec()).unwrap();
        let db = scene.train_database(IndexConfig::Exhaustive).unwrap();
        let e = &scene.train[42];
        let emb = FeatureEmbedding::new(e.embedding.clone()).unwrap();
        let s = similarity_score(&db, &emb, &e.pose, 0.05).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
        assert_eq!(s.best_match_id.as_deref(), Some(e.id.as_str()));
    }

    #[test]
    fn infeasible_specs_error() {
        let no_train = SceneSpec {
            num_train: 0,
            num_test_near: 1,
            num_test_far: 0,
            ..SceneSpec::default()
        };
        assert!(matches!(generate_scene(&no_train), Err(CoreError::Generation(_))));

        let bad_dim = SceneSpec { dim: 0, ..SceneSpec::default() };
        assert!(generate_scene(&bad_dim).is_err());
    }

    #[test]
    fn export_roundtrip_preserves_scene_data() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("scene");
        let spec = SceneSpec {
            num_train: 40,
            num_test_near: 10,
            num_test_far: 5,
            dim: 8,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        scene.export(&stem).unwrap();

        let db = PoseFeatureDB::load(&stem).unwrap();
        assert_eq!(db.len(), 40);
        for (e, loaded) in scene.train.iter().zip(db.entries()) {
            assert_eq!(e.id, loaded.id);
            assert_eq!(e.pose, loaded.pose);
            assert_eq!(e.embedding.as_slice(), loaded.embedding.values());
        }

        let (queries, dim) = crate::replay::load_queries(&stem).unwrap();
        assert_eq!(dim, 8);
        assert_eq!(queries, scene.queries);
    }

    #[test]
    fn export_empty_scene() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("empty");
        let spec = SceneSpec {
            num_train: 0,
            num_test_near: 0,
            num_test_far: 0,
            dim: 4,
            ..SceneSpec::default()
        };
        generate_scene(&spec).unwrap().export(&stem).unwrap();
        assert_eq!(PoseFeatureDB::load(&stem).unwrap().len(), 0);
        assert!(crate::replay::load_queries(&stem).unwrap().0.is_empty());
    }

    #[test]
    fn manifest_roundtrip() {
        let spec = SceneSpec {
            seed: 7,
            dim: 96,
            feature_noise: 0.125,
            ..SceneSpec::default()
        };
        let mut back = SceneSpec::default();
        for (k, v) in spec.manifest_entries() {
            assert!(back.apply_kv(&k, &v).unwrap(), "unknown key {k}");
        }
        assert_eq!(spec, back);
        assert!(!back.apply_kv("gamma", "0.95").unwrap());
        assert!(back.apply_kv("dim", "not-a-number").is_err());
    }
}
