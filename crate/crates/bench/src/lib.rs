//! Fixture builders shared by the benchmarks: random databases and queries
//! sized like a mid-size scene (thousands of entries, dim 1024).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hrapr_core::geometry::{Pose, Quat};
use hrapr_core::store::{build_database, FeatureEmbedding, IndexConfig, PoseFeatureDB};

/// Edge of the position box in meters. Sized so a 0.2 m search radius
/// retrieves a few dozen candidates out of 7000 entries.
pub const BOX_M: f64 = 2.0;

fn random_pose<R: Rng>(rng: &mut R) -> Pose {
    let t = [
        rng.gen::<f64>() * BOX_M,
        rng.gen::<f64>() * BOX_M,
        rng.gen::<f64>() * BOX_M,
    ];
    let q = Quat::normalize(
        rng.gen::<f64>() - 0.5,
        rng.gen::<f64>() - 0.5,
        rng.gen::<f64>() - 0.5,
        rng.gen::<f64>() - 0.5,
    )
    .unwrap_or(Quat::IDENTITY);
    Pose::new(t, q)
}

fn random_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect()
}

/// Build a database of `count` random entries at dimension `dim`.
pub fn random_db(count: usize, dim: usize, seed: u64, index: IndexConfig) -> PoseFeatureDB {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..count)
        .map(|i| (format!("e{i:06}"), random_pose(&mut rng), random_vector(&mut rng, dim)))
        .collect();
    build_database(records, dim, index).expect("valid random records")
}

/// A query position inside the box plus a random embedding.
pub fn random_query(dim: usize, seed: u64) -> (Pose, FeatureEmbedding) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = random_pose(&mut rng);
    let emb = FeatureEmbedding::new(random_vector(&mut rng, dim)).expect("finite vector");
    (pose, emb)
}
