//! Problem instances: a base station plus task nodes on the plane.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version tag written into instance files.
pub const INSTANCE_FORMAT_VERSION: u32 = 1;

/// A routing instance. Coordinates are kilometers; index 0 is the base
/// station, indices `1..=n_tasks` are task nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub coords: Vec<[f64; 2]>,
    pub side_km: f64,
    pub seed: u64,
}

/// Uniformly samples the base station and `n` task nodes over the square
/// `[0, side_km]^2`. Deterministic for a given seed.
pub fn generate_instance(n: usize, side_km: f64, seed: u64) -> Result<Instance> {
    generate_instance_impl(n, side_km, seed, None)
}

/// Like [`generate_instance`] but with the base station pinned to `depot_km`.
pub fn generate_instance_with_depot(
    n: usize,
    side_km: f64,
    seed: u64,
    depot_km: [f64; 2],
) -> Result<Instance> {
    generate_instance_impl(n, side_km, seed, Some(depot_km))
}

fn generate_instance_impl(
    n: usize,
    side_km: f64,
    seed: u64,
    depot_km: Option<[f64; 2]>,
) -> Result<Instance> {
    if n < 1 {
        return Err(Error::InvalidParameter("need at least one task node".into()));
    }
    if !(side_km > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "side_km must be positive, got {side_km}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| {
        let x: f64 = rng.random::<f64>() * side_km;
        let y: f64 = rng.random::<f64>() * side_km;
        [x, y]
    };
    let mut coords = Vec::with_capacity(n + 1);
    coords.push(match depot_km {
        Some(d) => {
            // Depot draws are still consumed so the task layout does not
            // depend on whether the depot was pinned.
            let _ = point(&mut rng);
            d
        }
        None => point(&mut rng),
    });
    for _ in 0..n {
        coords.push(point(&mut rng));
    }
    let inst = Instance {
        coords,
        side_km,
        seed,
    };
    inst.validate()?;
    Ok(inst)
}

impl Instance {
    /// Number of task nodes (excluding the base station).
    pub fn n_tasks(&self) -> usize {
        self.coords.len() - 1
    }

    /// Total node count including the base station.
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() < 2 {
            return Err(Error::InvalidParameter(
                "instance needs the base station and at least one task node".into(),
            ));
        }
        if !(self.side_km > 0.0) {
            return Err(Error::InvalidParameter("side_km must be positive".into()));
        }
        for (i, c) in self.coords.iter().enumerate() {
            let ok = c.iter().all(|v| v.is_finite() && (0.0..=self.side_km).contains(v));
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "node {i} at {c:?} outside [0, {}]^2",
                    self.side_km
                )));
            }
        }
        Ok(())
    }

    /// Pairwise Euclidean distances in kilometers.
    pub fn dist_matrix(&self) -> DistMatrix {
        let n = self.coords.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = self.coords[i][0] - self.coords[j][0];
                let dy = self.coords[i][1] - self.coords[j][1];
                let dist = (dx * dx + dy * dy).sqrt();
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        DistMatrix { n, d }
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            format_version: INSTANCE_FORMAT_VERSION,
            nodes: self.coords.clone(),
            side_km: self.side_km,
            seed: self.seed,
        };
        serde_json::to_string_pretty(&file).expect("instance serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("instance: {e}")))?;
        if file.format_version != INSTANCE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported instance format_version {}",
                file.format_version
            )));
        }
        let inst = Instance {
            coords: file.nodes,
            side_km: file.side_km,
            seed: file.seed,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    format_version: u32,
    nodes: Vec<[f64; 2]>,
    side_km: f64,
    seed: u64,
}

/// Dense symmetric distance matrix (km).
#[derive(Debug, Clone)]
pub struct DistMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance(20, 8.0, 7).unwrap();
        let b = generate_instance(20, 8.0, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_instance(20, 8.0, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_box_instance_is_valid() {
        let inst = generate_instance(1, 0.001, 3).unwrap();
        assert_eq!(inst.n_tasks(), 1);
        inst.validate().unwrap();
    }

    #[test]
    fn coordinates_stay_in_the_box() {
        let inst = generate_instance(500, 8.0, 11).unwrap();
        for c in &inst.coords {
            assert!(c[0] >= 0.0 && c[0] <= 8.0);
            assert!(c[1] >= 0.0 && c[1] <= 8.0);
        }
    }

    #[test]
    fn pinned_depot_is_respected() {
        let inst = generate_instance_with_depot(5, 8.0, 3, [4.0, 4.0]).unwrap();
        assert_eq!(inst.coords[0], [4.0, 4.0]);
        // Task layout identical to the unpinned draw with the same seed.
        let free = generate_instance(5, 8.0, 3).unwrap();
        assert_eq!(&inst.coords[1..], &free.coords[1..]);
    }

    /// Kolmogorov-Smirnov test of one empirical sample against U(0, side).
    fn ks_p_value(sample: &mut [f64], side: f64) -> f64 {
        sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sample.len() as f64;
        let mut d: f64 = 0.0;
        for (i, x) in sample.iter().enumerate() {
            let cdf = x / side;
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
        }
        // Asymptotic Kolmogorov distribution.
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        let mut p = 0.0;
        for k in 1..=100 {
            let k = k as f64;
            p += 2.0 * (-1.0f64).powi(k as i32 + 1) * (-2.0 * k * k * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn marginals_are_uniform() {
        let inst = generate_instance(99_999, 8.0, 42).unwrap();
        let mut xs: Vec<f64> = inst.coords.iter().map(|c| c[0]).collect();
        let mut ys: Vec<f64> = inst.coords.iter().map(|c| c[1]).collect();
        assert!(ks_p_value(&mut xs, 8.0) > 0.01);
        assert!(ks_p_value(&mut ys, 8.0) > 0.01);
    }

    #[test]
    fn distance_matrix_three_four_five() {
        let inst = Instance {
            coords: vec![[0.0, 0.0], [3.0, 4.0]],
            side_km: 5.0,
            seed: 0,
        };
        let d = inst.dist_matrix();
        assert_eq!(d.get(0, 1), 5.0);
        assert_eq!(d.get(1, 0), 5.0);
        assert_eq!(d.get(0, 0), 0.0);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn distance_matrix_matches_pairwise_recomputation() {
        let inst = generate_instance(30, 8.0, 5).unwrap();
        let d = inst.dist_matrix();
        for i in 0..inst.n_nodes() {
            for j in 0..inst.n_nodes() {
                let dx = inst.coords[i][0] - inst.coords[j][0];
                let dy = inst.coords[i][1] - inst.coords[j][1];
                assert_eq!(d.get(i, j), (dx * dx + dy * dy).sqrt());
                assert_eq!(d.get(i, j), d.get(j, i));
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let inst = generate_instance(12, 8.0, 99).unwrap();
        let text = inst.to_json();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(inst, back);
        assert_eq!(text, back.to_json());
    }

    #[test]
    fn json_rejects_unknown_version() {
        let inst = generate_instance(3, 8.0, 1).unwrap();
        let text = inst.to_json().replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(Instance::from_json(&text).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn triangle_inequality(seed in 0u64..500, n in 2usize..12) {
                let inst = generate_instance(n, 8.0, seed).unwrap();
                let d = inst.dist_matrix();
                let m = inst.n_nodes();
                for i in 0..m {
                    prop_assert_eq!(d.get(i, i), 0.0);
                    for j in 0..m {
                        for k in 0..m {
                            prop_assert!(d.get(i, j) <= d.get(i, k) + d.get(k, j) + 1e-12);
                        }
                    }
                }
            }
        }
    }
}
