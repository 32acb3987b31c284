//! Random layout-planning instances: positive norms and a level multiset.

use qlayout_core::layout::{QuantLevel, QuantLevelSet};
use qlayout_core::rng::{self, below, uniform};
use qlayout_core::sensitivity::SensitivityProfile;

pub struct Instance {
    pub norms: Vec<f64>,
    pub levels: QuantLevelSet,
    pub sample_count: usize,
}

impl Instance {
    pub fn profile(&self) -> SensitivityProfile {
        SensitivityProfile::from_input_norms(&self.norms, self.sample_count)
    }
}

/// Up to 8 layers, 1 to 4 distinct levels with random multiplicities.
pub fn instance(seed: u64) -> Instance {
    let r = &mut rng::stream(seed, &[0x1A5]);
    let n = 1 + below(r, 8);
    let k = 1 + below(r, 4);
    let mut errors: Vec<f64> = Vec::new();
    while errors.len() < k {
        let q = 10f64.powf(-uniform(r, 1.0, 10.0));
        if !errors.contains(&q) {
            errors.push(q);
        }
    }
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        counts[below(r, k)] += 1;
    }
    let entries = errors
        .iter()
        .zip(&counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(i, (&q, &c))| (QuantLevel::new(format!("l{i}"), q), c))
        .collect();
    Instance {
        norms: (0..n).map(|_| uniform(r, 0.01, 10.0)).collect(),
        levels: QuantLevelSet::new(entries).unwrap(),
        sample_count: 1 + below(r, 256),
    }
}
