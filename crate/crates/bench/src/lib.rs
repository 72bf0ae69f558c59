//! Instance builders shared by the criterion benchmarks.

use pmkt_core::model::{ConstraintSpec, Instance};
use pmkt_core::scalar::{qi, qr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}{k}")).collect()
}

/// Three agents, two objects with one and two copies, equal endowments.
pub fn hz_example() -> Instance {
    Instance {
        agents: ids("a", 3),
        objects: vec!["a".into(), "b".into()],
        quantities: vec![qi(1), qi(2)],
        utilities: vec![vec![100.0, 1.0], vec![100.0, 1.0], vec![1.0, 100.0]],
        endowments: Some(vec![vec![qr(1, 3), qr(2, 3)]; 3]),
        alpha: 0.5,
        constraints: ConstraintSpec::Hz,
    }
}

/// Random unit-demand instance with utilities in `[0.1, 1]`.
pub fn random_hz(n: usize, l: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Instance {
        agents: ids("a", n),
        objects: ids("o", l),
        quantities: (0..l).map(|_| qi(rng.gen_range(1..=2))).collect(),
        utilities: (0..n).map(|_| (0..l).map(|_| rng.gen_range(0.1..=1.0)).collect()).collect(),
        endowments: None,
        alpha: 1.0,
        constraints: ConstraintSpec::Hz,
    }
}

/// Roommates with utilities drawn from `[0, 1)`.
pub fn roommates(n: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Instance {
        agents: ids("r", n),
        objects: ids("r", n),
        quantities: vec![qi(1); n],
        utilities: (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect(),
        endowments: None,
        alpha: 1.0,
        constraints: ConstraintSpec::Roommates { full_families: None },
    }
}

/// The three-agent roommates cycle with the symmetric preference table.
pub fn roommates_cycle() -> Instance {
    Instance {
        utilities: vec![vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]],
        ..roommates(3, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pmkt_core::model::validate;

    #[test]
    fn builders_produce_valid_instances() {
        for inst in [hz_example(), random_hz(4, 3, 5), roommates(4, 0), roommates_cycle()] {
            assert!(validate(&inst).is_ok(), "{:?}", validate(&inst));
        }
    }

    #[test]
    fn builders_are_seeded() {
        assert_eq!(random_hz(3, 3, 9), random_hz(3, 3, 9));
        assert_ne!(roommates(4, 1).utilities, roommates(4, 0).utilities);
    }
}
