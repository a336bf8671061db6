use std::collections::{HashMap, HashSet};

use octvf_core::split::{partition_sizes, split_by_patient, SplitRatios};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn thousand_random_datasets() {
    let ratios = SplitRatios::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..1000 {
        let patients = rng.random_range(3..120u32);
        let mut ids = Vec::new();
        for p in 0..patients {
            for _ in 0..rng.random_range(1..5) {
                ids.push(1000 + p * 7);
            }
        }
        let seed = rng.random::<u64>();
        let split = split_by_patient(&ids, &ratios, seed).unwrap();
        let mut owner: HashMap<u32, &str> = HashMap::new();
        let mut counts = Vec::new();
        for part in split.partitions() {
            let mut pats = HashSet::new();
            for &i in &part.exam_refs {
                let prev = owner.insert(ids[i], part.name.as_str());
                assert!(prev.is_none() || prev == Some(part.name.as_str()), "trial {trial}: patient {} leaks", ids[i]);
                pats.insert(ids[i]);
            }
            counts.push(pats.len());
        }
        assert_eq!(counts.iter().sum::<usize>(), patients as usize);
        let p = patients as f64;
        assert_eq!(counts[0], (0.6 * p).floor() as usize, "trial {trial}");
        assert!((counts[1] as f64 - 0.2 * p).abs() <= 1.0, "trial {trial}: {counts:?}");
        assert!((counts[2] as f64 - 0.2 * p).abs() <= 1.0, "trial {trial}: {counts:?}");
        assert_eq!(partition_sizes(patients as usize, &ratios).to_vec(), counts);
        let all: usize = split.partitions().iter().map(|p| p.exam_refs.len()).sum();
        assert_eq!(all, ids.len());
    }
}
