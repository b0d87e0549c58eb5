use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mbrec::dataset::{load_interactions, write_interactions, IdMap, InteractionLog, Schema};
use mbrec::synthgen::{empirical_density, generate, read_truth, write_truth, SynthSpec};
use mbrec::Error;

fn spec(users: usize, items: usize, k: usize, rho: f64, density: f64, seed: u64) -> SynthSpec {
    SynthSpec {
        rho,
        density: vec![density; k],
        seed,
        ..SynthSpec::new(users, items, k)
    }
}

fn item_sets(log: &InteractionLog) -> Vec<Vec<HashSet<usize>>> {
    let mut sets = vec![vec![HashSet::new(); log.num_behaviors]; log.num_users];
    for r in &log.records {
        sets[r.user][r.behavior].insert(r.item);
    }
    sets
}

/// Mean over users and behavior pairs of the Jaccard index of item sets.
fn mean_jaccard(log: &InteractionLog) -> f64 {
    let (mut total, mut n) = (0.0, 0usize);
    for per_user in item_sets(log) {
        for a in 0..per_user.len() {
            for b in a + 1..per_user.len() {
                let union = per_user[a].union(&per_user[b]).count();
                if union > 0 {
                    total += per_user[a].intersection(&per_user[b]).count() as f64 / union as f64;
                    n += 1;
                }
            }
        }
    }
    total / n as f64
}

/// Pearson chi-square of the 2x2 table (behavior 0 present, behavior 1
/// present) over one random item per user.
fn chi_square(log: &InteractionLog, seed: u64) -> f64 {
    let sets = item_sets(log);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = [[0.0f64; 2]; 2];
    for per_user in &sets {
        let i = rng.random_range(0..log.num_items);
        t[per_user[0].contains(&i) as usize][per_user[1].contains(&i) as usize] += 1.0;
    }
    let n: f64 = t.iter().flatten().sum();
    let mut chi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let expected = (t[a][0] + t[a][1]) * (t[0][b] + t[1][b]) / n;
            chi += (t[a][b] - expected).powi(2) / expected;
        }
    }
    chi
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(200, 80, 3, 0.8, 0.05, 9);
    let schema = Schema::new(["view", "cart", "buy"]).unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let (log, truth) = generate(&s).unwrap();
        let data = dir.path().join(format!("data{run}.tsv"));
        let truth_path = dir.path().join(format!("truth{run}.bin"));
        write_interactions(&data, &log, &IdMap::identity(200, 80), &schema, &[("seed", "9".into())]).unwrap();
        write_truth(&truth_path, &truth, s.seed).unwrap();
        files.push((std::fs::read(data).unwrap(), std::fs::read(truth_path).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let (other, _) = generate(&SynthSpec { seed: 10, ..s }).unwrap();
    assert_ne!(other, generate(&spec(200, 80, 3, 0.8, 0.05, 9)).unwrap().0);
}

#[test]
fn written_log_loads_back() {
    let dir = tempfile::tempdir().unwrap();
    let (log, truth) = generate(&spec(50, 40, 2, 0.5, 0.1, 3)).unwrap();
    let schema = Schema::new(["click", "buy"]).unwrap();
    let path = dir.path().join("data.tsv");
    write_interactions(&path, &log, &IdMap::identity(50, 40), &schema, &[]).unwrap();
    let (back, ids) = load_interactions(&path, &schema).unwrap();
    assert_eq!(back.records.len(), log.records.len());
    for (a, b) in log.records.iter().zip(&back.records) {
        assert_eq!(ids.users[b.user], a.user.to_string());
        assert_eq!(ids.items[b.item], a.item.to_string());
        assert_eq!(a.behavior, b.behavior);
    }

    let tp = dir.path().join("truth.bin");
    write_truth(&tp, &truth, 3).unwrap();
    let (t2, seed) = read_truth(&tp).unwrap();
    assert_eq!(seed, 3);
    assert_eq!(t2, truth);
}

#[test]
fn densities_within_ten_percent() {
    let mut s = spec(1000, 500, 3, 0.8, 0.0, 1);
    s.density = vec![0.05, 0.02, 0.01];
    let (log, truth) = generate(&s).unwrap();
    for (k, (got, want)) in empirical_density(&log).iter().zip(&s.density).enumerate() {
        assert!((got - want).abs() <= 0.1 * want, "behavior {k}: {got} vs {want}");
    }
    assert_eq!(truth.invariant.rows(), 1000);
    assert_eq!(truth.items.dim(), 16);
    assert_eq!(truth.specific.len(), 3);
}

#[test]
fn shared_vector_raises_overlap() {
    let (lo, _) = generate(&spec(500, 200, 3, 0.0, 0.05, 4)).unwrap();
    let (hi, _) = generate(&spec(500, 200, 3, 1.0, 0.05, 4)).unwrap();
    let (j0, j1) = (mean_jaccard(&lo), mean_jaccard(&hi));
    assert!(j1 > j0, "rho=1 {j1} vs rho=0 {j0}");
}

#[test]
fn overlap_monotone_in_rho() {
    for seed in 0..3 {
        let j: Vec<f64> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&rho| mean_jaccard(&generate(&spec(400, 150, 3, rho, 0.05, seed)).unwrap().0))
            .collect();
        assert!(j[0] < j[1] && j[1] < j[2], "seed {seed}: {j:?}");
    }
}

#[test]
fn independent_behaviors_at_rho_zero() {
    // 10.828 is the 0.999 quantile of chi-square with one degree of freedom.
    let (log, _) = generate(&spec(5000, 50, 2, 0.0, 0.3, 12)).unwrap();
    let chi = chi_square(&log, 99);
    assert!(chi < 10.828, "chi-square {chi}");
    // The same statistic detects the dependence planted at rho = 1.
    let (log, _) = generate(&spec(5000, 50, 2, 1.0, 0.3, 12)).unwrap();
    let chi = chi_square(&log, 99);
    assert!(chi > 10.828, "chi-square {chi}");
}

#[test]
fn unachievable_density_is_an_error() {
    for bad in [0.0, 1.0, -0.1, 1e-9] {
        let err = generate(&spec(10, 10, 2, 0.5, bad, 0)).unwrap_err();
        assert!(matches!(err, Error::Density { behavior: 0, .. }), "{bad}: {err}");
    }
    let mut s = spec(10, 10, 2, 0.5, 0.1, 0);
    s.rho = 1.5;
    assert!(generate(&s).is_err());
}
