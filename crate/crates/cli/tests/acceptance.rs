//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with its runtime. Run with
//! `cargo test -p cgcut-cli --test acceptance -- --nocapture`.

use std::process::Command;
use std::time::{Duration, Instant};

use cgcut_core::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn finish(number: u32, name: &str, start: Instant, budget: Duration) {
    let elapsed = start.elapsed();
    println!("ACCEPTANCE {number:2} ({name}): PASS in {elapsed:.2?}");
    assert!(
        elapsed <= budget,
        "criterion {number} exceeded its {budget:?} budget: {elapsed:?}"
    );
}

/// Random full-rectangle grid with sides in `1..=max_side`.
fn random_grid(rng: &mut ChaCha8Rng, max_side: u32) -> RegionGraph {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    build_grid(&GridShape::Rectangle { width: w, height: h }).unwrap()
}

/// Random dense partition of `r` regions into at most `max_m` clusters.
fn random_partition(rng: &mut ChaCha8Rng, r: usize, max_m: usize) -> Clustering {
    let m = rng.random_range(1..=max_m.min(r));
    loop {
        let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..m)).collect();
        if let Ok(c) = Clustering::new(labels) {
            return c;
        }
    }
}

fn random_psd(rng: &mut ChaCha8Rng, r: usize) -> CovarianceMatrix {
    let a = DMatrix::from_fn(r, r, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let m = &a * a.transpose() + DMatrix::<f64>::identity(r, r) * 0.5;
    CovarianceMatrix::new(m, CovarianceOrigin::External).unwrap()
}

fn random_covariance(rng: &mut ChaCha8Rng, r: usize) -> CovarianceMatrix {
    match rng.random_range(0..3) {
        0 => build_model_covariance(CovModel::Exponential, 0.1 + 0.8 * rng.random::<f64>(), r)
            .unwrap(),
        1 => build_model_covariance(CovModel::Constant, 0.1 + 0.8 * rng.random::<f64>(), r)
            .unwrap(),
        _ => random_psd(rng, r),
    }
}

/// All set partitions of n items.
fn all_partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(i: usize, max_used: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == labels.len() {
            out.push(labels.clone());
            return;
        }
        for l in 0..=max_used + 1 {
            labels[i] = l;
            rec(i + 1, max_used.max(l), labels, out);
        }
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; n];
    if n > 0 {
        rec(1, 0, &mut labels, &mut out);
    }
    out
}

#[test]
fn acceptance_01_formula_vs_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..30 {
        let g = random_grid(&mut rng, 3);
        let r = g.region_count();
        let c = random_partition(&mut rng, r, 6);
        let sigma = random_covariance(&mut rng, r);
        let n_reps = rng.random_range(1..=5usize);
        let formula = sigma1_squared(&g, &c, &sigma, n_reps, 0.5).unwrap() * n_reps as f64;
        let oracle = exact_variance_oracle(&g, &c, &sigma, 0.5).unwrap();
        assert!(
            (formula - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
            "formula {formula} vs oracle {oracle} (R={r}, m={})",
            c.cluster_count()
        );
    }
    finish(1, "formula-vs-oracle", start, Duration::from_secs(10));
}

#[test]
fn acceptance_02_decomposition_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    for _ in 0..100 {
        let g = random_grid(&mut rng, 4);
        let r = g.region_count();
        let c = random_partition(&mut rng, r, r);
        let sigma = random_covariance(&mut rng, r);
        let b = decompose(&g, &c, &sigma, 1).unwrap();
        let sum = b.sc + b.i1 + b.j1 + b.j2 + b.j3;
        assert!(
            (sum - b.sigma1_sq).abs() <= 1e-9 * b.sigma1_sq.abs().max(1.0),
            "decomposition {sum} vs sigma1 {} (R={r}, m={})",
            b.sigma1_sq,
            c.cluster_count()
        );
    }
    finish(2, "decomposition identity", start, Duration::from_secs(10));
}

#[test]
fn acceptance_03_global_design_optimal_exhaustive() {
    let start = Instant::now();
    for shape in [
        GridShape::Rectangle { width: 4, height: 1 },
        GridShape::Square { side: 2 },
    ] {
        let g = build_grid(&shape).unwrap();
        let r = g.region_count();
        let mut v = DMatrix::identity(r, r);
        for i in 0..r {
            for j in 0..r {
                if g.adjacent(i, j) {
                    v[(i, j)] = 0.4;
                }
            }
        }
        let sigma = CovarianceMatrix::new(v, CovarianceOrigin::External).unwrap();
        let partitions = all_partitions(r);
        assert_eq!(partitions.len(), 15);
        let global = sigma1_squared(&g, &Clustering::global(r), &sigma, 1, 0.5).unwrap();
        for labels in partitions {
            let c = Clustering::new(labels).unwrap();
            if c.cluster_count() == 1 {
                continue;
            }
            let score = sigma1_squared(&g, &c, &sigma, 1, 0.5).unwrap();
            assert!(
                score > global,
                "partition {:?} at {score} does not exceed global {global}",
                c.labels()
            );
        }
    }
    finish(3, "global design optimal under neighbor-only covariance", start, Duration::from_secs(1));
}

#[test]
fn acceptance_04_individual_design_optimal_exhaustive() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for r in 2..=6usize {
        let g =
            RegionGraph::from_parts((0..r).map(|i| (i as f64, 0.0)).collect(), &[]).unwrap();
        // strictly positive symmetric covariance
        let mut v = DMatrix::identity(r, r);
        for i in 0..r {
            for j in (i + 1)..r {
                let x = 0.05 + 0.5 * rng.random::<f64>();
                v[(i, j)] = x;
                v[(j, i)] = x;
            }
        }
        let sigma = CovarianceMatrix::new(v, CovarianceOrigin::External).unwrap();
        let individual = sigma1_squared(&g, &Clustering::individual(r), &sigma, 1, 0.5).unwrap();
        for labels in all_partitions(r) {
            let c = Clustering::new(labels).unwrap();
            let score = sigma1_squared(&g, &c, &sigma, 1, 0.5).unwrap();
            assert!(
                score >= individual - 1e-12,
                "partition {:?} at {score} beats individual {individual}",
                c.labels()
            );
        }
    }
    finish(4, "individual design optimal under no interference", start, Duration::from_secs(5));
}

#[test]
fn acceptance_05_surrogate_brackets_interference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut tested = 0;
    while tested < 200 {
        // decaying covariance with strictly positive entries: exponential in
        // Euclidean distance, or the constant structure
        let g = random_grid(&mut rng, 4);
        let r = g.region_count();
        if r < 2 {
            continue;
        }
        let sigma = if rng.random_bool(0.5) {
            let alpha = 0.2 + 1.8 * rng.random::<f64>();
            let v = DMatrix::from_fn(r, r, |i, j| {
                let (xi, yi) = g.coord(i);
                let (xj, yj) = g.coord(j);
                (-alpha * ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()).exp()
            });
            CovarianceMatrix::new(v, CovarianceOrigin::External).unwrap()
        } else {
            build_model_covariance(CovModel::Constant, 0.1 + 0.8 * rng.random::<f64>(), r)
                .unwrap()
        };
        assert!(check_decaying(&g, &sigma).unwrap(), "generator must satisfy decay");
        // random proper 2-partition
        let c = loop {
            let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..2)).collect();
            if let Ok(c) = Clustering::new(labels) {
                if c.cluster_count() == 2 {
                    break c;
                }
            }
        };
        let n_reps = 1;
        let plus = positive_part(&sigma);
        let mut first_term = 0.0;
        for i in 0..r {
            for j in 0..r {
                if c.label(i) == 0 && c.label(j) == 1 && g.adjacent(i, j) {
                    first_term += plus[(i, j)];
                }
            }
        }
        first_term *= 8.0 * r as f64 / n_reps as f64;
        let i1 = decompose(&g, &c, &sigma, n_reps).unwrap().i1;
        assert!(
            first_term >= i1 - 1e-9 * i1.abs().max(1.0),
            "upper bound violated: first term {first_term} < I1 {i1}"
        );
        // tightness side: requires min over all entries strictly positive
        let min_entry = sigma.values().iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_entry > 0.0);
        let max_off = (0..r)
            .flat_map(|i| (0..r).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| sigma.get(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
        let ratio = max_off / min_entry;
        let d_max = g.max_degree() as f64;
        assert!(
            first_term <= d_max * ratio * i1 + 1e-9 * i1.abs().max(1.0),
            "tightness violated: first term {first_term} > {d_max}*{ratio}*I1 ({i1})"
        );
        tested += 1;
    }
    finish(5, "surrogate first term brackets I1", start, Duration::from_secs(10));
}

#[test]
fn acceptance_06_toy_study_direction() {
    let start = Instant::now();
    // 12x12 grid, exponential correlation in Euclidean coordinate distance
    // (the spatial reading of the toy study; the index-distance reading
    // gives ratio 1.446 and is recorded as such in the design notes)
    let g = build_grid(&GridShape::Square { side: 12 }).unwrap();
    let rho: f64 = 0.9;
    let v = DMatrix::from_fn(144, 144, |i, j| {
        let (xi, yi) = g.coord(i);
        let (xj, yj) = g.coord(j);
        rho.powf(((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt())
    });
    let sigma = CovarianceMatrix::new(v, CovarianceOrigin::External).unwrap();
    let mut global = 0.0;
    let mut best = f64::INFINITY;
    let mut best_m = 0;
    for tiles in [1usize, 2, 3, 4, 6, 12] {
        let c = tiling_partition(&g, tiles).unwrap();
        let mse = sigma1_squared(&g, &c, &sigma, 1, 0.5).unwrap();
        if tiles == 1 {
            global = mse;
        }
        if mse < best {
            best = mse;
            best_m = c.cluster_count();
        }
    }
    assert!(
        global / best >= 1.5,
        "global/best = {} below 1.5 (best m = {best_m})",
        global / best
    );
    assert!(best_m != 1 && best_m != 144, "best tiling {best_m} is an extreme design");
    finish(6, "toy-study direction", start, Duration::from_secs(1));
}

#[test]
fn acceptance_07_dominance_at_desk_scale() {
    let start = Instant::now();
    let g = build_grid(&GridShape::Square { side: 8 }).unwrap();
    let make = |rho: f64| build_model_covariance(CovModel::Exponential, rho, 64);
    let cfg = BenchmarkConfig {
        replications: 50,
        batch_size: 20,
        seed: 707,
        ..Default::default()
    };
    let report = benchmark(
        &g,
        &make,
        &Sweep::Rho { values: vec![0.3, 0.7], n_reps: 100 },
        &[Method::Cgc, Method::Ocgc, Method::Global, Method::Individual],
        &cfg,
    )
    .unwrap();
    for rho in [0.3, 0.7] {
        let row = |m: Method| {
            report
                .rows
                .iter()
                .find(|r| r.method == m && r.param_value == rho)
                .unwrap()
        };
        let (ocgc, cgc, gd, id) = (
            row(Method::Ocgc),
            row(Method::Cgc),
            row(Method::Global),
            row(Method::Individual),
        );
        assert_eq!(ocgc.replications, 50);
        let (min_val, min_se) = if gd.rel_mse <= id.rel_mse {
            (gd.rel_mse, gd.se)
        } else {
            (id.rel_mse, id.se)
        };
        assert!(
            ocgc.rel_mse <= min_val + 2.0 * min_se,
            "rho={rho}: OCGC {} above min(GD, ID) {min_val} + 2se {min_se}",
            ocgc.rel_mse
        );
        assert!(
            cgc.rel_mse <= 1.5 * ocgc.rel_mse,
            "rho={rho}: CGC {} above 1.5 x OCGC {}",
            cgc.rel_mse,
            ocgc.rel_mse
        );
    }
    finish(7, "dominance at desk scale", start, Duration::from_secs(600));
}

#[test]
fn acceptance_08_dr_double_robustness() {
    let start = Instant::now();
    let g = build_grid(&GridShape::Square { side: 3 }).unwrap();
    let sigma = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
    let truth = SyntheticEnv::new(g.clone(), sigma.clone(), 0.025, CovariateLaw::default(), 0)
        .unwrap()
        .true_ate();
    // a deliberately wrong, data-independent outcome model
    let wrong = OutcomeModel::PooledRidge {
        coeffs: vec![1.0, -2.0, 0.5, 3.0, -0.7, 0.2, 0.05, -0.3, 1.5, 0.9],
        penalty: 1.0,
        feature_map: "pooled-trig-v1",
    };
    let design = tiling_partition(&g, 3).unwrap();
    let reps = 500;
    let mut estimates = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut env = SyntheticEnv::new(
            g.clone(),
            sigma.clone(),
            0.025,
            CovariateLaw::default(),
            800_000 + rep as u64,
        )
        .unwrap();
        let batch = env.sample_batch(&design, 1).unwrap();
        estimates.push(dr_estimate(&g, &batch, &wrong).unwrap());
    }
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - truth).abs() <= 3.0 * se,
        "DR mean {mean} vs truth {truth} beyond 3 x {se}"
    );
    finish(8, "DR double robustness", start, Duration::from_secs(60));
}

#[test]
fn acceptance_09_is_dr_degeneracy() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    for _ in 0..100 {
        let g = random_grid(&mut rng, 4);
        let r = g.region_count();
        let design = random_partition(&mut rng, r, r);
        let sigma = random_covariance(&mut rng, r);
        let mut env = SyntheticEnv::new(
            g.clone(),
            sigma,
            0.025,
            CovariateLaw::default(),
            rng.random::<u64>(),
        )
        .unwrap();
        let batch = env.sample_batch(&design, rng.random_range(1..=3)).unwrap();
        let is = is_estimate(&g, &batch);
        let dr = dr_estimate(&g, &batch, &OutcomeModel::Zero).unwrap();
        assert_eq!(is.to_bits(), dr.to_bits(), "IS {is} != DR(zero) {dr}");
    }
    finish(9, "IS-DR degeneracy", start, Duration::from_secs(1));
}

#[test]
fn acceptance_10_single_experiment_robustness() {
    let start = Instant::now();
    let g = build_grid(&GridShape::Square { side: 8 }).unwrap();
    let sigma = build_model_covariance(CovModel::Exponential, 0.7, 64).unwrap();
    let spectral = SpectralConfig::default();
    let ocgc = run_with_known_covariance(&g, &sigma, 1, None, &spectral).unwrap();
    let ocgc_mse = sigma1_squared(&g, &ocgc.clustering, &sigma, 1, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let draws = 50;
    let mut within = 0;
    for draw in 0..draws {
        let mut v = sigma.values().clone();
        for i in 0..64 {
            for j in i..64 {
                let noise: f64 = rng.sample(rand_distr::StandardNormal);
                v[(i, j)] += 0.1 * noise;
                if i != j {
                    v[(j, i)] = v[(i, j)];
                }
            }
        }
        let prior = CovarianceMatrix::new(v, CovarianceOrigin::External).unwrap();
        let cfg = SpectralConfig { rng_seed: draw, ..Default::default() };
        let outcome = run_single_experiment(&g, &prior, None, &cfg, Some(&sigma)).unwrap();
        let attained = outcome.reference_mse.unwrap();
        if attained <= 1.25 * ocgc_mse {
            within += 1;
        }
    }
    assert!(
        within * 10 >= draws * 9,
        "only {within}/{draws} draws within 25% of the oracle MSE"
    );
    finish(10, "single-experiment robustness", start, Duration::from_secs(60));
}

#[test]
fn acceptance_11_cgc_determinism_across_threads() {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_cgcut");
    let dir = std::env::temp_dir().join(format!("cgcut_acceptance_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("cgc.cfg");
    std::fs::write(
        &config,
        "grid.shape = square\n\
         grid.side = 6\n\
         cov.model = exponential\n\
         cov.rho = 0.7\n\
         cgc.total = 40\n\
         cgc.batch_size = 10\n\
         seed = 1234\n",
    )
    .unwrap();
    let run = |config: &std::path::Path, out: &std::path::Path, threads: &str| {
        let status = Command::new(bin)
            .arg("cgc")
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(out)
            .arg("--threads")
            .arg(threads)
            .status()
            .unwrap();
        assert!(status.success(), "cgc run failed");
        std::fs::read(out.join("cgc_trace.csv")).unwrap()
    };
    // first run produces the manifest; replay it at 1 and at max threads
    let first = run(&config, &dir.join("run0"), "0");
    let manifest = dir.join("run0").join("cgc_manifest.txt");
    assert!(manifest.exists());
    let single = run(&manifest, &dir.join("run1"), "1");
    let full = run(&manifest, &dir.join("run2"), "0");
    assert_eq!(first, single, "trace differs between initial run and single-thread replay");
    assert_eq!(single, full, "trace differs between 1 and max threads");
    let _ = std::fs::remove_dir_all(&dir);
    finish(11, "cgc determinism across threads", start, Duration::from_secs(120));
}
