//! Subcommand implementations: resolve the config, run the corresponding
//! core pipeline, write outputs plus a manifest.

use std::path::{Path, PathBuf};

use cgcut_core::{
    benchmark, build_grid, build_model_covariance, crossfit_dr, decompose, dr_estimate,
    fit_outcome_model, io, is_estimate, run_cgc, select_design, tiling_partition, BenchmarkConfig,
    CgcConfig, Clustering, CovModel, CovarianceMatrix, CovarianceMode, CovariateLaw, GridShape,
    Method, RegionGraph, RegressionSpec, SpectralConfig, Sweep, SyntheticEnv,
};

use crate::config::Config;
use crate::svg;
use crate::CliError;

const COMMON_KEYS: &[&str] = &["seed", "threads", "out"];
const GRID_KEYS: &[&str] = &["grid.shape", "grid.side", "grid.width", "grid.height", "grid.radius", "grid.sectors"];
const COV_KEYS: &[&str] = &["cov.model", "cov.rho", "cov.csv"];
const ENV_KEYS: &[&str] = &[
    "env.signal",
    "env.covariate_law",
    "env.covariate_low",
    "env.covariate_high",
    "env.covariate_value",
];
const SPECTRAL_KEYS: &[&str] = &[
    "spectral.eigen_tolerance",
    "spectral.zero_threshold",
    "spectral.restarts",
    "spectral.max_iters",
];

fn allowed(extra: &[&'static str]) -> Vec<&'static str> {
    let mut keys: Vec<&'static str> = COMMON_KEYS.to_vec();
    keys.extend_from_slice(extra);
    keys
}

fn write_file(out_dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn read_input(path: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read input file {path}: {e}")))
}

fn out_dir(cfg: &Config) -> PathBuf {
    PathBuf::from(cfg.get("out").unwrap_or("."))
}

fn resolve_grid(cfg: &mut Config) -> Result<RegionGraph, CliError> {
    let shape = match cfg.require("grid.shape")? {
        "square" => GridShape::Square { side: cfg.parse_value("grid.side")? },
        "rectangle" => GridShape::Rectangle {
            width: cfg.parse_value("grid.width")?,
            height: cfg.parse_value("grid.height")?,
        },
        "circle" => GridShape::Circle { radius: cfg.parse_value("grid.radius")? },
        "fan" => GridShape::Fan {
            radius: cfg.parse_value("grid.radius")?,
            sectors: cfg.parse_value("grid.sectors")?,
        },
        other => return Err(CliError::config(format!("unknown grid.shape '{other}'"))),
    };
    build_grid(&shape).map_err(|e| CliError::config(format!("grid: {e}")))
}

/// Covariance from `cov.csv` or `cov.model` + `cov.rho` at dimension `r`.
fn resolve_covariance(cfg: &Config, r: usize) -> Result<CovarianceMatrix, CliError> {
    if let Some(path) = cfg.get("cov.csv") {
        let sigma = io::parse_covariance(&read_input(path)?)
            .map_err(|e| CliError::config(format!("covariance {path}: {e}")))?;
        if sigma.dim() != r {
            return Err(CliError::config(format!(
                "covariance {path} is {}x{} but the graph has {r} regions",
                sigma.dim(),
                sigma.dim()
            )));
        }
        return Ok(sigma);
    }
    let model: CovModel = cfg
        .require("cov.model")?
        .parse()
        .map_err(|e| CliError::config(format!("{e}")))?;
    let rho: f64 = cfg.parse_value("cov.rho")?;
    build_model_covariance(model, rho, r).map_err(|e| CliError::config(format!("{e}")))
}

fn resolve_covariate_law(cfg: &mut Config) -> Result<CovariateLaw, CliError> {
    cfg.default_key("env.covariate_law", "uniform");
    match cfg.require("env.covariate_law")? {
        "uniform" => {
            cfg.default_key("env.covariate_low", 0.5);
            cfg.default_key("env.covariate_high", 1.5);
            Ok(CovariateLaw::Uniform {
                low: cfg.parse_value("env.covariate_low")?,
                high: cfg.parse_value("env.covariate_high")?,
            })
        }
        "constant" => {
            cfg.default_key("env.covariate_value", 1.0);
            Ok(CovariateLaw::Constant(cfg.parse_value("env.covariate_value")?))
        }
        other => Err(CliError::config(format!("unknown env.covariate_law '{other}'"))),
    }
}

fn resolve_env(cfg: &mut Config, graph: RegionGraph, seed: u64) -> Result<SyntheticEnv, CliError> {
    cfg.default_key("env.signal", 0.025);
    let signal: f64 = cfg.parse_value("env.signal")?;
    let law = resolve_covariate_law(cfg)?;
    let sigma = resolve_covariance(cfg, graph.region_count())?;
    SyntheticEnv::new(graph, sigma, signal, law, seed)
        .map_err(|e| CliError::config(format!("{e}")))
}

fn resolve_spectral(cfg: &mut Config, seed: u64) -> Result<SpectralConfig, CliError> {
    let defaults = SpectralConfig::default();
    cfg.default_key("spectral.eigen_tolerance", defaults.eigen_tolerance);
    cfg.default_key("spectral.zero_threshold", defaults.zero_eigen_threshold);
    cfg.default_key("spectral.restarts", defaults.kmeans_restarts);
    cfg.default_key("spectral.max_iters", defaults.kmeans_max_iters);
    Ok(SpectralConfig {
        eigen_tolerance: cfg.parse_value("spectral.eigen_tolerance")?,
        zero_eigen_threshold: cfg.parse_value("spectral.zero_threshold")?,
        kmeans_restarts: cfg.parse_value("spectral.restarts")?,
        kmeans_max_iters: cfg.parse_value("spectral.max_iters")?,
        rng_seed: seed,
    })
}

fn resolve_regression(cfg: &mut Config, prefix: &str) -> Result<RegressionSpec, CliError> {
    let kind_key = format!("{prefix}.regression");
    let penalty_key = format!("{prefix}.ridge_penalty");
    cfg.default_key(&kind_key, "pooled-ridge");
    cfg.default_key(&penalty_key, 1e-3);
    match cfg.require(&kind_key)? {
        "zero" => Ok(RegressionSpec::Zero),
        "pooled-ridge" => Ok(RegressionSpec::PooledRidge { penalty: cfg.parse_value(&penalty_key)? }),
        other => Err(CliError::config(format!("unknown {kind_key} '{other}'"))),
    }
}

fn seed_of(cfg: &mut Config) -> Result<u64, CliError> {
    cfg.default_key("seed", 0);
    cfg.parse_value("seed")
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// `design`: sweep m on a graph + covariance, write the chosen clustering
/// and the score table.
pub fn cmd_design(mut cfg: Config) -> Result<(), CliError> {
    let mut keys = allowed(&["graph.file", "design.n", "design.m_max"]);
    keys.extend_from_slice(COV_KEYS);
    keys.extend_from_slice(SPECTRAL_KEYS);
    cfg.validate_keys("design", &keys)?;
    let seed = seed_of(&mut cfg)?;
    let graph_text = read_input(cfg.require("graph.file")?)?;
    let (graph, _) = io::parse_graph(&graph_text).map_err(|e| CliError::config(format!("{e}")))?;
    let sigma = resolve_covariance(&cfg, graph.region_count())?;
    cfg.default_key("design.n", 1);
    let n_reps: usize = cfg.parse_value("design.n")?;
    let m_max: Option<usize> = cfg.parse_optional("design.m_max")?;
    let spectral = resolve_spectral(&mut cfg, seed)?;

    let selection = select_design(&graph, &sigma, n_reps, m_max, &spectral)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let dir = out_dir(&cfg);
    write_file(&dir, "design_clustering.txt", &io::render_graph(&graph, &selection.clustering))?;
    let mut sweep = String::from("m,sigma1_sq\n");
    for (m, v) in &selection.per_m_mse {
        sweep.push_str(&format!("{m},{}\n", fmt(*v)));
    }
    write_file(&dir, "design_sweep.csv", &sweep)?;
    write_file(&dir, "design_manifest.txt", &cfg.render_manifest("design"))?;
    println!("chosen m = {} (of {} candidates)", selection.chosen_m, selection.per_m_mse.len());
    Ok(())
}

/// `mse`: exact breakdown for a (graph, clustering, covariance, N) tuple.
pub fn cmd_mse(mut cfg: Config) -> Result<(), CliError> {
    let mut keys = allowed(&["graph.file", "clustering.file", "mse.n"]);
    keys.extend_from_slice(COV_KEYS);
    cfg.validate_keys("mse", &keys)?;
    let _ = seed_of(&mut cfg)?;
    let graph_text = read_input(cfg.require("graph.file")?)?;
    let (graph, _) = io::parse_graph(&graph_text).map_err(|e| CliError::config(format!("{e}")))?;
    let clustering_text = read_input(cfg.require("clustering.file")?)?;
    let (_, clustering) =
        io::parse_graph(&clustering_text).map_err(|e| CliError::config(format!("{e}")))?;
    let sigma = resolve_covariance(&cfg, graph.region_count())?;
    cfg.default_key("mse.n", 1);
    let n_reps: usize = cfg.parse_value("mse.n")?;

    let b = decompose(&graph, &clustering, &sigma, n_reps)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let mut out = String::from("da,sc,i1,j1,j2,j3,sigma1_sq,total\n");
    out.push_str(&format!(
        "{},{},{},{},{},{},{},{}\n",
        fmt(b.da),
        fmt(b.sc),
        fmt(b.i1),
        fmt(b.j1),
        fmt(b.j2),
        fmt(b.j3),
        fmt(b.sigma1_sq),
        fmt(b.total)
    ));
    let dir = out_dir(&cfg);
    write_file(&dir, "mse.csv", &out)?;
    write_file(&dir, "mse_manifest.txt", &cfg.render_manifest("mse"))?;
    print!("{out}");
    Ok(())
}

/// `estimate`: IS, DR and DR-CF on a recorded batch.
pub fn cmd_estimate(mut cfg: Config) -> Result<(), CliError> {
    let keys = allowed(&[
        "clustering.file",
        "batch.file",
        "estimate.regression",
        "estimate.ridge_penalty",
        "estimate.folds",
    ]);
    cfg.validate_keys("estimate", &keys)?;
    let _ = seed_of(&mut cfg)?;
    let clustering_text = read_input(cfg.require("clustering.file")?)?;
    let (graph, design) =
        io::parse_graph(&clustering_text).map_err(|e| CliError::config(format!("{e}")))?;
    let batch_text = read_input(cfg.require("batch.file")?)?;
    let batch =
        io::parse_batch(&batch_text, &design).map_err(|e| CliError::config(format!("{e}")))?;
    let regression = resolve_regression(&mut cfg, "estimate")?;
    cfg.default_key("estimate.folds", 2);
    let folds: usize = cfg.parse_value("estimate.folds")?;

    let is = is_estimate(&graph, &batch);
    let model = fit_outcome_model(&graph, std::slice::from_ref(&batch), regression)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let dr = dr_estimate(&graph, &batch, &model).map_err(|e| CliError::runtime(format!("{e}")))?;
    let dr_cf = crossfit_dr(&graph, std::slice::from_ref(&batch), folds, regression)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let mut out = String::from("estimator,value\n");
    out.push_str(&format!("IS,{}\n", fmt(is)));
    out.push_str(&format!("DR,{}\n", fmt(dr)));
    out.push_str(&format!("DR-CF,{}\n", fmt(dr_cf)));
    let dir = out_dir(&cfg);
    write_file(&dir, "estimate.csv", &out)?;
    write_file(&dir, "estimate_manifest.txt", &cfg.render_manifest("estimate"))?;
    print!("{out}");
    Ok(())
}

fn resolve_design_spec(
    cfg: &mut Config,
    graph: &RegionGraph,
) -> Result<Clustering, CliError> {
    cfg.default_key("design.kind", "individual");
    match cfg.require("design.kind")? {
        "global" => Ok(Clustering::global(graph.region_count())),
        "individual" => Ok(Clustering::individual(graph.region_count())),
        "tiling" => {
            let tiles: usize = cfg.parse_value("design.tiles")?;
            tiling_partition(graph, tiles).map_err(|e| CliError::config(format!("{e}")))
        }
        "file" => {
            let text = read_input(cfg.require("design.file")?)?;
            let (g2, c) = io::parse_graph(&text).map_err(|e| CliError::config(format!("{e}")))?;
            if g2.region_count() != graph.region_count() {
                return Err(CliError::config(format!(
                    "design file covers {} regions, expected {}",
                    g2.region_count(),
                    graph.region_count()
                )));
            }
            Ok(c)
        }
        other => Err(CliError::config(format!("unknown design.kind '{other}'"))),
    }
}

/// `simulate`: draw a batch from a synthetic environment under a design.
pub fn cmd_simulate(mut cfg: Config) -> Result<(), CliError> {
    let mut keys = allowed(&["simulate.n", "design.kind", "design.tiles", "design.file"]);
    keys.extend_from_slice(GRID_KEYS);
    keys.extend_from_slice(COV_KEYS);
    keys.extend_from_slice(ENV_KEYS);
    cfg.validate_keys("simulate", &keys)?;
    let seed = seed_of(&mut cfg)?;
    let graph = resolve_grid(&mut cfg)?;
    let design = resolve_design_spec(&mut cfg, &graph)?;
    let n: usize = cfg.parse_value("simulate.n")?;
    let mut env = resolve_env(&mut cfg, graph.clone(), seed)?;

    let batch = env
        .sample_batch(&design, n)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let dir = out_dir(&cfg);
    write_file(&dir, "batch.csv", &io::render_batch(&batch))?;
    write_file(&dir, "simulate_clustering.txt", &io::render_graph(&graph, &design))?;
    write_file(&dir, "simulate_manifest.txt", &cfg.render_manifest("simulate"))?;
    println!("wrote {n} repetitions over {} regions", graph.region_count());
    Ok(())
}

/// `cgc`: the iterative loop on a synthetic environment.
pub fn cmd_cgc(mut cfg: Config) -> Result<(), CliError> {
    let mut keys = allowed(&[
        "cgc.batch_size",
        "cgc.total",
        "cgc.lambda",
        "cgc.covariance_mode",
        "cgc.regression",
        "cgc.ridge_penalty",
        "cgc.m_max",
        "cgc.folds",
        "cgc.initial",
        "cgc.write_round_clusterings",
    ]);
    keys.extend_from_slice(GRID_KEYS);
    keys.extend_from_slice(COV_KEYS);
    keys.extend_from_slice(ENV_KEYS);
    keys.extend_from_slice(SPECTRAL_KEYS);
    cfg.validate_keys("cgc", &keys)?;
    let seed = seed_of(&mut cfg)?;
    let graph = resolve_grid(&mut cfg)?;
    let mut env = resolve_env(&mut cfg, graph.clone(), seed)?;
    cfg.default_key("cgc.batch_size", 10);
    cfg.default_key("cgc.lambda", 0.1);
    cfg.default_key("cgc.covariance_mode", "cumulative");
    cfg.default_key("cgc.folds", 0);
    cfg.default_key("cgc.initial", "individual");
    cfg.default_key("cgc.write_round_clusterings", "false");
    let batch_size: usize = cfg.parse_value("cgc.batch_size")?;
    let total: usize = cfg.parse_value("cgc.total")?;
    let shrinkage: f64 = cfg.parse_value("cgc.lambda")?;
    let covariance_mode = match cfg.require("cgc.covariance_mode")? {
        "cumulative" => CovarianceMode::Cumulative,
        "single-batch" => CovarianceMode::SingleBatch,
        other => return Err(CliError::config(format!("unknown cgc.covariance_mode '{other}'"))),
    };
    let regression = resolve_regression(&mut cfg, "cgc")?;
    let m_max: Option<usize> = cfg.parse_optional("cgc.m_max")?;
    let folds: usize = cfg.parse_value("cgc.folds")?;
    let initial = match cfg.require("cgc.initial")? {
        "individual" => None,
        "global" => Some(Clustering::global(graph.region_count())),
        spec => match spec.strip_prefix("tiling:") {
            Some(t) => {
                let tiles: usize = t
                    .parse()
                    .map_err(|_| CliError::config(format!("bad cgc.initial '{spec}'")))?;
                Some(tiling_partition(&graph, tiles).map_err(|e| CliError::config(format!("{e}")))?)
            }
            None => return Err(CliError::config(format!("unknown cgc.initial '{spec}'"))),
        },
    };
    let write_rounds = cfg.parse_bool("cgc.write_round_clusterings")?;
    let spectral = resolve_spectral(&mut cfg, seed)?;

    let cgc_cfg = CgcConfig {
        batch_size,
        total_repetitions: total,
        initial_design: initial,
        covariance_mode,
        shrinkage,
        regression,
        m_max,
        crossfit_folds: if folds == 0 { None } else { Some(folds) },
        spectral,
        seed,
    };
    let trace = run_cgc(&mut env, &cgc_cfg).map_err(|e| CliError::runtime(format!("{e}")))?;
    let dir = out_dir(&cfg);
    let mut csv = String::from("round,chosen_m,ate_round\n");
    for round in &trace.rounds {
        csv.push_str(&format!("{},{},{}\n", round.round, round.chosen_m, fmt(round.ate)));
    }
    write_file(&dir, "cgc_trace.csv", &csv)?;
    if write_rounds {
        for round in &trace.rounds {
            write_file(
                &dir,
                &format!("cgc_round_{:03}_clustering.txt", round.round),
                &io::render_graph(&graph, &round.design),
            )?;
        }
    }
    let summary = format!(
        "final_ate = {}\nrounds = {}\ntrue_ate = {}\n",
        fmt(trace.final_ate),
        trace.rounds.len(),
        fmt(env.true_ate())
    );
    write_file(&dir, "cgc_summary.txt", &summary)?;
    write_file(&dir, "cgc_manifest.txt", &cfg.render_manifest("cgc"))?;
    print!("{summary}");
    Ok(())
}

/// `benchmark`: replication study across methods and a parameter sweep.
pub fn cmd_benchmark(mut cfg: Config) -> Result<(), CliError> {
    let mut keys = allowed(&[
        "benchmark.replications",
        "benchmark.batch_size",
        "benchmark.lambda",
        "benchmark.covariance_mode",
        "benchmark.regression",
        "benchmark.ridge_penalty",
        "benchmark.m_max",
        "benchmark.methods",
        "benchmark.rhos",
        "benchmark.ns",
        "benchmark.n",
        "benchmark.rho",
        "svg",
    ]);
    keys.extend_from_slice(GRID_KEYS);
    keys.push("cov.model");
    keys.extend_from_slice(ENV_KEYS);
    keys.extend_from_slice(SPECTRAL_KEYS);
    cfg.validate_keys("benchmark", &keys)?;
    let seed = seed_of(&mut cfg)?;
    let graph = resolve_grid(&mut cfg)?;
    cfg.default_key("benchmark.replications", 50);
    cfg.default_key("benchmark.batch_size", 20);
    cfg.default_key("benchmark.lambda", 0.1);
    cfg.default_key("benchmark.covariance_mode", "cumulative");
    cfg.default_key("benchmark.methods", "CGC,OCGC,GD,ID");
    cfg.default_key("svg", "false");
    cfg.default_key("env.signal", 0.025);
    let replications: usize = cfg.parse_value("benchmark.replications")?;
    let batch_size: usize = cfg.parse_value("benchmark.batch_size")?;
    let shrinkage: f64 = cfg.parse_value("benchmark.lambda")?;
    let covariance_mode = match cfg.require("benchmark.covariance_mode")? {
        "cumulative" => CovarianceMode::Cumulative,
        "single-batch" => CovarianceMode::SingleBatch,
        other => {
            return Err(CliError::config(format!(
                "unknown benchmark.covariance_mode '{other}'"
            )))
        }
    };
    let regression = resolve_regression(&mut cfg, "benchmark")?;
    let m_max: Option<usize> = cfg.parse_optional("benchmark.m_max")?;
    let methods: Vec<Method> = cfg
        .require("benchmark.methods")?
        .split(',')
        .map(|s| s.trim().parse::<Method>().map_err(|e| CliError::config(format!("{e}"))))
        .collect::<Result<_, _>>()?;
    let model: CovModel = cfg
        .require("cov.model")?
        .parse()
        .map_err(|e| CliError::config(format!("{e}")))?;
    let sweep = match (cfg.get("benchmark.rhos"), cfg.get("benchmark.ns")) {
        (Some(rhos), None) => {
            let values = parse_list::<f64>(rhos, "benchmark.rhos")?;
            Sweep::Rho { values, n_reps: cfg.parse_value("benchmark.n")? }
        }
        (None, Some(ns)) => {
            let values = parse_list::<usize>(ns, "benchmark.ns")?;
            Sweep::Reps { values, rho: cfg.parse_value("benchmark.rho")? }
        }
        _ => {
            return Err(CliError::config(
                "exactly one of benchmark.rhos (with benchmark.n) or benchmark.ns (with benchmark.rho) is required"
                    .into(),
            ))
        }
    };
    let signal: f64 = cfg.parse_value("env.signal")?;
    let law = resolve_covariate_law(&mut cfg)?;
    let spectral = resolve_spectral(&mut cfg, seed)?;
    let want_svg = cfg.parse_bool("svg")?;

    let bench_cfg = BenchmarkConfig {
        replications,
        batch_size,
        seed,
        regression,
        shrinkage,
        covariance_mode,
        m_max,
        spectral,
        signal_strength: signal,
        covariate_law: law,
    };
    let r = graph.region_count();
    let make = move |rho: f64| build_model_covariance(model, rho, r);
    let report = benchmark(&graph, &make, &sweep, &methods, &bench_cfg)
        .map_err(|e| CliError::runtime(format!("{e}")))?;
    let mut csv = String::from("method,param_name,param_value,rel_mse,se,replications,wall_ms\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.method,
            row.param_name,
            fmt(row.param_value),
            fmt(row.rel_mse),
            fmt(row.se),
            row.replications,
            row.wall_ms
        ));
    }
    let dir = out_dir(&cfg);
    write_file(&dir, "benchmark.csv", &csv)?;
    if want_svg {
        write_file(&dir, "benchmark.svg", &svg::line_chart(&report))?;
    }
    write_file(&dir, "benchmark_manifest.txt", &cfg.render_manifest("benchmark"))?;
    print!("{csv}");
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &str, key: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::config(format!("key '{key}': cannot parse '{s}'")))
        })
        .collect()
}
