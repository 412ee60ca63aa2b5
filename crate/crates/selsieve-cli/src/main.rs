//! Command-line driver: `simulate`, `fit`, `bootstrap`, `decompose`.

mod config;
use selsieve::pipeline;
mod tables;

use clap::{Args, Parser, Subcommand};
use config::{load_config, Manifest, RunConfig, Versions};
use selsieve::data::{load_dataset, Schema};
use selsieve::decompose::{decompose, CategoryStats, GroupStats};
use selsieve::error::{Error, Result};
use selsieve::montecarlo::{run_bootstrap_study, run_study};
use std::path::{Path, PathBuf};
use std::time::Instant;
use tables::{aligned_text, f17, f4, write_csv, write_text};

#[derive(Parser)]
#[command(name = "selsieve", version, about = "Two-step sieve estimation of multilayered sample-selection models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a Monte Carlo study (or bootstrap SE study when B is configured).
    Simulate(Common),
    /// Fit the configured estimator on a CSV dataset.
    Fit(Common),
    /// Pairs bootstrap of the full pipeline on a CSV dataset.
    Bootstrap(Common),
    /// Three-way gap decomposition from per-category group statistics.
    Decompose(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config, or a manifest.json from a previous run for exact replay.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rayon thread count (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory (default: config value, then current directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{} {e}", e.code());
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = match &cli.cmd {
        Cmd::Simulate(c) => ("simulate", c),
        Cmd::Fit(c) => ("fit", c),
        Cmd::Bootstrap(c) => ("bootstrap", c),
        Cmd::Decompose(c) => ("decompose", c),
    };
    let mut cfg = load_config(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &common.out {
        cfg.out_dir = Some(o.clone());
    }
    let seed = cfg.seed.unwrap_or(0);
    cfg.seed = Some(seed);
    if let Some(t) = cfg.threads {
        // ignore the error if a global pool already exists (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Error::Io { path: out_dir.display().to_string(), source: e })?;

    let start = Instant::now();
    match name {
        "simulate" => cmd_simulate(&cfg, seed, &out_dir)?,
        "fit" => cmd_fit(&cfg, &out_dir)?,
        "bootstrap" => cmd_bootstrap(&cfg, seed, &out_dir)?,
        "decompose" => cmd_decompose(&cfg, &out_dir)?,
        _ => unreachable!(),
    }
    let manifest = Manifest {
        command: name.to_string(),
        config: cfg,
        seed,
        versions: Versions {
            selsieve: env!("CARGO_PKG_VERSION").to_string(),
            cli: env!("CARGO_PKG_VERSION").to_string(),
        },
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidArgument(format!("manifest serialization: {e}")))?;
    write_text(&out_dir.join("manifest.json"), &text)?;
    Ok(())
}

fn section<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("config is missing the [{name}] section")))
}

fn cmd_simulate(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let sc = section(&cfg.simulate, "simulate")?;
    let sim = sc.to_sim_config(seed)?;
    if sim.bootstrap.is_some() {
        let study = run_bootstrap_study(&sim)?;
        let header = ["category", "coefficient", "mean_hc_se", "mean_boot_se", "mc_sd", "ratio"];
        let csv_rows: Vec<Vec<String>> = study
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.category.to_string(),
                    r.coefficient.to_string(),
                    f17(r.mean_hc_se),
                    f17(r.mean_boot_se),
                    f17(r.mc_sd),
                    f17(r.ratio),
                ]
            })
            .collect();
        write_csv(&out.join("bootstrap.csv"), &header, &csv_rows)?;
        let txt_rows: Vec<Vec<String>> = study
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.category.to_string(),
                    r.coefficient.to_string(),
                    f4(r.mean_hc_se),
                    f4(r.mean_boot_se),
                    f4(r.mc_sd),
                    f4(r.ratio),
                ]
            })
            .collect();
        let title = format!(
            "Bootstrap SE validation (R = {}, B = {})",
            study.replications, study.b
        );
        write_text(&out.join("bootstrap.txt"), &aligned_text(&title, &header, &txt_rows))?;
        return Ok(());
    }
    let table = run_study(&sim)?;
    let header = [
        "estimator", "category", "coefficient", "rmse", "mean_bias", "abs_mean_bias",
        "coverage", "mc_sd", "mean_se",
    ];
    let csv_rows: Vec<Vec<String>> = table
        .cells
        .iter()
        .map(|c| {
            vec![
                c.estimator.clone(),
                c.category.to_string(),
                c.coefficient.to_string(),
                f17(c.rmse),
                f17(c.mean_bias),
                f17(c.abs_mean_bias),
                f17(c.coverage),
                f17(c.mc_sd),
                f17(c.mean_se),
            ]
        })
        .collect();
    write_csv(&out.join("metrics.csv"), &header, &csv_rows)?;
    let mut txt_rows: Vec<Vec<String>> = table
        .cells
        .iter()
        .map(|c| {
            vec![
                c.estimator.clone(),
                c.category.to_string(),
                c.coefficient.to_string(),
                f4(c.rmse),
                f4(c.mean_bias),
                f4(c.abs_mean_bias),
                f4(c.coverage),
                f4(c.mc_sd),
                f4(c.mean_se),
            ]
        })
        .collect();
    let mut seen = Vec::new();
    for c in &table.cells {
        if !seen.contains(&c.estimator) {
            seen.push(c.estimator.clone());
        }
    }
    for est in &seen {
        if let Some((rmse, bias, cov)) = table.avg_overall(est) {
            txt_rows.push(vec![
                format!("{est} (avg)"),
                "-".into(),
                "-".into(),
                f4(rmse),
                "-".into(),
                f4(bias),
                f4(cov),
                "-".into(),
                "-".into(),
            ]);
        }
    }
    let mut title = format!("Monte Carlo metrics (R = {})", table.replications);
    for (est, n_failed) in &table.failures {
        if *n_failed > 0 {
            title.push_str(&format!("\n{est}: {n_failed} failed replications excluded"));
        }
    }
    write_text(&out.join("metrics.txt"), &aligned_text(&title, &header, &txt_rows))?;
    Ok(())
}

fn load_fit_dataset(fc: &config::FitCfg) -> Result<selsieve::data::Dataset> {
    let schema =
        Schema { d: fc.d.clone(), y: fc.y.clone(), categorical: fc.categorical.clone() };
    load_dataset(&fc.data, &schema)
}

fn fit_report_rows(
    ds: &selsieve::data::Dataset,
    reports: &[pipeline::CategoryReport],
    full: bool,
) -> Vec<Vec<String>> {
    let fmt: fn(f64) -> String = if full { f17 } else { f4 };
    let mut rows = Vec::new();
    for rep in reports {
        for (j, name) in ds.names.iter().enumerate() {
            let hse = rep.fit.vcov_homoskedastic[(j, j)].sqrt();
            rows.push(vec![
                rep.category.to_string(),
                name.clone(),
                fmt(rep.fit.beta[j]),
                fmt(rep.fit.robust_se()[j]),
                fmt(hse),
                rep.fit.kappa.to_string(),
                fmt(rep.fit.condition_number),
                rep.fit.dropped.len().to_string(),
                rep.fit.clamped.to_string(),
            ]);
        }
    }
    rows
}

const FIT_HEADER: [&str; 9] = [
    "category", "coefficient", "beta", "robust_se", "homoskedastic_se", "kappa",
    "condition_number", "dropped", "clamped",
];

fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<()> {
    let fc = section(&cfg.fit, "fit")?;
    let ds = load_fit_dataset(fc)?;
    let reports = pipeline::fit_dataset(&ds, &fc.recipe)?;
    write_csv(&out.join("fit.csv"), &FIT_HEADER, &fit_report_rows(&ds, &reports, true))?;
    let title = format!("Estimator '{}' ({})", fc.recipe.estimator, fc.recipe.architecture);
    write_text(
        &out.join("fit.txt"),
        &aligned_text(&title, &FIT_HEADER, &fit_report_rows(&ds, &reports, false)),
    )?;
    Ok(())
}

fn cmd_bootstrap(cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let bc = section(&cfg.bootstrap, "bootstrap")?;
    let ds = load_fit_dataset(&bc.fit)?;
    let boot = pipeline::bootstrap_dataset(&ds, &bc.fit.recipe, bc.b, seed)?;
    let header = ["category", "coefficient", "beta", "robust_se", "boot_se", "ratio"];
    let mut csv_rows = Vec::new();
    let mut txt_rows = Vec::new();
    for (ki, rep) in boot.point.iter().enumerate() {
        let rse = rep.fit.robust_se();
        for (j, name) in ds.names.iter().enumerate() {
            let ratio = rse[j] / boot.boot_se[ki][j];
            csv_rows.push(vec![
                rep.category.to_string(),
                name.clone(),
                f17(rep.fit.beta[j]),
                f17(rse[j]),
                f17(boot.boot_se[ki][j]),
                f17(ratio),
            ]);
            txt_rows.push(vec![
                rep.category.to_string(),
                name.clone(),
                f4(rep.fit.beta[j]),
                f4(rse[j]),
                f4(boot.boot_se[ki][j]),
                f4(ratio),
            ]);
        }
    }
    write_csv(&out.join("bootstrap.csv"), &header, &csv_rows)?;
    let title = format!("Pairs bootstrap (B = {}, {} failed draws)", boot.b, boot.failed);
    write_text(&out.join("bootstrap.txt"), &aligned_text(&title, &header, &txt_rows))?;
    Ok(())
}

fn read_group_stats(path: &Path) -> Result<GroupStats> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path.display().to_string(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            },
            _ => Error::Csv { path: path.display().to_string(), source: e },
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column '{name}'")))
    };
    let (c_cat, c_ma, c_mb, c_sa, c_sb, c_beta) = (
        col("category")?,
        col("mean_a")?,
        col("mean_b")?,
        col("share_a")?,
        col("share_b")?,
        col("beta")?,
    );
    let mut rows: Vec<(usize, CategoryStats)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Csv { path: path.display().to_string(), source: e })?;
        let num = |idx: usize| -> Result<f64> {
            rec.get(idx)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Validation(format!("bad numeric field in {rec:?}")))
        };
        let cat: usize = rec
            .get(c_cat)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Validation(format!("bad category in {rec:?}")))?;
        rows.push((
            cat,
            CategoryStats {
                mean_a: num(c_ma)?,
                mean_b: num(c_mb)?,
                share_a: num(c_sa)?,
                share_b: num(c_sb)?,
                beta: num(c_beta)?,
            },
        ));
    }
    rows.sort_by_key(|r| r.0);
    Ok(GroupStats { categories: rows.into_iter().map(|r| r.1).collect() })
}

fn cmd_decompose(cfg: &RunConfig, out: &Path) -> Result<()> {
    let dc = section(&cfg.decompose, "decompose")?;
    let gs = read_group_stats(&dc.input)?;
    let d = decompose(&gs)?;
    let header = ["component", "value"];
    let comps = [
        ("raw", d.raw),
        ("structural_within", d.structural_within),
        ("covariate_composition", d.covariate_composition),
        ("between_sorting", d.between_sorting),
    ];
    let csv_rows: Vec<Vec<String>> =
        comps.iter().map(|(n, v)| vec![n.to_string(), f17(*v)]).collect();
    write_csv(&out.join("decomposition.csv"), &header, &csv_rows)?;
    let txt_rows: Vec<Vec<String>> =
        comps.iter().map(|(n, v)| vec![n.to_string(), f4(*v)]).collect();
    write_text(
        &out.join("decomposition.txt"),
        &aligned_text("Gap decomposition", &header, &txt_rows),
    )?;
    Ok(())
}
