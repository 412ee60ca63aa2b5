//! End-to-end subcommand tests against the compiled binary.

use selsieve::data::{save_dataset, Dataset};
use selsieve::montecarlo::{generate, DgpTag};
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selsieve"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("selsieve-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn sim_csv(dir: &Path) -> std::path::PathBuf {
    let sd = generate(DgpTag::Multinomial(1), 1500, 13, 1.0).unwrap();
    let ds = Dataset {
        names: vec!["x1".into(), "x2".into()],
        kinds: sd.kinds,
        x: sd.x,
        d: sd.d,
        y: sd.y,
        k_max: sd.k_max,
    };
    let path = dir.join("data.csv");
    save_dataset(&ds, &path).unwrap();
    path
}

#[test]
fn simulate_manifest_replays_bitwise() {
    let dir = tmp_dir("replay");
    let cfg = dir.join("run.toml");
    write(
        &cfg,
        "seed = 21\n[simulate]\narchitecture = \"multinomial\"\ndgp = 1\nn = 600\n\
         replications = 3\nestimators = [\"ols\", \"mlogit\"]\n",
    );
    let out1 = dir.join("a");
    let out2 = dir.join("b");
    let r1 = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert!(r1.status.success(), "{}", String::from_utf8_lossy(&r1.stderr));
    let r2 = run(&[
        "simulate",
        "--config",
        out1.join("manifest.json").to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(r2.status.success(), "{}", String::from_utf8_lossy(&r2.stderr));
    assert_eq!(read(&out1.join("metrics.csv")), read(&out2.join("metrics.csv")));
}

#[test]
fn missing_input_reports_io_code_and_exit_2() {
    let dir = tmp_dir("missing");
    let cfg = dir.join("fit.toml");
    write(
        &cfg,
        "[fit]\ndata = \"/nonexistent/file.csv\"\nd = \"D\"\ny = \"Y\"\n\
         architecture = \"mnl\"\nestimator = \"mlogit\"\n",
    );
    let r = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("E_IO_NOT_FOUND"), "stderr: {err}");
}

#[test]
fn fit_writes_report_for_every_category() {
    let dir = tmp_dir("fit");
    let data = sim_csv(&dir);
    let cfg = dir.join("fit.toml");
    write(
        &cfg,
        &format!(
            "[fit]\ndata = {:?}\nd = \"D\"\ny = \"Y\"\narchitecture = \"mnl\"\n\
             estimator = \"mlogit\"\n",
            data.to_str().unwrap()
        ),
    );
    let r = run(&["fit", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(&dir.join("fit.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0].split(',').next(), Some("category"));
    // header + 2 categories x 2 covariates
    assert_eq!(lines.len(), 5);
    assert!(dir.join("fit.txt").exists());
}

#[test]
fn bootstrap_reports_positive_ses() {
    let dir = tmp_dir("boot");
    let data = sim_csv(&dir);
    let cfg = dir.join("boot.toml");
    write(
        &cfg,
        &format!(
            "seed = 5\n[bootstrap]\ndata = {:?}\nd = \"D\"\ny = \"Y\"\n\
             architecture = \"mnl\"\nestimator = \"mlogit\"\nb = 12\n",
            data.to_str().unwrap()
        ),
    );
    let r =
        run(&["bootstrap", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(&dir.join("bootstrap.csv"));
    for line in csv.lines().skip(1) {
        let boot_se: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(boot_se > 0.0);
    }
}

#[test]
fn decompose_components_sum_to_raw() {
    let dir = tmp_dir("decomp");
    let input = dir.join("stats.csv");
    write(
        &input,
        "category,mean_a,mean_b,share_a,share_b,beta\n\
         1,1.0,0.8,0.6,0.5,-0.1\n2,0.4,0.5,0.4,0.5,-0.05\n",
    );
    let cfg = dir.join("dec.toml");
    write(&cfg, &format!("[decompose]\ninput = {:?}\n", input.to_str().unwrap()));
    let r =
        run(&["decompose", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let csv = read(&dir.join("decomposition.csv"));
    let mut vals = std::collections::HashMap::new();
    for line in csv.lines().skip(1) {
        let mut it = line.split(',');
        let name = it.next().unwrap().to_string();
        vals.insert(name, it.next().unwrap().parse::<f64>().unwrap());
    }
    let sum = vals["structural_within"] + vals["covariate_composition"] + vals["between_sorting"];
    assert!((sum - vals["raw"]).abs() < 1e-12);
}
