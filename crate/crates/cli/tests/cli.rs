use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cellfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    root.join(name).to_string_lossy().into_owned()
}

fn simulate_into(dir: &Path) -> Vec<PathBuf> {
    let out = cellfree(&[
        "simulate", "--config", &config("desk.toml"), "--arch", "fully_distributed", "--receiver", "mrc",
        "--draws", "40", "--moment-samples", "40", "--seed", "11", "--out", dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    files
}

#[test]
fn simulate_is_reproducible_for_a_fixed_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (simulate_into(a.path()), simulate_into(b.path()));
    let names: Vec<_> = fa.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(
        names,
        [
            "cdf_fully_distributed_mrc.csv",
            "clusters_fully_distributed.csv",
            "rates_fully_distributed_mrc.csv",
            "run_fully_distributed_mrc.toml"
        ]
    );
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    let rates = std::fs::read_to_string(&fa[2]).unwrap();
    assert!(rates.starts_with("ue_index,rate_mc,rate_cf,receiver,draws,seed\n"));
}

#[test]
fn compare_joins_cdfs_on_one_grid() {
    let out = cellfree(&[
        "compare", "--configs", &config("desk.toml"), &config("desk_single_unit.toml"),
        "--draws", "20", "--moment-samples", "20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("quantile,desk:multi_level_mrc,desk_single_unit:multi_level_mrc"));
    assert_eq!(lines.count(), 101);
}

#[test]
fn validate_reports_the_largest_deviation() {
    let out = cellfree(&["validate", "--draws", "30", "--moment-samples", "30"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("mrc,") || l.starts_with("zf,")).count(), 6);
    assert!(text.lines().last().unwrap().starts_with("max relative deviation: "));
}

#[test]
fn unknown_config_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(config("desk.toml")).unwrap() + "num_antenas = 3\n";
    std::fs::write(&path, text).unwrap();
    let out = cellfree(&["simulate", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("num_antenas"));
}
