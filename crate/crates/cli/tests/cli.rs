use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "seed = 3\ngrid.p = 8\nmodel.preset = tiny\ntrain.epochs = 1\nmethods = sftt, knn\n";

fn hotspot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hotspot")).current_dir(dir).args(args).output().expect("binary runs")
}

fn digest(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines().find_map(|l| l.strip_prefix("digest ")).expect("digest line").to_string()
}

#[test]
fn run_is_repeatable_and_report_rederives() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), TINY).unwrap();
    let a = hotspot(dir.path(), &["run", "--config", "exp.cfg", "--out", "a"]);
    let b = hotspot(dir.path(), &["run", "--config", "exp.cfg", "--out", "b"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(digest(&a), digest(&b));

    let summary = std::fs::read_to_string(dir.path().join("a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
    assert!(dir.path().join("a/heatmaps/p8_knn_AllCrimes.ranked.csv").exists());

    let r = hotspot(dir.path(), &["report", "--out", "a"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(digest(&r), digest(&a));

    let other = hotspot(dir.path(), &["run", "--config", "exp.cfg", "--seed", "4", "--out", "c"]);
    assert_ne!(digest(&other), digest(&a));
}

#[test]
fn train_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.cfg"), TINY).unwrap();
    let t = hotspot(dir.path(), &["train", "--config", "exp.cfg", "--out", "o"]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    assert!(dir.path().join("o/checkpoints/p8_sftt-vgg_AllCrimes.ckpt").exists());
    let e = hotspot(dir.path(), &["evaluate", "--config", "exp.cfg", "--out", "o"]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    assert!(dir.path().join("o/report.json").exists());

    // checkpoints are tied to the config they were trained with
    let mismatch = hotspot(dir.path(), &["evaluate", "--config", "exp.cfg", "--seed", "9", "--out", "o"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn synth_then_ingest_csv() {
    let dir = tempfile::tempdir().unwrap();
    let s = hotspot(dir.path(), &["synth", "--seed", "1", "--out", "data"]);
    assert!(s.status.success());
    std::fs::write(dir.path().join("csv.cfg"), "seed = 1\ndata.source = csv\ndata.path = data/incidents.csv\ngrid.p = 16\n").unwrap();
    let i = hotspot(dir.path(), &["ingest", "--config", "csv.cfg", "--out", "stacks"]);
    assert!(i.status.success(), "{}", String::from_utf8_lossy(&i.stderr));

    let rows = std::fs::read_to_string(dir.path().join("data/incidents.csv")).unwrap().lines().count() - 1;
    let file = std::fs::File::open(dir.path().join("stacks/p16.stack")).unwrap();
    let stack = hotspot::grid::read_stack(std::io::BufReader::new(file)).unwrap();
    let binned: u64 = stack.window_totals(0, stack.days(), hotspot::ingest::CrimeType::AllCrimes).iter().map(|&c| c as u64).sum();
    assert_eq!(binned as usize, rows);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("noseed.cfg"), "grid.p = 16\n").unwrap();
    std::fs::write(d.join("unknown.cfg"), "seed = 1\nfoo = 2\n").unwrap();
    std::fs::write(d.join("nocsv.cfg"), "seed = 1\ndata.source = csv\ndata.path = nowhere.csv\n").unwrap();
    std::fs::write(
        d.join("diverge.cfg"),
        "seed = 1\ngrid.p = 8\nmodel.preset = tiny\nmethods = sftt\ntrain.epochs = 2\ntrain.learning_rate = 1e300\n",
    )
    .unwrap();
    assert_eq!(hotspot(d, &["run", "--config", "noseed.cfg"]).status.code(), Some(2));
    assert_eq!(hotspot(d, &["run", "--config", "unknown.cfg"]).status.code(), Some(2));
    assert_eq!(hotspot(d, &["run", "--config", "nocsv.cfg"]).status.code(), Some(3));
    assert_eq!(hotspot(d, &["report", "--out", "missing"]).status.code(), Some(3));
    let div = hotspot(d, &["run", "--config", "diverge.cfg", "--out", "div"]);
    assert_eq!(div.status.code(), Some(4));
    assert!(!d.join("div").exists());
}
