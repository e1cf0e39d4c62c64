use std::path::Path;
use std::process::{Command, Output};

fn restart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_restart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = restart(args);
    assert!(
        out.status.success(),
        "`restart {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_dataset_shape_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    ok(&["dataset", "--seed", "1", "--out", s(&a)]);
    ok(&["dataset", "--seed", "1", "--out", s(&b)]);
    let text = std::fs::read_to_string(a.join("dataset.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2001);
    assert_eq!(lines[0].split(',').count(), 20);
    assert_eq!(text, std::fs::read_to_string(b.join("dataset.csv")).unwrap());
    let meta = json(&a.join("dataset.json"));
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["config"]["dataset"]["count"], 2000);
}

#[test]
fn missing_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = restart(&["dataset", "--out", s(&dir.path().join("nope"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn unknown_keys_and_unsafe_settings_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = restart(&["sample", "--out", s(dir.path()), "-s", "sample.steps=4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
    let out = restart(&["sample", "--out", s(dir.path()), "-s", "unsafe_override.rho=3"]);
    assert!(!out.status.success());
    let out = restart(&["dataset", "--out", s(dir.path()), "--unsafe-override", "rho=3"]);
    assert!(!out.status.success(), "rho has no meaning for `dataset`");
}

#[test]
fn restart_sample_reports_counted_nfe() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["sample", "--seed", "2", "--out", s(dir.path()), "-s", "sample.n=10"]);
    let meta = json(&dir.path().join("sample.json"));
    assert_eq!(meta["result"]["nfe"], 75);
    assert_eq!(meta["result"]["sampler"], "restart");
    let text = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn unsafe_override_is_recorded_and_changes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    let common = ["-s", "sample.n=5", "-s", "sample.sampler.kind=ode"];
    ok(&[&["sample", "--out", s(&a)][..], &common].concat());
    let out = ok(&[&["sample", "--out", s(&b), "--unsafe-override", "rho=3"][..], &common].concat());
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho = 3"));
    let resolved = std::fs::read_to_string(b.join("sample.config.toml")).unwrap();
    assert!(resolved.contains("[unsafe_override]"));
    assert!(!std::fs::read_to_string(a.join("sample.config.toml")).unwrap().contains("unsafe_override"));
    assert_ne!(
        std::fs::read(a.join("samples.csv")).unwrap(),
        std::fs::read(b.join("samples.csv")).unwrap()
    );
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "seed = 9\n[sample]\nn = 7\n[sample.sampler]\nkind = \"sde\"\nsteps = 12\n[dataset]\ncount = 5\n",
    )
    .unwrap();
    ok(&["sample", "--config", s(&cfg), "--out", s(dir.path()), "-s", "sample.n=4"]);
    let meta = json(&dir.path().join("sample.json"));
    assert_eq!(meta["seed"], 9);
    assert_eq!(meta["result"]["n"], 4);
    assert_eq!(meta["result"]["sampler"], "sde");
    // Euler–Maruyama: one evaluation per step, 12 EDM points plus t = 0
    assert_eq!(meta["result"]["nfe"], 12);
    // only the command's own section is echoed
    assert!(meta["config"].get("dataset").is_none());
}

#[test]
fn rerun_rejects_unresolved_configs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("plain.toml");
    std::fs::write(&cfg, "[sample]\nn = 3\n").unwrap();
    let out = restart(&["rerun", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
    std::fs::write(&cfg, "command = \"dataset\"\n").unwrap();
    let out = restart(&["sample", "--config", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn training_is_reproducible_and_logs_each_interval() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    ok(&["dataset", "--out", s(dir.path()), "-s", "dataset.count=64", "-s", "dataset.ambient_dim=4"]);
    let data = dir.path().join("dataset.csv");
    let train = |out: &Path, iters: &str| {
        ok(&[
            "train",
            "--seed",
            "3",
            "--out",
            s(out),
            "-s",
            &format!("train.dataset={}", s(&data)),
            "-s",
            &format!("train.iterations={iters}"),
            "-s",
            "train.width=8",
            "-s",
            "train.batch_size=16",
            "-s",
            "train.log_every=5",
        ]);
    };
    train(&a, "20");
    train(&b, "20");
    assert_eq!(
        std::fs::read(a.join("score_net.bin")).unwrap(),
        std::fs::read(b.join("score_net.bin")).unwrap()
    );
    let log = std::fs::read_to_string(a.join("train_loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 4);

    // zero iterations serialises the initial network
    train(&b, "0");
    assert!(b.join("score_net.bin").metadata().unwrap().len() > 0);
    assert_eq!(std::fs::read_to_string(b.join("train_loss.csv")).unwrap(), "");

    // the trained network drives the sampler
    ok(&[
        "sample",
        "--out",
        s(&a),
        "-s",
        "sample.n=3",
        "-s",
        "sample.score.source=mlp",
        "-s",
        &format!("sample.score.net={}", s(&a.join("score_net.bin"))),
    ]);
    assert_eq!(json(&a.join("sample.json"))["result"]["dim"], 4);
}

#[test]
fn ode_step_list_sweep_has_one_row_per_setting_and_pareto_plots_it() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    ok(&["dataset", "--out", d, "-s", "dataset.count=60", "-s", "dataset.ambient_dim=3", "-s", "dataset.base_dim=2", "-s", "dataset.center=[3.0, 3.0]"]);
    ok(&[
        "sweep",
        "--out",
        d,
        "-s",
        &format!("sweep.dataset={}", s(&dir.path().join("dataset.csv"))),
        "-s",
        "sweep.preset=custom",
        "-s",
        "sweep.ode_steps=[20, 40, 80, 160, 320, 640]",
        "-s",
        "sweep.repetitions=1",
        "-s",
        "sweep.setup.n_samples=12",
        "-s",
        "sweep.setup.prior_steps=4",
        "-s",
        "sweep.setup.tail_steps=4",
    ]);
    let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 6);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("sweep_failures.csv")).unwrap(),
        "cell,sampler,repetition,message\n"
    );
    ok(&["pareto", "--out", d, "-s", &format!("pareto.input={}", s(&dir.path().join("sweep.csv")))]);
    let front = std::fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
    assert!(front.lines().next().unwrap().ends_with(",frontier_rank"));
    assert!(front.lines().count() >= 2);
    let svg = std::fs::read_to_string(dir.path().join("pareto.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn pareto_of_a_single_record_is_that_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("one.csv");
    std::fs::write(
        &input,
        "sampler,solver_main,solver_restart,nfe,n_main,n_restart,k_iters,t_min,t_max,noise_mult,s_churn,seed_group,n_samples,total_w1,contracted_w1,additional_w1,wall_ms\n\
         ode,heun,,20,,,,1.0,1.5,,,0,100,0.5,0.3,0.2,0\n",
    )
    .unwrap();
    ok(&["pareto", "--out", s(dir.path()), "-s", &format!("pareto.input={}", s(&input))]);
    let front = std::fs::read_to_string(dir.path().join("pareto.csv")).unwrap();
    let lines: Vec<&str> = front.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1], "ode,heun,,20,,,,1.0,1.5,,,0,100,0.5,0.3,0.2,0,0");
}

#[test]
fn rerun_reproduces_the_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    std::fs::create_dir_all(&a).unwrap();
    std::fs::create_dir_all(&b).unwrap();
    ok(&["dataset", "--seed", "4", "--out", s(&a), "-s", "dataset.count=30"]);
    ok(&["rerun", s(&a.join("dataset.config.toml")), "--out", s(&b)]);
    assert_eq!(
        std::fs::read(a.join("dataset.csv")).unwrap(),
        std::fs::read(b.join("dataset.csv")).unwrap()
    );
}
