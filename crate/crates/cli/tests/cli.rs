use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emarch_core::segmenter::boundaries_from_json;
use emarch_core::simulator::zoo;
use emarch_core::trace::{dataset_load, load_trace, Split};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_emarch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = run(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two small architectures plus the three-layer MLP, and a config with a low
/// sample rate and a short training budget.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let corpus = dir.join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/corpus");
    for f in ["07_MobileNet.toml", "09_MobileNetV3small.toml"] {
        fs::copy(shipped.join(f), corpus.join(f)).unwrap();
    }
    fs::write(corpus.join("99_MLP3.toml"), zoo::mlp3().to_toml().unwrap()).unwrap();
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        "[sim_config]\nsample_rate_hz = 2e7\n\n[train_config]\nmax_epochs = 2\nbatch_size = 8\n",
    )
    .unwrap();
    (corpus, cfg)
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, cfg) = setup(d);
    let ds = d.join("ds");
    let out = ok(&[
        "dataset",
        "--corpus",
        s(&corpus),
        "--protocol",
        "custom",
        "--out",
        s(&ds),
        "--seed",
        "3",
        "--n-train",
        "1",
        "--n-test",
        "1",
        "--train-traces",
        "5",
        "--test-traces",
        "2",
        "--config",
        s(&cfg),
    ]);
    assert!(out.starts_with("21 traces (profiling 15, test 6)"), "{out}");
    let raw = dataset_load(&ds).unwrap();
    assert_eq!(raw.num_classes(), 3);
    assert_eq!(raw.count(Split::Test), 6);

    let model = d.join("m.emck");
    let out = ok(&[
        "train",
        "--dataset",
        s(&ds),
        "--out",
        s(&model),
        "--seed",
        "1",
        "--config",
        s(&cfg),
    ]);
    assert!(out.contains("best epoch"), "{out}");
    assert!(d.join("m.history.tsv").is_file());

    let report = d.join("report");
    let out = ok(&[
        "eval",
        "--model",
        s(&model),
        "--dataset",
        s(&ds),
        "--report",
        s(&report),
    ]);
    assert!(out.starts_with("accuracy "), "{out}");
    for f in ["report.json", "report.txt", "confusion.svg"] {
        assert!(report.join(f).is_file(), "{f}");
    }

    let test_trace = raw.split(Split::Test).next().unwrap();
    let tf = ds.join(format!("traces/{}.emt", test_trace.id));
    let out = ok(&["attack", "--model", s(&model), "--trace", s(&tf)]);
    let ranked: Vec<&str> = out.lines().filter(|l| l.contains('\t')).collect();
    assert_eq!(ranked.len(), 3, "{out}");
    let probs: Vec<f64> = ranked
        .iter()
        .map(|l| l.split('\t').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);

    // A preprocessed dataset trains and evaluates the same way.
    let pre = d.join("pre");
    ok(&[
        "preprocess",
        "--in",
        s(&ds),
        "--out",
        s(&pre),
        "--seed",
        "1",
    ]);
    let p = dataset_load(&pre).unwrap();
    assert!(p.count(Split::Val) > 0);
    assert!(p.entries.iter().all(|e| e.trace.len() == 19_950));
    let m2 = d.join("m2.emck");
    ok(&[
        "train",
        "--dataset",
        s(&pre),
        "--out",
        s(&m2),
        "--epochs",
        "1",
        "--config",
        s(&cfg),
    ]);
    ok(&[
        "eval",
        "--model",
        s(&m2),
        "--dataset",
        s(&pre),
        "--report",
        s(&d.join("r2")),
    ]);
}

#[test]
fn simulate_segment_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, _) = setup(d);
    let t = d.join("mlp.emt");
    ok(&[
        "simulate",
        "--corpus",
        s(&corpus),
        "--arch",
        "MLP3",
        "--model-seed",
        "4",
        "--trace-seed",
        "5",
        "--out",
        s(&t),
    ]);
    let trace = load_trace(&t).unwrap();
    assert_eq!(trace.meta_value("model_seed"), Some("4"));

    let (svg, json) = (d.join("seg.svg"), d.join("seg.json"));
    ok(&[
        "segment",
        "--trace",
        s(&t),
        "--svg",
        s(&svg),
        "--out",
        s(&json),
    ]);
    let gaps = boundaries_from_json(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(gaps.len(), 5);
    assert_eq!(
        fs::read_to_string(&svg)
            .unwrap()
            .matches("stroke-dasharray")
            .count(),
        5
    );

    let pjson = d.join("prefix.json");
    ok(&[
        "segment",
        "--trace",
        s(&t),
        "--prefix-mode",
        "--arch",
        "MLP3",
        "--corpus",
        s(&corpus),
        "--svg",
        s(&d.join("p.svg")),
        "--out",
        s(&pjson),
    ]);
    let div = boundaries_from_json(&fs::read_to_string(&pjson).unwrap()).unwrap();
    assert_eq!(div.len(), 5);
    for (g, p) in gaps.iter().zip(&div) {
        assert!(g.index.abs_diff(p.index) <= 10, "{g:?} {p:?}");
    }

    let (a, b) = (d.join("a.svg"), d.join("b.svg"));
    for out in [&a, &b] {
        ok(&[
            "plot",
            "--trace",
            s(&t),
            "--svg",
            s(out),
            "--window",
            "1000",
            "--boundaries",
            s(&json),
        ]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let env = d.join("env.emt");
    ok(&[
        "preprocess",
        "--in",
        s(&t),
        "--out",
        s(&env),
        "--normalize",
        "none",
    ]);
    assert_eq!(load_trace(&env).unwrap().len(), trace.len().div_ceil(1000));

    let pre4 = d.join("prefix4.emt");
    ok(&[
        "simulate",
        "--corpus",
        s(&corpus),
        "--arch",
        "MLP3#prefix4",
        "--out",
        s(&pre4),
    ]);
    assert_eq!(load_trace(&pre4).unwrap().meta_value("layers"), Some("4"));
}

#[test]
fn heatmap_ranks_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, _) = setup(d);
    let grid = d.join("grid");
    fs::create_dir_all(&grid).unwrap();
    // The simulated GPU clock tone sits at 76 MHz; cells 0_1 and 1_0 get it.
    let tone = d.join("tone.toml");
    fs::write(&tone, "[sim_config]\nclock_tone_amplitude = 0.5\n").unwrap();
    let quiet = d.join("quiet.toml");
    fs::write(&quiet, "[sim_config]\nclock_tone_amplitude = 0.0\n").unwrap();
    for (r, c) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let cfg = if r != c { &tone } else { &quiet };
        let out = grid.join(format!("cell_{r}_{c}.emt"));
        ok(&[
            "simulate",
            "--corpus",
            s(&corpus),
            "--arch",
            "MLP3",
            "--out",
            s(&out),
            "--config",
            s(cfg),
        ]);
    }
    fs::write(grid.join("notes.txt"), "ignored").unwrap();
    let svg = d.join("h.svg");
    let out = ok(&[
        "heatmap",
        "--grid",
        s(&grid),
        "--freq",
        "76e6",
        "--bw",
        "2e6",
        "--svg",
        s(&svg),
    ]);
    let top: Vec<&str> = out
        .lines()
        .take(2)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(top, ["cell_0_1", "cell_1_0"], "{out}");
    assert!(svg.is_file());
}

#[test]
fn exit_codes_and_no_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (corpus, _) = setup(d);

    assert_eq!(code(&["simulate"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let out = d.join("x.emt");
    assert_eq!(
        code(&[
            "simulate",
            "--corpus",
            s(&corpus),
            "--arch",
            "Nope",
            "--out",
            s(&out)
        ]),
        1
    );
    assert_eq!(
        code(&[
            "dataset",
            "--corpus",
            s(&corpus),
            "--protocol",
            "custom",
            "--out",
            s(&d.join("c"))
        ]),
        1
    );
    assert_eq!(
        code(&[
            "segment",
            "--trace",
            "t.emt",
            "--prefix-mode",
            "--svg",
            "s.svg"
        ]),
        1
    );

    let missing = d.join("missing.emt");
    assert_eq!(
        code(&["plot", "--trace", s(&missing), "--svg", s(&d.join("p.svg"))]),
        2
    );
    let bad = d.join("bad.emt");
    fs::write(&bad, b"EMT1 but not really").unwrap();
    assert_eq!(
        code(&["plot", "--trace", s(&bad), "--svg", s(&d.join("p.svg"))]),
        2
    );
    assert_eq!(code(&["attack", "--model", s(&bad), "--trace", s(&bad)]), 2);
    let badcfg = d.join("bad.toml");
    fs::write(&badcfg, "[em_model]\nthroughput_macs_per_s = -1.0\n").unwrap();
    assert_eq!(
        code(&[
            "simulate",
            "--corpus",
            s(&corpus),
            "--arch",
            "MLP3",
            "--out",
            s(&out),
            "--config",
            s(&badcfg)
        ]),
        2
    );
    assert_eq!(
        code(&["heatmap", "--grid", s(d), "--svg", s(&d.join("h.svg"))]),
        1
    );

    // Nothing was written by the failing commands.
    assert!(!out.exists());
    assert!(!d.join("p.svg").exists());
    assert!(!d.join("h.svg").exists());
    let stray: Vec<_> = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.contains(".tmp"))
        .collect();
    assert!(stray.is_empty(), "{stray:?}");

    // An existing non-empty output directory is refused.
    let full = d.join("full");
    fs::create_dir_all(&full).unwrap();
    fs::write(full.join("keep"), b"1").unwrap();
    assert_eq!(
        code(&[
            "dataset",
            "--corpus",
            s(&corpus),
            "--protocol",
            "desk",
            "--out",
            s(&full),
        ]),
        1
    );
    assert_eq!(fs::read(full.join("keep")).unwrap(), b"1");
}
