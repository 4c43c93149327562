//! CLI-level acceptance: byte-for-byte reproducibility of every command
//! under a fixed resolved config and seed, plus the documented exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn evrec() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evrec"))
}

fn run(args: &[&str]) -> Output {
    evrec().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code}, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    entries.sort();
    entries
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("evrec_cli_acceptance_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// A small scenario all the determinism checks share.
fn gen_scenario(dir: &Path) {
    let out = run(&[
        "gen",
        "--seed",
        "7",
        "--out",
        dir.to_str().unwrap(),
        "--stations",
        "4",
        "--days",
        "6",
        "--requests-per-day",
        "60",
    ]);
    assert_code(&out, 0);
}

#[test]
fn determinism_byte_for_byte() {
    let base = workdir("determinism");

    // gen twice -> identical directories.
    let gen_a = base.join("gen_a");
    let gen_b = base.join("gen_b");
    gen_scenario(&gen_a);
    gen_scenario(&gen_b);
    assert_eq!(read_dir_bytes(&gen_a), read_dir_bytes(&gen_b), "gen is not reproducible");

    // eval twice -> identical reports.
    for (policy, tag) in [("random", "r"), ("greedy-n", "g")] {
        let eval_a = base.join(format!("eval_{tag}_a"));
        let eval_b = base.join(format!("eval_{tag}_b"));
        for out_dir in [&eval_a, &eval_b] {
            let out = run(&[
                "eval",
                "--scenario",
                gen_a.to_str().unwrap(),
                "--policy",
                policy,
                "--seed",
                "1",
                "--out",
                out_dir.to_str().unwrap(),
            ]);
            assert_code(&out, 0);
        }
        assert_eq!(read_dir_bytes(&eval_a), read_dir_bytes(&eval_b), "eval {policy} not reproducible");
    }

    // train twice (one iteration) -> identical checkpoint and history.
    let train_a = base.join("train_a");
    let train_b = base.join("train_b");
    let started = std::time::Instant::now();
    for out_dir in [&train_a, &train_b] {
        let out = run(&[
            "train",
            "--scenario",
            gen_a.to_str().unwrap(),
            "--mode",
            "cwt-only",
            "--iterations",
            "1",
            "--seed",
            "3",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
    }
    let train_secs = started.elapsed().as_secs_f64() / 2.0;
    assert!(train_secs < 60.0, "single-iteration training took {train_secs:.0}s");
    assert_eq!(read_dir_bytes(&train_a), read_dir_bytes(&train_b), "train not reproducible");

    // compare twice -> identical tables.
    let report_a = base.join("eval_r_a/report.json");
    let report_g = base.join("eval_g_a/report.json");
    let csv_a = base.join("cmp_a.csv");
    let csv_b = base.join("cmp_b.csv");
    let mut stdout = Vec::new();
    for csv in [&csv_a, &csv_b] {
        let out = run(&[
            "compare",
            report_a.to_str().unwrap(),
            report_g.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
        ]);
        assert_code(&out, 0);
        stdout.push(out.stdout);
    }
    assert_eq!(stdout[0], stdout[1]);
    assert_eq!(std::fs::read(&csv_a).unwrap(), std::fs::read(&csv_b).unwrap());

    println!("[PASS] determinism: gen, eval, train and compare reproduce byte-for-byte");
}

#[test]
fn resolved_config_pins_paper_defaults() {
    let base = workdir("defaults");
    gen_scenario(&base);
    let text = std::fs::read_to_string(base.join("resolved_config.toml")).unwrap();
    for needle in [
        "gamma = 0.99",
        "d = 30",
        "sigma = 0.2",
        "tau = 0.001",
        "lr = 0.0005",
        "buffer_capacity = 1000",
        "batch_size = 32",
        "k = 50",
        "eps_cwt = -60.0",
        "eps_cp = -2.8",
        "fail_threshold = 45",
        "seed = 7",
    ] {
        assert!(text.contains(needle), "resolved config missing {needle:?}:\n{text}");
    }
    println!("[PASS] resolved config records the pinned hyperparameter defaults");
}

#[test]
fn exit_codes_and_error_messages() {
    let base = workdir("errors");
    gen_scenario(&base);

    // Usage: compare with fewer than two reports.
    let out = run(&["compare", "only_one.json"]);
    assert_code(&out, 1);

    // Usage: unknown flag.
    let out = run(&["gen", "--definitely-not-a-flag"]);
    assert_code(&out, 1);

    // Config: unknown policy lists the valid ones.
    let out = run(&[
        "eval",
        "--scenario",
        base.to_str().unwrap(),
        "--policy",
        "nonsense",
        "--seed",
        "1",
        "--out",
        base.join("e1").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("random") && stderr.contains("greedy-n"), "{stderr}");

    // Config: multi mode without pretrained checkpoints cites the requirement.
    let out = run(&[
        "train",
        "--scenario",
        base.to_str().unwrap(),
        "--mode",
        "multi",
        "--seed",
        "1",
        "--out",
        base.join("t1").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("pretrained") && stderr.contains("well-trained"),
        "{stderr}"
    );

    // Config: invalid config key is named.
    let bad = base.join("bad.toml");
    std::fs::write(&bad, "mystery_knob = 5\n").unwrap();
    let out = run(&[
        "gen",
        "--config",
        bad.to_str().unwrap(),
        "--seed",
        "1",
        "--out",
        base.join("g1").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery_knob"));

    // Config: scenario with a price gap is rejected with the location.
    let broken = base.join("broken");
    std::fs::create_dir_all(&broken).unwrap();
    for f in ["stations.csv", "requests.csv", "scenario.toml"] {
        std::fs::copy(base.join(f), broken.join(f)).unwrap();
    }
    std::fs::write(
        broken.join("prices.csv"),
        "station_id,start_minute,end_minute,cny_per_kwh\n0,0,700,1.2\n0,720,1440,1.8\n1,0,1440,1.0\n2,0,1440,1.0\n3,0,1440,1.0\n",
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--scenario",
        broken.to_str().unwrap(),
        "--policy",
        "random",
        "--seed",
        "1",
        "--out",
        broken.join("e").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("prices.csv"));

    // Runtime errors (et al.) leave distinct code 3; a missing scenario dir
    // is a config-class failure.
    let out = run(&[
        "eval",
        "--scenario",
        base.join("missing").to_str().unwrap(),
        "--policy",
        "random",
        "--seed",
        "1",
        "--out",
        base.join("e2").to_str().unwrap(),
    ]);
    assert_code(&out, 2);

    println!("[PASS] exit codes: usage 1, configuration 2, success 0");
}

#[test]
fn compare_rejects_single_report_and_orders_columns() {
    let base = workdir("compare");
    gen_scenario(&base);
    let eval_dir = base.join("eval");
    let out = run(&[
        "eval",
        "--scenario",
        base.to_str().unwrap(),
        "--policy",
        "random",
        "--seed",
        "2",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let report = eval_dir.join("report.json");

    let out = run(&["compare", report.to_str().unwrap()]);
    assert_code(&out, 1);

    let csv = base.join("cmp.csv");
    let out = run(&[
        "compare",
        report.to_str().unwrap(),
        report.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("name,mcwt,mcp,tsf,cfr,imp_mcwt_pct,imp_mcp_pct,imp_tsf_pct,imp_cfr_pct"));
    // Identical reports -> all-zero deltas.
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        for delta in &fields[5..] {
            assert_eq!(*delta, "0");
        }
    }
    println!("[PASS] compare: needs two reports, stable columns, zero deltas for identical inputs");
}
