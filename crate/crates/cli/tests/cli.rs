use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mmot(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmot"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn mmot")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: {}", String::from_utf8_lossy(&out.stdout));
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn n_atoms(measure: &Value) -> usize {
    measure["weights"].as_array().unwrap().len()
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_secs");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(xs) => xs.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

#[test]
fn gen_counterexample_has_twenty_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(
        &[
            "gen",
            "--preset",
            "counterexample",
            "--d",
            "1",
            "--n",
            "4",
            "--out",
            "mu.json",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(n_atoms(&read_json(&dir.path().join("mu.json"))), 20);
}

#[test]
fn gen_parts_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(
        &[
            "gen",
            "--preset",
            "counterexample-parts",
            "--d",
            "1",
            "--n",
            "1",
            "--out",
            "parts",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let counts: Vec<usize> = ["mu_c", "mu_r", "mu_l"]
        .iter()
        .map(|name| n_atoms(&read_json(&dir.path().join("parts").join(format!("{name}.json")))))
        .collect();
    assert_eq!(counts, vec![1, 2, 2]);
}

#[test]
fn gen_uniform_box_has_nine_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(
        &[
            "gen",
            "--preset",
            "uniform-box",
            "--d",
            "2",
            "--n",
            "3",
            "--box",
            "0,1x0,1",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    assert_eq!(n_atoms(&stdout_json(&out)), 9);

    let csv = mmot(
        &[
            "gen",
            "--preset",
            "uniform-box",
            "--d",
            "2",
            "--n",
            "3",
            "--box",
            "0,1x0,1",
            "--format",
            "csv",
        ],
        dir.path(),
    );
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("x1,x2,weight"));
    assert_eq!(text.lines().count(), 10);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&mmot(&["gen", "--preset", "counterexample", "--n", "0"], p)), 1);
    assert_eq!(
        code(&mmot(
            &["gen", "--preset", "uniform-box", "--d", "3", "--box", "0,1x0,1"],
            p
        )),
        1
    );
    assert_eq!(code(&mmot(&["gap", "--m", "7"], p)), 1);
    assert_eq!(code(&mmot(&["--no-such-flag"], p)), 1);
    assert_eq!(code(&mmot(&["--help"], p)), 0);

    assert_eq!(code(&mmot(&["certify", "--plan", "missing.json"], p)), 2);
    let blocker = p.join("file");
    std::fs::write(&blocker, "").unwrap();
    let out = mmot(&["gen", "--preset", "counterexample", "--out", "file/mu.json"], p);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
    std::fs::write(p.join("broken.json"), "{ not json").unwrap();
    assert_eq!(code(&mmot(&["solve", "--input", "broken.json", "--N", "3"], p)), 2);
}

#[test]
fn construct_gamma0_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(
        &["construct", "gamma0", "--d", "1", "--n", "2", "--out", "g0.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let summary = stdout_json(&out);
    // two C atoms per axis, each split between the two scales
    assert_eq!(summary["atoms"], 4);
    assert_eq!(summary["certificate"]["gap"], 0.0);
    assert_eq!(summary["certificate"]["verdict"], "certified_optimal");
    let cert = read_json(&dir.path().join("g0.certificate.json"));
    assert_eq!(cert, summary["certificate"]);

    let out = mmot(&["construct", "gamma0", "--d", "2", "--n", "2"], dir.path());
    assert_eq!(stdout_json(&out)["atoms"], 8);

    let out = mmot(&["certify", "--plan", "g0.json"], dir.path());
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out), cert);
}

#[test]
fn construct_fractal_reports_deviation_within_digit_bound() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(
        &["construct", "fractal", "--N", "3", "--K", "8", "--samples", "81"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let details = &stdout_json(&out)["details"];
    let dev = details["max_deviation"].as_f64().unwrap();
    assert!(dev <= 3.0 * 3f64.powi(-8), "{dev}");
}

#[test]
fn construct_fat_prints_uniformity_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(&["construct", "fat", "--m", "100"], dir.path());
    assert_eq!(code(&out), 0);
    let l1 = stdout_json(&out)["details"]["marginal_l1"].as_array().unwrap().clone();
    assert_eq!(l1.len(), 3);
    assert!(l1.iter().all(|e| e.as_f64().unwrap().is_finite()));
}

#[test]
fn construct_from_input_measures() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("sym.json"),
        r#"{"d":1,"points":[[-1.5],[-0.5],[0.5],[1.5]],"weights":[0.25,0.25,0.25,0.25]}"#,
    )
    .unwrap();
    let out = mmot(&["construct", "reflection", "--input", "sym.json", "--N", "4"], p);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["certificate"]["verdict"], "certified_optimal");

    let out = mmot(
        &[
            "construct",
            "anti-monotone",
            "--input",
            "sym.json",
            "--input",
            "sym.json",
        ],
        p,
    );
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["atoms"], 4);

    assert_eq!(
        code(&mmot(&["construct", "anti-monotone", "--input", "sym.json"], p)),
        1
    );
}

#[test]
fn solve_parts_matches_gamma0_value() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        code(&mmot(&["gen", "--preset", "counterexample-parts", "--out", "."], p)),
        0
    );
    let inputs = ["--input", "mu_c.json", "--input", "mu_r.json", "--input", "mu_l.json"];
    let mut args = vec!["solve"];
    args.extend(inputs);
    args.extend(["--cost", "repulsive"]);
    let out = mmot(&args, p);
    assert_eq!(code(&out), 0);
    let report = stdout_json(&out);
    assert_eq!(report["value"], -298.125);
    assert_eq!(report["method"], "lp_exact");
    assert_eq!(report["input_hashes"].as_object().unwrap().len(), 3);

    let mut args = vec!["solve"];
    args.extend(inputs);
    args.extend([
        "--method",
        "sinkhorn",
        "--epsilon",
        "0.1",
        "--max-iter",
        "1",
        "--tol",
        "1e-14",
        "--out",
        "partial.json",
    ]);
    assert_eq!(code(&mmot(&args, p)), 1);
    let partial = read_json(&p.join("partial.json"));
    assert_eq!(partial["residuals"]["converged"], false);
}

#[test]
fn solve_csv_has_one_row_per_atom() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    mmot(&["gen", "--preset", "counterexample-parts", "--out", "."], p);
    let out = mmot(
        &[
            "solve",
            "--input",
            "mu_c.json",
            "--input",
            "mu_r.json",
            "--input",
            "mu_l.json",
            "--format",
            "csv",
        ],
        p,
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i1,i2,i3,x1_1,x2_1,x3_1,mass"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn gap_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = || {
        let out = mmot(&["gap", "--m", "6", "--mode", "local", "--seed", "7"], p);
        let mut v = stdout_json(&out);
        strip_timings(&mut v);
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn reproduce_smallest_instance_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmot(
        &["reproduce", "--d", "1", "--n", "1", "--out", "report.json"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["passed"], true);
    assert_eq!(report["results"][0]["lp_value"], -298.125);
}

fn schema_validator(name: &str) -> jsonschema::Validator {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    let mut options = jsonschema::options();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let schema = read_json(&entry.unwrap().path());
        let id = schema["$id"].as_str().unwrap().to_string();
        options = options.with_resource(id, jsonschema::Resource::from_contents(schema).unwrap());
    }
    options
        .build(&read_json(&dir.join(format!("{name}.schema.json"))))
        .unwrap()
}

fn assert_valid(name: &str, doc: &Value) {
    let v = schema_validator(name);
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

#[test]
fn file_outputs_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let run = |args: &[&str]| {
        let out = mmot(args, p);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&[
        "gen",
        "--preset",
        "counterexample",
        "--d",
        "2",
        "--n",
        "2",
        "--out",
        "mu.json",
    ]);
    run(&["gen", "--preset", "counterexample-parts", "--out", "parts"]);
    run(&["gen", "--preset", "equal-mass", "--m", "6", "--out", "eq.json"]);
    for f in [
        "mu.json",
        "parts/mu_c.json",
        "parts/mu_r.json",
        "parts/mu_l.json",
        "eq.json",
    ] {
        assert_valid("measure", &read_json(&p.join(f)));
    }

    run(&["construct", "gamma1", "--out", "g1.json"]);
    run(&[
        "construct",
        "fat",
        "--m",
        "20",
        "--out",
        "fat.json",
        "--cert-out",
        "fat.cert.json",
    ]);
    assert_valid("plan", &read_json(&p.join("g1.json")));
    assert_valid("plan", &read_json(&p.join("fat.json")));
    assert_valid("certificate", &read_json(&p.join("g1.certificate.json")));
    assert_valid("certificate", &read_json(&p.join("fat.cert.json")));

    // marginals given by path resolve against the plan's directory
    std::fs::write(
        p.join("parts/plan.json"),
        r#"{"N":3,"marginals":["mu_c.json","mu_r.json","mu_l.json"],"atoms":[{"idx":[0,0,0],"mass":0.5},{"idx":[0,1,1],"mass":0.5}]}"#,
    )
    .unwrap();
    assert_valid("plan", &read_json(&p.join("parts/plan.json")));
    run(&["certify", "--plan", "parts/plan.json", "--out", "cert.json"]);
    assert_valid("certificate", &read_json(&p.join("cert.json")));

    let parts = [
        "--input",
        "parts/mu_c.json",
        "--input",
        "parts/mu_r.json",
        "--input",
        "parts/mu_l.json",
    ];
    for (method, out) in [("lp", "lp.json"), ("sinkhorn", "sk.json")] {
        let mut args = vec!["solve", "--method", method, "--epsilon", "0.5", "--out", out];
        args.extend(parts);
        run(&args);
        assert_valid("solve_report", &read_json(&p.join(out)));
    }
    run(&[
        "solve",
        "--input",
        "eq.json",
        "--N",
        "3",
        "--method",
        "monge",
        "--mode",
        "local",
        "--out",
        "monge.json",
    ]);
    assert_valid("solve_report", &read_json(&p.join("monge.json")));

    run(&[
        "reproduce",
        "--d",
        "2",
        "--n",
        "1",
        "--epsilon",
        "0.5",
        "--out",
        "repro.json",
    ]);
    assert_valid("experiment_report", &read_json(&p.join("repro.json")));
    run(&["gap", "--m", "6", "--out", "gap.json"]);
    assert_valid("experiment_report", &read_json(&p.join("gap.json")));
}

#[test]
fn schemas_reject_malformed_documents() {
    let measure = schema_validator("measure");
    assert!(!measure.is_valid(&serde_json::json!({"d": 1, "points": [[0.0]], "weights": [-1.0]})));
    assert!(!measure.is_valid(&serde_json::json!({"d": 1, "points": [[0.0]]})));
    let plan = schema_validator("plan");
    let bad_marginal = serde_json::json!({"N": 1, "marginals": [{"d": 1}], "atoms": []});
    assert!(!plan.is_valid(&bad_marginal));
}
