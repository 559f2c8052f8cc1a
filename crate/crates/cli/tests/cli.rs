use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psdsf::kernel::{gamma_matrix, verify_psdsf_rdm};
use psdsf::report::parse_alloc_csv;
use psdsf::scenario::Scenario;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn psdsf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psdsf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn allocate(dir: &TempDir, scenario_file: &str, mechanism: &str) -> PathBuf {
    let out = dir.path().join(format!("{mechanism}.csv"));
    let s = scenario(scenario_file);
    let run = psdsf(&[
        "allocate",
        "--scenario",
        s.to_str().unwrap(),
        "--mechanism",
        mechanism,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    out
}

fn verify(scenario_file: &str, alloc: &Path, theorem: &str) -> Output {
    let s = scenario(scenario_file);
    psdsf(&[
        "verify",
        "--scenario",
        s.to_str().unwrap(),
        "--alloc",
        alloc.to_str().unwrap(),
        "--theorem",
        theorem,
    ])
}

#[test]
fn ex1_allocation_verifies_and_tsf_does_not() {
    let dir = TempDir::new().unwrap();
    let ps = allocate(&dir, "ex1.json", "psdsf-rdm");
    let csv = std::fs::read_to_string(&ps).unwrap();
    assert!(
        csv.contains("#totals,u1,3\n#totals,u2,3\n#totals,u3,6\n"),
        "{csv}"
    );
    assert!(csv.ends_with("#converged,true\n"));
    let ok = verify("ex1.json", &ps, "1");
    assert_eq!(code(&ok), 0, "{}", text(&ok));

    let tsf = allocate(&dir, "ex1.json", "tsf");
    let bad = verify("ex1.json", &tsf, "1");
    assert_eq!(code(&bad), 1);
    assert!(
        text(&bad).contains("user u1, server s1: no bottleneck resource"),
        "{}",
        text(&bad)
    );
}

#[test]
fn reingested_allocation_gives_the_in_process_verdict() {
    let dir = TempDir::new().unwrap();
    for (file, mechanism) in [
        ("ex1.json", "psdsf-rdm"),
        ("ex2.json", "psdsf-rdm"),
        ("ex2.json", "cdrfh"),
        ("ex1.json", "tsf"),
    ] {
        let path = allocate(&dir, file, mechanism);
        let sc = Scenario::from_path(scenario(file)).unwrap();
        let out = mechanism
            .parse::<psdsf::mechanism::Mechanism>()
            .unwrap()
            .run(&sc.spec)
            .unwrap();
        let gamma = gamma_matrix(&sc.spec);
        let direct = verify_psdsf_rdm(&sc.spec, &gamma, out.allocation.as_ref().unwrap()).passed();
        let reread = parse_alloc_csv(&sc, &std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(
            verify_psdsf_rdm(&sc.spec, &gamma, &reread).passed(),
            direct,
            "{file} {mechanism}"
        );
        assert_eq!(
            code(&verify(file, &path, "1")),
            if direct { 0 } else { 1 },
            "{file} {mechanism}"
        );
    }
}

#[test]
fn time_division_fixture_verifies_under_theorem_two() {
    let dir = TempDir::new().unwrap();
    let path = allocate(&dir, "ex3_churn.json", "psdsf-tdm");
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(
        csv.contains("#totals,u1,210\n#totals,u2,105\n#totals,u3,82.5\n#totals,u4,27.5\n"),
        "{csv}"
    );
    assert_eq!(code(&verify("ex3_churn.json", &path, "2")), 0);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for m in ["psdsf-rdm", "cdrfh", "tsf", "drf-pool"] {
        let x = std::fs::read(allocate(&a, "ex2.json", m)).unwrap();
        let y = std::fs::read(allocate(&b, "ex2.json", m)).unwrap();
        assert_eq!(x, y, "{m}");
    }

    let config = a.path().join("sim.json");
    std::fs::write(
        &config,
        r#"{"horizon": 20, "offsets": "random", "seed": 11}"#,
    )
    .unwrap();
    let s = scenario("ex3_churn.json");
    let run = |dir: &TempDir| {
        let out = dir.path().join("trace.csv");
        let r = psdsf(&[
            "simulate",
            "--scenario",
            s.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
        std::fs::read_to_string(out).unwrap()
    };
    let (x, y) = (run(&a), run(&b));
    assert_eq!(x, y);
    assert!(
        x.starts_with("time,server,resource,utilization\n0,A,cpu,"),
        "{}",
        &x[..80]
    );
    assert!(x.contains(",D,@time,"));
}

#[test]
fn compare_tabulates_every_mechanism() {
    let s = scenario("ex1.json");
    let out = psdsf(&[
        "compare",
        "--scenario",
        s.to_str().unwrap(),
        "--mechanisms",
        "psdsf-rdm,cdrfh,tsf",
    ]);
    assert_eq!(code(&out), 0);
    let table = text(&out);
    assert!(
        table.starts_with("mechanism,user,tasks,converged\npsdsf-rdm,u1,3,true\n"),
        "{table}"
    );
    assert!(table.contains("cdrfh,u1,2.60869565,true\n"));
    assert!(table.contains("tsf,u3,8,true\n"));
}

#[test]
fn properties_report_failures_with_exit_one() {
    let dir = TempDir::new().unwrap();
    let s = scenario("ex1.json");
    let ps = allocate(&dir, "ex1.json", "psdsf-tdm");
    let ok = psdsf(&[
        "properties",
        "--scenario",
        s.to_str().unwrap(),
        "--alloc",
        ps.to_str().unwrap(),
    ]);
    assert_eq!(code(&ok), 0, "{}", text(&ok));
    assert!(text(&ok).contains("bottleneck-fairness: pass"));

    let cd = allocate(&dir, "ex1.json", "cdrfh");
    let bad = psdsf(&[
        "properties",
        "--scenario",
        s.to_str().unwrap(),
        "--alloc",
        cd.to_str().unwrap(),
    ]);
    assert_eq!(code(&bad), 1);
    assert!(
        text(&bad).contains("bottleneck-fairness: FAIL"),
        "{}",
        text(&bad)
    );

    let sp = psdsf(&[
        "properties",
        "--scenario",
        s.to_str().unwrap(),
        "--alloc",
        ps.to_str().unwrap(),
        "--mechanism",
        "psdsf-tdm",
        "--trials",
        "10",
        "--seed",
        "3",
    ]);
    assert_eq!(code(&sp), 0, "{}", text(&sp));
    assert!(text(&sp).contains("strategy-proofness u3: pass"));
}

#[test]
fn bad_input_exits_two_with_a_location() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\n  \"resources\": [\"cpu\"],\n  \"servers\": [{\"id\": \"a\", \"capacity\": [\"x\"]}],\n  \"users\": []\n}\n").unwrap();
    let out = psdsf(&[
        "allocate",
        "--scenario",
        bad.to_str().unwrap(),
        "--mechanism",
        "tsf",
    ]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3, column"), "{err}");

    let unknown = dir.path().join("unknown.json");
    let ex1 = std::fs::read_to_string(scenario("ex1.json")).unwrap();
    std::fs::write(&unknown, ex1.replacen("\"auto\"", "[\"s7\"]", 1)).unwrap();
    let out = psdsf(&[
        "allocate",
        "--scenario",
        unknown.to_str().unwrap(),
        "--mechanism",
        "tsf",
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("users[0].eligible[0]: unknown server `s7`")
    );

    let missing_alloc = psdsf(&[
        "verify",
        "--scenario",
        scenario("ex1.json").to_str().unwrap(),
        "--alloc",
        "/nonexistent.csv",
        "--theorem",
        "1",
    ]);
    assert_eq!(code(&missing_alloc), 2);
    assert_eq!(code(&psdsf(&["allocate", "--mechanism", "tsf"])), 2);
    assert_eq!(
        code(&psdsf(&[
            "verify",
            "--scenario",
            "x",
            "--alloc",
            "y",
            "--theorem",
            "3"
        ])),
        2
    );

    // C-DRFH needs physical demands.
    let out = psdsf(&[
        "allocate",
        "--scenario",
        scenario("ex3_churn.json").to_str().unwrap(),
        "--mechanism",
        "cdrfh",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn totals_only_mechanisms_write_comment_rows() {
    let s = scenario("ex1.json");
    let out = psdsf(&[
        "allocate",
        "--scenario",
        s.to_str().unwrap(),
        "--mechanism",
        "uniform",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        text(&out),
        "user,server,tasks\n#totals,u1,1.5\n#totals,u2,1.5\n#totals,u3,6\n#converged,true\n"
    );
}
