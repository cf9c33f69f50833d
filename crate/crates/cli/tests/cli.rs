use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const HOSPITAL_HEADER: &str = "record_id,hospital,admit_type,length_of_stay,discharge_year,discharge_month,\
age_years,age_months,gender,zip,diagnoses,procedures,payers,charges\n";

const EXTERNAL_HEADER: &str =
    "ext_id,name,gender,age_years,incident_date,zip_candidates,hospital_candidates,diagnosis_prefixes,dob,source\n";

/// The target stay plus near misses: each distractor fails one field the target passes.
const HOSPITAL_ROWS: &str = "\
SH0001,162,1,6,2011,10,60,725,M,98851,E8162;80843;51851,,medicare,65000.00
SH0002,162,1,6,2011,10,60,725,F,98851,E8162,,,
SH0003,162,1,6,2011,10,60,725,M,98857,E8162,,,
SH0004,137,1,6,2011,3,60,730,M,98851,E8162,,,
";

const EXTERNAL_ROWS: &str = "B1,Raymond Boylston,M,61,2011-10-18,,137,E81;E82,,news\n";

const PUBLIC_ROWS: &str = "name,dob,zip_history,age_hint\nRaymond Boylston,1950-05-10,98851,\n";

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("hospital.csv"),
            format!("{HOSPITAL_HEADER}{HOSPITAL_ROWS}"),
        )
        .unwrap();
        fs::write(
            dir.path().join("external.csv"),
            format!("{EXTERNAL_HEADER}{EXTERNAL_ROWS}"),
        )
        .unwrap();
        fs::write(dir.path().join("public.csv"), PUBLIC_ROWS).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn audit_inputs(&self) -> Vec<String> {
        vec![
            "--hospital".into(),
            self.arg("hospital.csv"),
            "--external".into(),
            self.arg("external.csv"),
            "--public-records".into(),
            self.arg("public.csv"),
        ]
    }
}

fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    run_with(args, |_| {})
}

fn run_with<S: AsRef<std::ffi::OsStr>>(args: &[S], setup: impl FnOnce(&mut Command)) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reident"));
    cmd.args(args).env_remove("REIDENT_CONFIG");
    setup(&mut cmd);
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Second column of the only data row of a cases.csv.
fn classification(dir: &Path) -> String {
    let text = fs::read_to_string(dir.join("cases.csv")).unwrap();
    let row = text.lines().nth(1).expect("one case row");
    row.split(',').nth(1).unwrap().to_string()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn ingest_reports_zero_errors_on_clean_input() {
    let fx = Fixture::new();
    let out = run(&[
        "ingest",
        "--hospital",
        &fx.arg("hospital.csv"),
        "--external",
        &fx.arg("external.csv"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("4 rows, 4 accepted, 0 errors"), "{text}");
    assert!(text.trim_end().ends_with("0 errors"), "{text}");
}

#[test]
fn ingest_names_the_bad_row_and_exits_one() {
    let fx = Fixture::new();
    // Line 3: 725 months is not 59 years.
    let bad = HOSPITAL_ROWS.replacen("SH0002,162,1,6,2011,10,60", "SH0002,162,1,6,2011,10,59", 1);
    fs::write(fx.path("bad.csv"), format!("{HOSPITAL_HEADER}{bad}")).unwrap();
    let out = run(&["ingest", "--hospital", &fx.arg("bad.csv")]);
    assert_eq!(code(&out), 1);
    let text = stdout(&out);
    assert!(text.contains("bad.csv:3:"), "{text}");
    assert!(text.contains("age_months 725"), "{text}");
    assert!(text.contains("1 errors"), "{text}");
}

#[test]
fn ingest_verbose_echoes_records() {
    let fx = Fixture::new();
    let out = run(&["ingest", "--verbose", "--hospital", &fx.arg("hospital.csv")]);
    assert_eq!(code(&out), 0);
    let first: serde_json::Value = serde_json::from_str(stdout(&out).lines().next().unwrap()).unwrap();
    assert_eq!(first["record_id"], "SH0001");
    assert_eq!(first["hospital"], "162");
    assert_eq!(first["diagnoses"][0], "E8162");
}

#[test]
fn audit_recovers_the_relaxed_unique_match() {
    let fx = Fixture::new();
    let out_dir = fx.path("audit");
    let mut args = vec!["audit".to_string()];
    args.extend(fx.audit_inputs());
    args.extend(["--out".into(), out_dir.to_string_lossy().into_owned()]);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let cases = fs::read_to_string(out_dir.join("cases.csv")).unwrap();
    assert_eq!(
        cases,
        "ext_id,classification,relaxation_level,dropped_fields,matched_record_id,candidate_count,sensitive_flag\n\
         B1,unique,2,age;hospital,SH0001,1,false\n"
    );
    let s = summary(&out_dir);
    assert_eq!(s["tallies"]["unique"], 1);
    assert_eq!(s["enrichment"]["enriched"], 1);
    assert!(stdout(&out).contains("unique at level 2"));
}

#[test]
fn max_drop_zero_turns_relaxed_matches_into_nomatch() {
    let fx = Fixture::new();
    let out_dir = fx.path("strict");
    let mut args = vec!["audit".to_string(), "--max-drop".into(), "0".into()];
    args.extend(fx.audit_inputs());
    args.extend(["--out".into(), out_dir.to_string_lossy().into_owned()]);
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(classification(&out_dir), "nomatch");
}

#[test]
fn audit_of_empty_external_file_has_zero_tallies() {
    let fx = Fixture::new();
    fs::write(fx.path("empty.csv"), EXTERNAL_HEADER).unwrap();
    let out_dir = fx.path("empty_audit");
    let out = run(&[
        "audit",
        "--format",
        "machine",
        "--hospital",
        &fx.arg("hospital.csv"),
        "--external",
        &fx.arg("empty.csv"),
        "--out",
        &out_dir.to_string_lossy(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let s: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(s["total"], 0);
    for k in ["unique", "ambiguous_2", "ambiguous_3plus", "nomatch", "conflict"] {
        assert_eq!(s["tallies"][k], 0, "{k}");
    }
    let cases = fs::read_to_string(out_dir.join("cases.csv")).unwrap();
    assert_eq!(cases.lines().count(), 1);
}

#[test]
fn usage_errors_exit_two() {
    let fx = Fixture::new();
    let missing = run(&[
        "audit",
        "--hospital",
        &fx.arg("nope.csv"),
        "--external",
        &fx.arg("external.csv"),
        "--out",
        "x",
    ]);
    assert_eq!(code(&missing), 2);
    assert!(stderr(&missing).contains("does not exist"));

    let mut args = vec!["audit".to_string(), "--max-drop".into(), "3".into()];
    args.extend(fx.audit_inputs());
    args.extend(["--out".into(), fx.arg("o")]);
    assert_eq!(code(&run(&args)), 2);

    assert_eq!(code(&run(&["audit", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn match_prints_per_field_verdicts() {
    let fx = Fixture::new();
    let mut args = vec![
        "match".to_string(),
        "--ext-id".into(),
        "B1".into(),
        "--record-id".into(),
        "SH0004".into(),
    ];
    args.extend(fx.audit_inputs());
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("enrichment: enriched"), "{text}");
    assert!(
        text.contains("outcome: unique SH0001 at level 2, dropped {age;hospital}"),
        "{text}"
    );
    let row = |id: &str| -> Vec<String> {
        text.lines()
            .find(|l| l.starts_with(id))
            .unwrap_or_else(|| panic!("no row for {id} in {text}"))
            .split_whitespace()
            .skip(1)
            .map(str::to_string)
            .collect()
    };
    // Columns follow Field::ALL: zip, age, hospital, admit window, diagnosis, gender.
    assert_eq!(row("SH0001"), ["pass", "FAIL", "FAIL", "pass", "pass", "pass"]);
    assert_eq!(row("SH0004"), ["pass", "pass", "pass", "FAIL", "pass", "pass"]);

    let unknown = run(&[&args[..], &["--record-id".into(), "ZZZ".into()]].concat());
    assert_eq!(code(&unknown), 2);
}

fn synth_corpus(dir: &Path) {
    let out = run(&[
        "synth",
        "--seed",
        "7",
        "--n-hospital-records",
        "2000",
        "--out",
        &dir.to_string_lossy(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn transform_is_idempotent_and_does_not_add_unique_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus);
    let c = |name: &str| corpus.join(name).to_string_lossy().into_owned();
    let once = tmp.path().join("once.csv");
    let twice = tmp.path().join("twice.csv");
    let t1 = run(&[
        "transform",
        "--hospital",
        &c("hospital.csv"),
        "--population",
        &c("population.csv"),
        "--out",
        &once.to_string_lossy(),
    ]);
    assert_eq!(code(&t1), 0, "{}", stderr(&t1));
    let t2 = run(&[
        "transform",
        "--hospital",
        &once.to_string_lossy(),
        "--population",
        &c("population.csv"),
        "--out",
        &twice.to_string_lossy(),
    ]);
    assert_eq!(code(&t2), 0);
    assert_eq!(fs::read(&once).unwrap(), fs::read(&twice).unwrap());

    let unique = |hospital: &str, out: &Path| -> u64 {
        let o = run(&[
            "audit",
            "--hospital",
            hospital,
            "--external",
            &c("external.csv"),
            "--public-records",
            &c("public_records.csv"),
            "--out",
            &out.to_string_lossy(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        summary(out)["tallies"]["unique"].as_u64().unwrap()
    };
    let raw = unique(&c("hospital.csv"), &tmp.path().join("a_raw"));
    let generalized = unique(&once.to_string_lossy(), &tmp.path().join("a_gen"));
    assert!(generalized <= raw, "{generalized} > {raw}");
}

#[test]
fn stats_on_distinct_people_is_fully_unique() {
    let tmp = tempfile::tempdir().unwrap();
    let people = tmp.path().join("people.csv");
    fs::write(
        &people,
        "dob,gender,zip\n1950-05-10,M,98851\n1950-05-11,M,98851\n1950-05-10,F,98851\n1950-05-10,M,98857\n",
    )
    .unwrap();
    let p = people.to_string_lossy();
    let out = run(&["stats", "--input", &p, "--qi", "dob,gender,zip"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("uniqueness       1.000000"), "{}", stdout(&out));

    let coarse = run(&["stats", "--format", "machine", "--input", &p, "--qi", "birth_year,zip3"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&coarse)).unwrap();
    assert_eq!(v["uniqueness"], 0.0);
    assert_eq!(v["histogram"][0]["k"], 4);

    let bad = run(&["stats", "--input", &p, "--qi", "dob,shoe_size"]);
    assert_eq!(code(&bad), 2);
    let err = stderr(&bad);
    assert!(
        err.contains("shoe_size") && err.contains("birth_year") && err.contains("discharge_month"),
        "{err}"
    );

    let unavailable = run(&["stats", "--input", &p, "--qi", "age_months"]);
    assert_eq!(code(&unavailable), 2);
}

#[test]
fn synth_digests_are_pinned() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "synth",
        "--seed",
        "99",
        "--n-hospital-records",
        "500",
        "--n-externals",
        "12",
        "--n-planted-unique",
        "4",
        "--n-planted-ambiguous",
        "2",
        "--n-planted-nomatch",
        "3",
        "--out",
        &tmp.path().join("s").to_string_lossy(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let expected = include_str!("synth_seed99.sha256");
    assert_eq!(stdout(&out), expected);
}

#[test]
fn config_file_and_environment_variable_with_flags_winning() {
    let fx = Fixture::new();
    fs::write(
        fx.path("run.toml"),
        "hospital = \"hospital.csv\"\nexternal = \"external.csv\"\npublic_records = \"public.csv\"\n\
         out = \"from_config\"\nmax_drop = 0\n",
    )
    .unwrap();
    let by_flag = run(&["--config", &fx.arg("run.toml"), "audit"]);
    assert_eq!(code(&by_flag), 0, "{}", stderr(&by_flag));
    assert_eq!(classification(&fx.path("from_config")), "nomatch");

    let by_env = run_with(&["audit", "--max-drop", "2", "--out", &fx.arg("from_env")], |c| {
        c.env("REIDENT_CONFIG", fx.path("run.toml"));
    });
    assert_eq!(code(&by_env), 0, "{}", stderr(&by_env));
    assert_eq!(classification(&fx.path("from_env")), "unique");

    fs::write(fx.path("typo.toml"), "max_drops = 1\n").unwrap();
    assert_eq!(code(&run(&["--config", &fx.arg("typo.toml"), "audit"])), 2);
}
