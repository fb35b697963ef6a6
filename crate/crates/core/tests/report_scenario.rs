use cmpp_core::report::{format_float, write_csv, write_json_lines, Row, HEADER};
use cmpp_core::runner::{exit_code, run};
use cmpp_core::scenario::{Format, Job, Overrides, Scenario, BUILTINS};
use cmpp_core::verify::Verdict;
use proptest::prelude::*;

fn row(estimate: f64, stderr: f64) -> Row {
    let mut r = Row::new("simulate", "E_P[S_1]").estimate(estimate).stderr(stderr).pass_if(true);
    r.scenario = "s".into();
    r.seed = 42;
    r
}

fn json_f64(v: &serde_json::Value) -> f64 {
    match v {
        serde_json::Value::Number(n) => n.as_f64().unwrap(),
        serde_json::Value::String(s) => s.parse().unwrap(),
        other => panic!("{other}"),
    }
}

proptest! {
    #[test]
    fn json_lines_round_trip_bit_exactly(bits in any::<u64>(), se in any::<f64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(!v.is_nan() && !se.is_nan());
        let mut buf = Vec::new();
        write_json_lines(&[row(v, se)], &mut buf).unwrap();
        let line = String::from_utf8(buf).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(line.trim_end()).unwrap();
        prop_assert_eq!(json_f64(&parsed["estimate"]).to_bits(), v.to_bits());
        prop_assert_eq!(json_f64(&parsed["stderr"]).to_bits(), se.to_bits());
        prop_assert!(parsed["oracle"].is_null());
    }

    #[test]
    fn printed_floats_parse_back(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        let back: f64 = format_float(v).parse().unwrap();
        prop_assert_eq!(back.to_bits(), v.to_bits());
    }
}

#[test]
fn csv_has_the_fixed_header_and_quotes_details() {
    let r = row(1.5, 0.25).detail("a, \"quoted\" detail");
    let mut buf = Vec::new();
    write_csv(&[r], &mut buf).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, HEADER);
    let rec = rdr.records().next().unwrap().unwrap();
    assert_eq!(&rec[3], "1.5");
    assert_eq!(&rec[7], "pass");
    assert_eq!(&rec[9], "a, \"quoted\" detail");
}

#[test]
fn non_finite_values_in_json_are_strings() {
    let mut buf = Vec::new();
    write_json_lines(&[row(f64::INFINITY, f64::NAN)], &mut buf).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
    assert_eq!(v["estimate"], "inf");
    assert_eq!(v["stderr"], "nan");
}

#[test]
fn builtins_parse() {
    for (name, src) in BUILTINS {
        let sc = Scenario::parse(src, name).unwrap();
        assert_eq!(sc.name(), *name);
        assert_eq!(sc.jobs().len(), Job::ALL.len());
        assert!(!sc.description().is_empty());
    }
}

#[test]
fn unknown_scenario_names_the_builtins() {
    let e = Scenario::resolve("no-such-scenario").unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("no-such-scenario"));
    assert!(msg.contains("example-6.2"));
}

const MINIMAL: &str = r#"name = "t"
run = ["validate"]

[base]
claim = "exp(rate=0.2)"
mixing = "gamma(rate=2, shape=2)"

[change]
alpha = "0"
gamma = "0"

[mc]
paths = 1000
seed = 1
horizon = 1.0
"#;

#[test]
fn minimal_scenario_parses() {
    let sc = Scenario::parse(MINIMAL, "t.toml").unwrap();
    let built = sc.build().unwrap();
    assert!(built.change.is_identity());
}

#[test]
fn errors_point_at_the_line() {
    let bad_expr = MINIMAL.replace(r#"gamma = "0""#, r#"gamma = "ln(""#);
    let e = Scenario::parse(&bad_expr, "t.toml").unwrap_err();
    assert_eq!(e.line, Some(10), "{e}");
    assert!(e.to_string().starts_with("t.toml:10:"), "{e}");

    let unknown_ident = MINIMAL.replace(r#"alpha = "0""#, r#"alpha = "2*q""#);
    let e = Scenario::parse(&unknown_ident, "t.toml").unwrap_err();
    assert_eq!(e.line, Some(9));
    assert!(e.message.contains('q'), "{e}");

    let unknown_key = MINIMAL.replace("seed = 1", "seed = 1\nsede = 2");
    let e = Scenario::parse(&unknown_key, "t.toml").unwrap_err();
    assert_eq!(e.line, Some(15), "{e}");

    let few_paths = MINIMAL.replace("paths = 1000", "paths = 5");
    let e = Scenario::parse(&few_paths, "t.toml").unwrap_err();
    assert_eq!(e.line, Some(13), "{e}");

    let bad_law = MINIMAL.replace("exp(rate=0.2)", "exp(rate=-1)");
    let e = Scenario::parse(&bad_law, "t.toml").unwrap_err();
    assert_eq!(e.line, Some(5), "{e}");

    let bad_job = MINIMAL.replace(r#"["validate"]"#, r#"["validate", "fly"]"#);
    let e = Scenario::parse(&bad_job, "t.toml").unwrap_err();
    assert_eq!(e.line, Some(2), "{e}");
}

#[test]
fn overrides_are_applied_and_checked() {
    let mut sc = Scenario::resolve("example-6.3").unwrap();
    let o = Overrides {
        seed: Some(9),
        paths: Some(2000),
        params: vec![("c".into(), 2.0)],
        format: Some(Format::JsonLines),
        ..Overrides::default()
    };
    sc.apply(&o).unwrap();
    assert_eq!(sc.mc.seed, 9);
    assert_eq!(sc.mc.paths, 2000);
    assert_eq!(sc.params()["c"], 2.0);
    assert_eq!(sc.output.format, Format::JsonLines);

    let mut sc = Scenario::resolve("example-6.3").unwrap();
    assert!(sc.apply(&Overrides { paths: Some(3), ..Overrides::default() }).is_err());
    assert!(sc.apply(&Overrides { horizon: Some(-1.0), ..Overrides::default() }).is_err());
}

fn quick(name: &str, seed: u64) -> Scenario {
    let mut sc = Scenario::resolve(name).unwrap();
    sc.apply(&Overrides {
        seed: Some(seed),
        paths: Some(2000),
        ..Overrides::default()
    })
    .unwrap();
    sc
}

#[test]
fn runs_are_deterministic() {
    let jobs = [Job::Validate, Job::DeriveQ, Job::Premium, Job::Simulate, Job::VerifyReweighting];
    let a = run(&quick("example-6.3", 5), Some(&jobs)).unwrap();
    let b = run(&quick("example-6.3", 5), Some(&jobs)).unwrap();
    assert_eq!(a, b);
    let mut ba = Vec::new();
    let mut bb = Vec::new();
    write_csv(&a, &mut ba).unwrap();
    write_csv(&b, &mut bb).unwrap();
    assert_eq!(ba, bb);
    let c = run(&quick("example-6.3", 6), Some(&jobs)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn worked_example_report_carries_annotations() {
    let rows = run(&quick("example-6.2", 1), Some(&[Job::Premium])).unwrap();
    let pq = rows.iter().find(|r| r.job == "premium" && r.quantity == "p(Q)").unwrap();
    assert!((pq.estimate.unwrap() - 200.0 / 9.0).abs() < 1e-8);
    assert_eq!(pq.paper_value, Some(810.0));
    assert_eq!(pq.verdict, Some(Verdict::Pass));
    assert!(rows.iter().all(|r| r.scenario == "example-6.2"));
}

#[test]
fn exit_codes() {
    let ok = vec![row(1.0, 0.0), Row::new("x", "info")];
    assert_eq!(exit_code(&ok), 0);
    let failing = vec![row(1.0, 0.0), Row::new("x", "bad").pass_if(false)];
    assert_eq!(exit_code(&failing), 1);
}
