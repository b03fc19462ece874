mod common;

use std::path::PathBuf;

use leakscope_core::mir::{parse, LoopBounds};
use leakscope_core::pipeline::analyze_function;
use leakscope_core::report::SCHEMA;
use leakscope_core::{AnalysisConfig, LeakModelKind, Report};

const FIXTURES: [&str; 8] = [
    "cadd",
    "cadd_control",
    "sbfx",
    "speck_arx",
    "kyber_frommsg",
    "mbedtls_ct_lt",
    "ct_branch",
    "ct_load",
];

fn report(name: &str, cfg: &AnalysisConfig) -> Report {
    let src = common::fixture_src(name);
    let f = parse(&src).unwrap().functions.remove(0);
    analyze_function(&f, &src, &LoopBounds::default(), cfg)
        .unwrap()
        .0
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/{name}.txt"))
}

/// Set `LEAKSCOPE_BLESS=1` to rewrite the golden files.
#[test]
fn text_matches_golden_files() {
    let cfg = AnalysisConfig::default();
    for name in FIXTURES {
        let text = report(name, &cfg).to_text();
        let path = golden(name);
        if std::env::var_os("LEAKSCOPE_BLESS").is_some() {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &text).unwrap();
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path:?}: {e}"));
        assert_eq!(text, want, "{name}");
    }
}

#[test]
fn json_is_deterministic_and_schema_valid() {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    let all = AnalysisConfig {
        models: LeakModelKind::ALL.into(),
        ..Default::default()
    };
    for cfg in [AnalysisConfig::default(), all] {
        for name in FIXTURES {
            let a = report(name, &cfg).to_json();
            let serial = AnalysisConfig {
                jobs: Some(1),
                ..cfg.clone()
            };
            assert_eq!(a, report(name, &serial).to_json(), "{name}");
            let value: serde_json::Value = serde_json::from_str(&a).unwrap();
            let msgs: Vec<String> = match validator.validate(&value) {
                Ok(()) => Vec::new(),
                Err(errors) => errors
                    .map(|e| format!("{e} at {}", e.instance_path))
                    .collect(),
            };
            assert!(msgs.is_empty(), "{name}: {msgs:#?}");
        }
    }
}

#[test]
fn schema_rejects_malformed_reports() {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
    let validator = jsonschema::JSONSchema::compile(&schema).unwrap();
    let mut v: serde_json::Value =
        serde_json::from_str(&report("cadd", &AnalysisConfig::default()).to_json()).unwrap();
    v["records"][0]["reasons"] = serde_json::json!(["because"]);
    assert!(!validator.is_valid(&v));
    v["records"][0].as_object_mut().unwrap().remove("reasons");
    assert!(!validator.is_valid(&v));
}

#[test]
fn json_round_trips() {
    for name in FIXTURES {
        let r = report(name, &AnalysisConfig::default());
        let json = r.to_json();
        let back = Report::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json, "{name}");
        assert_eq!(back.to_text(), r.to_text(), "{name}");
    }
}

#[test]
fn text_and_json_agree_on_flags() {
    for name in FIXTURES {
        let r = report(name, &AnalysisConfig::default());
        let text = r.to_text();
        let flagged = text
            .lines()
            .skip(1)
            .filter(|l| l.contains(" vulnerable ["))
            .count();
        assert_eq!(flagged, r.records.iter().filter(|x| x.vulnerable).count());
        assert_eq!(flagged, r.summary.vulnerable);
        assert_eq!(
            text.lines()
                .filter(|l| l.starts_with("violation: "))
                .count(),
            r.violations.len()
        );
        assert_eq!(
            text.lines().count(),
            1 + r.violations.len() + r.records.len()
        );
    }
}

#[test]
fn violating_programs_have_no_records() {
    for name in ["ct_branch", "ct_load"] {
        let r = report(name, &AnalysisConfig::default());
        assert!(!r.violations.is_empty());
        assert!(r.records.is_empty());
    }
}
