use harness::{parse_config, parse_config_with, split_override, validate, ConfigError, ExperimentConfig, Scenario};

fn overrides(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

#[test]
fn every_scenario_round_trips_through_emit() {
    for s in Scenario::ALL {
        let cfg = ExperimentConfig::new(s);
        assert_eq!(parse_config(&cfg.emit()).unwrap(), cfg, "{s}");
    }
}

#[test]
fn non_default_values_round_trip() {
    let text = "\
scenario = fig4a
seed = 99
output = /tmp/x.csv

[relaxation]
mode = explicit
flip_rate = 0.03
collective_flip_rate = 0.05
uncorrelated_dephasing = 0.01
correlated_dephasing = 0.2

[noise]
rms = 0.25
trajectories = 64

[prep]
lock_mode = waltz16
initial = singlet

[fig4a]
repetitions = 10
mode = common
";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.seed, 99);
    assert_eq!(cfg.fig4a.repetitions, 10);
    assert_eq!(parse_config(&cfg.emit()).unwrap(), cfg);
}

#[test]
fn missing_scenario_is_named() {
    let e = parse_config("seed = 3\n").unwrap_err();
    assert!(matches!(e, ConfigError::MissingKey { .. }));
    assert_eq!(e.key(), Some("scenario"));
    assert!(e.to_string().contains("scenario"));
}

#[test]
fn zero_step_names_propagation_dt() {
    let e = parse_config("scenario = fig3a\n\n[propagation]\ndt = 0\n").unwrap_err();
    assert_eq!(e.key(), Some("propagation.dt"));
    assert_eq!(e.line(), Some(4));
    assert!(e.to_string().contains("propagation.dt"));

    let mut cfg = ExperimentConfig::new(Scenario::Fig3a);
    cfg.propagation.dt = 0.0;
    assert_eq!(validate(&cfg).unwrap_err().key(), Some("propagation.dt"));
}

#[test]
fn unknown_keys_are_errors_with_their_line() {
    let e = parse_config("scenario = fig3a\n[noise]\nrms = 1\nrmss = 2\n").unwrap_err();
    assert!(matches!(e, ConfigError::UnknownKey { .. }));
    assert_eq!(e.key(), Some("noise.rmss"));
    assert_eq!(e.line(), Some(4));

    let e = parse_config("scenario = fig3a\n[nosie]\nrms = 1\n").unwrap_err();
    assert_eq!(e.key(), Some("nosie.rms"));
}

#[test]
fn malformed_lines_report_the_line() {
    let e = parse_config("scenario = fig3a\n\n[noise\nrms = 1\n").unwrap_err();
    assert!(matches!(e, ConfigError::Syntax { .. }), "{e:?}");
    assert_eq!(e.line(), Some(3));

    let e = parse_config("scenario = fig3a\n[noise]\njunk\nrms = 1\n").unwrap_err();
    assert_eq!(e.line(), Some(3));
    let e = parse_config("scenario = fig3a\n[noise]\nbad key = 1\n").unwrap_err();
    assert_eq!(e.line(), Some(3));
}

#[test]
fn duplicate_keys_are_rejected() {
    let e = parse_config("scenario = fig3a\n[noise]\nrms = 1\nrms = 2\n").unwrap_err();
    assert_eq!(e.key(), Some("noise.rms"));
    assert_eq!(e.line(), Some(4));
}

#[test]
fn bad_values_name_their_key() {
    let cases = [
        ("[noise]\nrms = abc", "noise.rms"),
        ("[noise]\ntrajectories = 0", "noise.trajectories"),
        ("[eit]\nsegment_duration = 0.2401", "eit.segment_duration"),
        ("[monitor]\ninterval = 0.00013", "monitor.interval"),
        ("[fig4a]\noffset_step = 0.3", "fig4a.offset_step"),
        ("[fig4a]\nmode = sideways", "fig4a.mode"),
        ("[prep]\nrf_weights = 0.5, 0.5, 0.5, 0.5, 0.5", "prep.rf_weights"),
        ("[relaxation]\nmode = explicit\nt1 = 5", "relaxation.t1"),
        ("[propagation]\nmethod = euler", "propagation.method"),
    ];
    for (body, key) in cases {
        let e = parse_config(&format!("scenario = fig3a\n{body}\n")).unwrap_err();
        assert_eq!(e.key(), Some(key), "{body}: {e}");
    }
}

#[test]
fn overrides_win_over_the_file() {
    let text = "scenario = fig3a\nseed = 5\n[noise]\nrms = 1.0\n";
    let cfg = parse_config_with(text, &overrides(&[("noise.rms", "0.2"), ("scenario", "fig3b")])).unwrap();
    assert_eq!(cfg.noise.rms, 0.2);
    assert_eq!(cfg.scenario, Scenario::Fig3b);
    assert_eq!(cfg.seed, 5);

    // later overrides replace earlier ones
    let cfg = parse_config_with(text, &overrides(&[("seed", "7"), ("seed", "8")])).unwrap();
    assert_eq!(cfg.seed, 8);

    // an override cannot smuggle in an unknown key
    let e = parse_config_with(text, &overrides(&[("noise.colour", "pink")])).unwrap_err();
    assert_eq!(e.key(), Some("noise.colour"));
    assert_eq!(e.line(), None);
}

#[test]
fn override_arguments_split_on_the_first_equals() {
    assert_eq!(split_override("a.b=c=d").unwrap(), ("a.b".to_string(), "c=d".to_string()));
    assert_eq!(split_override(" noise.rms = 0.5 ").unwrap(), ("noise.rms".to_string(), "0.5".to_string()));
    assert!(split_override("noise.rms").is_err());
    assert!(split_override("=3").is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let text = "# experiment\nscenario = lifetimes\n\n; more\n[molecule]\ndelta_nu = 270.3\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.scenario, Scenario::Lifetimes);
    // comments are whole-line only
    let e = parse_config("scenario = lifetimes ; note\n").unwrap_err();
    assert_eq!(e.key(), Some("scenario"));
}

#[test]
fn the_key_reference_covers_every_key() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.md")).unwrap();
    for key in harness::config::known_keys() {
        let (section, leaf) = key.split_once('.').unwrap_or(("", &key));
        let body = if section.is_empty() {
            doc.split("## Top level").nth(1)
        } else {
            doc.split(&format!("## `[{section}]`")).nth(1)
        }
        .unwrap_or_else(|| panic!("no section for {key}"));
        let body = body.split("\n## ").next().unwrap();
        assert!(body.contains(&format!("| `{leaf}` |")), "{key} is not documented");
    }
}
