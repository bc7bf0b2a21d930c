use std::fs;
use std::path::Path;

use asyncclip::sweep::SweepSpec;
use asyncclip::RunConfig;

#[test]
fn shipped_configs_parse_validate_and_round_trip() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        if text.contains("[grid]") {
            let spec = SweepSpec::from_toml_str(&text).unwrap();
            spec.validate().unwrap();
            let back = SweepSpec::from_toml_str(&toml::to_string(&spec).unwrap()).unwrap();
            assert_eq!(back, spec, "{}", path.display());
        } else {
            let cfg = RunConfig::load(&path).unwrap();
            cfg.validate().unwrap();
            let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
            assert_eq!(back, cfg, "{}", path.display());
        }
        seen += 1;
    }
    assert!(seen >= 3);
}
