#![no_main]

use libfuzzer_sys::fuzz_target;
use stochnh::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::from_toml_str(text) else { return };
    // a validated config must survive its own echo
    let back = RunConfig::from_toml_str(&cfg.to_toml_string()).expect("echoed config rejected");
    assert_eq!(back, cfg);
    let _ = cfg.stepper_config();
    let _ = cfg.ensemble_config();
});
