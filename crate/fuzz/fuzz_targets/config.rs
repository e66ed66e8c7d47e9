#![no_main]

use fastvc::config::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::from_toml_str(text, &[]) {
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
});
