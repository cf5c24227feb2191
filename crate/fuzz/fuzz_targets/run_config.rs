#![no_main]

use libfuzzer_sys::fuzz_target;
use nested_mlmc_cli::RunConfig;

fuzz_target!(|bytes: &[u8]| {
    if let Ok(text) = std::str::from_utf8(bytes) {
        if let Ok(cfg) = RunConfig::from_toml_str(text) {
            // accepted configs must survive a round trip unchanged
            let again = RunConfig::from_toml_str(&cfg.to_toml_string()).expect("round trip parses");
            assert_eq!(again, cfg);
        }
    }
});
