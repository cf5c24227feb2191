#![no_main]

use libfuzzer_sys::fuzz_target;
use nested_mlmc_cli::parse::parse_tolerances;

fuzz_target!(|bytes: &[u8]| {
    let text = String::from_utf8_lossy(bytes);
    if let Ok(list) = parse_tolerances(&text) {
        assert!(!list.is_empty());
        assert!(list.iter().all(|t| *t > 0.0 && t.is_finite()));
        assert!(list.windows(2).all(|w| w[1] < w[0]));
    }
});
