#![no_main]

use libfuzzer_sys::fuzz_target;
use nested_mlmc_cli::parse::parse_levels;

fuzz_target!(|bytes: &[u8]| {
    let text = String::from_utf8_lossy(bytes);
    if let Ok(range) = parse_levels(&text) {
        assert!(range.start() <= range.end());
        let again = parse_levels(&format!("{}..{}", range.start(), range.end())).unwrap();
        assert_eq!(again, range);
    }
});
