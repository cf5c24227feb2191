#![no_main]

use libfuzzer_sys::fuzz_target;
use nested_mlmc::{oracle_level_value, oracle_u0, DiscreteNestedSpec, DiscreteProblem};

fuzz_target!(|bytes: &[u8]| {
    let Ok(text) = std::str::from_utf8(bytes) else {
        return;
    };
    let Ok(spec) = DiscreteNestedSpec::from_toml_str(text) else {
        return;
    };
    DiscreteProblem::new(spec.clone()).expect("validated spec builds a problem");
    let u0 = oracle_u0(&spec);
    let level0 = oracle_level_value(&spec, 0);
    // max{·, π} is 1-Lipschitz, so the level-0 value moves by at most |δx + δy|
    let gap = (level0 - u0).abs();
    let bound = (spec.delta_x + spec.delta_y).abs();
    if gap.is_finite() && bound.is_finite() {
        assert!(gap <= bound + 1e-9 * (1.0 + u0.abs() + level0.abs()), "{gap} > {bound}");
    }
});
