#![no_main]

use libfuzzer_sys::fuzz_target;
use serde::Deserialize;
use stochnh::config::TermSpec;
use stochnh::field::Grid;
use stochnh::model::{build_model, hermitian_split, ModelInput};
use stochnh::operators::CompiledOperator;

#[derive(Deserialize)]
struct Terms {
    h1_terms: Vec<TermSpec>,
    #[serde(default)]
    h2_terms: Vec<TermSpec>,
}

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(t) = toml::from_str::<Terms>(text) else { return };
    let (Ok(h1), Ok(h2)) = (
        t.h1_terms.iter().map(TermSpec::to_term).collect::<Result<Vec<_>, _>>(),
        t.h2_terms.iter().map(TermSpec::to_term).collect::<Result<Vec<_>, _>>(),
    ) else {
        return;
    };
    let Ok(spec) = build_model(ModelInput::Custom { h1_terms: h1, h2_terms: h2 }) else { return };
    let _ = hermitian_split(&spec.h1_terms);
    let grid = Grid::new(10.0, 16).unwrap();
    for weight in [0.0, 0.3] {
        let _ = CompiledOperator::compile_weighted(&spec.h1_terms, &grid, weight);
    }
});
