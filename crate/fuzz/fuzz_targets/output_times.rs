#![no_main]

use libfuzzer_sys::fuzz_target;
use stochnh::config::{Linspace, OutputTimes};

fuzz_target!(|data: (&str, f64)| {
    let (spec, t_final) = data;
    if let Ok(Linspace(n)) = spec.parse::<Linspace>() {
        assert!(n >= 2);
    }
    if t_final.is_finite() && t_final > 0.0 && t_final < 1e6 {
        if let Ok(times) = OutputTimes::Spec(spec.to_string()).resolve(t_final) {
            assert!(times.iter().all(|t| (0.0..=t_final).contains(t)));
        }
    }
});
