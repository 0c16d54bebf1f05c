#![no_main]

use libfuzzer_sys::fuzz_target;
use rcnet_core::io::{model_to_json, parse_model};
use rcnet_core::linalg::{default_eig_tol, real_diagonalize};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(model) = parse_model(text) else { return };
    let back = parse_model(&model_to_json(&model)).expect("written models parse");
    assert_eq!(back.a_hat, model.a_hat);
    // what `rcnet check` does next; errors are fine, panics are not
    if model.n() <= 8 {
        let _ = real_diagonalize(&model.a_hat, default_eig_tol(&model.a_hat));
    }
});
