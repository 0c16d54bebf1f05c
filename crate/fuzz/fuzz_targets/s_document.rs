#![no_main]

use libfuzzer_sys::fuzz_target;
use rcnet_core::graph::{emit_dot, graph_from_s};
use rcnet_core::io::parse_s_document;
use rcnet_core::rotation::default_prune_tol;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(doc) = parse_s_document(text) {
        let graph = graph_from_s(&doc.s, doc.c_target.as_ref(), default_prune_tol(&doc.s));
        let _ = emit_dot(&graph);
    }
});
