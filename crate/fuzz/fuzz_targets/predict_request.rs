#![no_main]

use libfuzzer_sys::fuzz_target;
use sacti_cli::input::parse_inputs;
use sacti_core::model::PredictRequest;

fuzz_target!(|data: &[u8]| {
    if let Ok(req) = serde_json::from_slice::<PredictRequest>(data) {
        if let Ok(inst) = req.to_instance() {
            assert!(inst.compound().contains('-'));
        }
    }
    if let Ok(items) = parse_inputs(data) {
        for item in items {
            item.request().to_instance().expect("parsed inputs are valid");
        }
    }
});
