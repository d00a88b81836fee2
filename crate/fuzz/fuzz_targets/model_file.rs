#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| l2g::fuzzing::fuzz_model_file(data));
