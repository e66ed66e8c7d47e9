#![no_main]

use candle_core::DType;
use fastvc::vocoder::{import_vocoder, GeneratorConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = import_vocoder(data, &GeneratorConfig::tiny(16), 256, DType::F32);
});
