#![no_main]

use fastvc::corpus::PhonemeAlignment;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(a) = PhonemeAlignment::parse(text, 16000) {
        // Accepted alignments survive a round trip and a rate change.
        assert_eq!(PhonemeAlignment::parse(&a.to_text(), 16000).unwrap(), a);
        let _ = a.to_rate(22050);
    }
});
