#![no_main]

use fastvc::archive::Archive;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(a) = Archive::decode(data) {
        let again = Archive::encode(&a.header, &a.blobs).unwrap();
        assert_eq!(Archive::decode(&again).unwrap().blobs, a.blobs);
    }
});
