#![no_main]

use libfuzzer_sys::fuzz_target;
use romrec_core::rom1;

fuzz_target!(|data: &[u8]| {
    let raw = rom1::decode_raw(data);
    if let Ok(m) = rom1::decode(data) {
        assert!(raw.is_ok());
        let again = rom1::decode(&rom1::encode(&m)).expect("re-encoded matrix decodes");
        assert_eq!(again, m);
    }
});
