#![no_main]

use libfuzzer_sys::fuzz_target;
use romrec_core::diag::parse_params;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(params) = parse_params(s) else { return };
    let joined = params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
    assert_eq!(joined, s);
    assert_eq!(parse_params(&joined).unwrap(), params);
});
