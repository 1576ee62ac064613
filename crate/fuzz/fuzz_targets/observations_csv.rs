#![no_main]

use libfuzzer_sys::fuzz_target;
use romrec_core::Observations;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let Ok(obs) = Observations::parse_csv(s, 0.0, 0) else { return };
    let mut out = Vec::new();
    obs.write_csv(&mut out).unwrap();
    let back = Observations::parse_csv(std::str::from_utf8(&out).unwrap(), 0.0, 0).expect("written CSV parses");
    let bits = |o: &Observations| o.y.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&obs));
});
