#![no_main]

use libfuzzer_sys::fuzz_target;
use romrec::grid::{parse_f64_grid, parse_usize_grid, MAX_GRID};

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    if let Ok(g) = parse_usize_grid(s) {
        assert!(!g.is_empty() && g.len() <= MAX_GRID);
    }
    if let Ok(g) = parse_f64_grid(s) {
        assert!(!g.is_empty() && g.len() <= MAX_GRID);
        assert!(g.iter().all(|v| v.is_finite()));
    }
});
