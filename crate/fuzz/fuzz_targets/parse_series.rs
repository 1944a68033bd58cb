#![no_main]

use libfuzzer_sys::fuzz_target;
use tracesim::analysis::parse_series;

fuzz_target!(|data: &[u8]| {
    if let Ok(series) = parse_series(data) {
        let again = parse_series(series.to_csv().as_bytes()).expect("written series parses");
        assert_eq!(again, series);
    }
});
