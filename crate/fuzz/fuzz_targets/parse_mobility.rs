#![no_main]

use libfuzzer_sys::fuzz_target;
use tracesim::traces::parse_mobility;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = parse_mobility(data) {
        let again = parse_mobility(trace.to_csv().as_bytes()).expect("written trace parses");
        assert_eq!(again, trace);
    }
});
