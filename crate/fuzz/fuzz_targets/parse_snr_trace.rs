#![no_main]

use libfuzzer_sys::fuzz_target;
use tracesim::traces::parse_snr_trace;

fuzz_target!(|data: &[u8]| {
    if let Ok(trace) = parse_snr_trace(data) {
        let again = parse_snr_trace(trace.to_csv().as_bytes()).expect("written trace parses");
        assert_eq!(again, trace);
    }
});
