#![no_main]

use libfuzzer_sys::fuzz_target;
use tracesim::config::ScenarioConfig;

// to_scenario is left out on purpose: it opens whatever paths the input names.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ScenarioConfig::parse(text) {
        // NaN fields make PartialEq useless, so compare the serialized form
        let written = cfg.to_toml();
        let again = ScenarioConfig::parse(&written).expect("written config parses");
        assert_eq!(again.to_toml(), written);
    }
});
