#![no_main]

use libfuzzer_sys::fuzz_target;
use molcom::channel::ObservedSeries;

fuzz_target!(|data: &[u8]| {
    if let Ok(obs) = ObservedSeries::from_csv(data) {
        assert_eq!(obs.times().len(), obs.values().len());
        assert!(obs.times().windows(2).all(|w| w[0] < w[1]));
    }
});
