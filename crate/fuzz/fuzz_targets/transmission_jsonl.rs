#![no_main]

use libfuzzer_sys::fuzz_target;
use molcom::testbed::{read_jsonl, write_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok(corpus) = read_jsonl(data) {
        let mut out = Vec::new();
        write_jsonl(&mut out, &corpus).expect("accepted records serialize");
        assert_eq!(read_jsonl(out.as_slice()).expect("round trip"), corpus);
    }
});
