#![no_main]

use libfuzzer_sys::fuzz_target;
use molcom::nn::Network;

// Layout: u16 LE manifest length, manifest, weight blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 2 {
        return;
    }
    let n = u16::from_le_bytes([data[0], data[1]]) as usize;
    let rest = &data[2..];
    if n > rest.len() {
        return;
    }
    let (manifest, blob) = rest.split_at(n);
    if let Ok(net) = Network::<f32>::from_bytes(manifest, blob) {
        let (m, b) = net.to_bytes().expect("loaded network serializes");
        assert_eq!(Network::<f32>::from_bytes(m.as_bytes(), &b).expect("round trip"), net);
    }
});
