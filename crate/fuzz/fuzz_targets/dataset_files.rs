#![no_main]

use libfuzzer_sys::fuzz_target;
use molcom::preprocess::SegmentDataset;

// Layout: u16 LE header length, u32 LE data length, header, data, labels.
fuzz_target!(|data: &[u8]| {
    if data.len() < 6 {
        return;
    }
    let header_len = u16::from_le_bytes([data[0], data[1]]) as usize;
    let data_len = u32::from_le_bytes([data[2], data[3], data[4], data[5]]) as usize;
    let rest = &data[6..];
    if header_len > rest.len() || data_len > rest.len() - header_len {
        return;
    }
    let (header, rest) = rest.split_at(header_len);
    let (values, labels) = rest.split_at(data_len);
    if let Ok(ds) = SegmentDataset::from_parts(header, values, labels) {
        assert_eq!(ds.x.len(), ds.len() * ds.segment_len);
        assert!(ds.y.iter().all(|&y| (y as usize) < ds.alphabet_size));
    }
});
