#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((header, traces)) = cvchain::io::decode_trace_file(data) {
        assert_eq!(header.n_traces as usize, traces.len());
        for t in &traces {
            assert_eq!(t.samples.len() as u64, header.samples_per_trace);
            assert!(t.samples.iter().all(|v| v.is_finite()));
        }
    }
});
