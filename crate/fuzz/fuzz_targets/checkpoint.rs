// SPDX-License-Identifier: MIT OR Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use memlab::trainer::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        // Whatever loads must serialize back to the same bytes.
        assert_eq!(ckpt.to_bytes(), data);
    }
});
