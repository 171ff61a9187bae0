// SPDX-License-Identifier: MIT OR Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use memlab::memscore::{read_records, write_records};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = read_records(text) {
        assert_eq!(read_records(&write_records(&records)).unwrap(), records);
    }
});
