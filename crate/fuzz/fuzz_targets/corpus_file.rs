// SPDX-License-Identifier: MIT OR Apache-2.0
#![no_main]

use libfuzzer_sys::fuzz_target;
use memlab::corpus::Corpus;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = Corpus::parse(text) {
        assert_eq!(Corpus::parse(&corpus.to_text()).unwrap(), corpus);
    }
});
