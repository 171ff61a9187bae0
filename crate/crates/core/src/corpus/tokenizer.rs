// SPDX-License-Identifier: MIT OR Apache-2.0

//! Character-level tokenizer over printable ASCII.
//!
//! Id 0 is reserved for padding; `' '..='~'` map to ids `1..=95`.

use crate::error::{Error, Result};
use crate::model::TokenId;

pub const PAD: TokenId = 0;
pub const VOCAB_SIZE: usize = 96;

const FIRST: u8 = b' ';
const LAST: u8 = b'~';

pub fn encode_char(c: char) -> Result<TokenId> {
    match u8::try_from(c) {
        Ok(b @ FIRST..=LAST) => Ok((b - FIRST) as TokenId + 1),
        _ => Err(Error::InvalidInput(format!(
            "character {c:?} is outside the tokenizer alphabet"
        ))),
    }
}

pub fn encode(text: &str) -> Result<Vec<TokenId>> {
    text.chars().map(encode_char).collect()
}

/// Decodes ids back to text. The pad id and out-of-range ids render as `'?'`.
pub fn decode(ids: &[TokenId]) -> String {
    ids.iter()
        .map(|&id| match id {
            1..=95 => (FIRST + (id - 1) as u8) as char,
            _ => '?',
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_alphabet() {
        let text: String = (FIRST..=LAST).map(char::from).collect();
        let ids = encode(&text).unwrap();
        assert_eq!(ids.len(), 95);
        assert_eq!(ids[0], 1);
        assert_eq!(*ids.last().unwrap(), 95);
        assert_eq!(decode(&ids), text);
    }

    #[test]
    fn rejects_outside_alphabet() {
        assert!(encode("tab\there").is_err());
        assert!(encode("é").is_err());
    }
}
