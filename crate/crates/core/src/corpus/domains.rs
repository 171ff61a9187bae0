// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic text domains in three categories.

use memlab_tensor::RngStream;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Structural,
    SemiStructural,
    FreeText,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Structural, Category::SemiStructural, Category::FreeText];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Structural => "structural",
            Category::SemiStructural => "semi_structural",
            Category::FreeText => "free_text",
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueKind {
    Digits {
        len: usize,
    },
    /// Uniformly random characters from `alphabet`.
    Token {
        len: usize,
        alphabet: String,
    },
    Choice {
        options: Vec<String>,
    },
    Name,
    Date,
    Amount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub key: String,
    pub value: ValueKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorParams {
    /// Bracketed expressions. Bracket pairs are `open[i]`/`close[i]`.
    /// With `prefix`, a group is `( op a b )`; otherwise `( a op b )`.
    /// With `period`, one expression stream of that many characters is
    /// generated and repeated.
    Brackets {
        open: String,
        close: String,
        operators: Vec<String>,
        atoms: Vec<String>,
        separator: String,
        max_depth: usize,
        #[serde(default)]
        prefix: bool,
        #[serde(default)]
        period: Option<usize>,
    },
    /// Records with a fixed field skeleton.
    Records {
        fields: Vec<Field>,
        field_sep: String,
        record_sep: String,
    },
    /// First-order Markov chain over a word list. An empty list is replaced
    /// by `n_words` pseudo-words drawn from `grammar_seed`.
    Markov {
        #[serde(default)]
        words: Vec<String>,
        #[serde(default)]
        n_words: usize,
        branching: usize,
        grammar_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub category: Category,
    pub generator: GeneratorParams,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "ten", "su", "vo", "ne", "dal", "fi", "gor", "hu", "ji", "pel", "qua", "ri", "sen", "to",
    "ul", "ve", "wyn", "xo", "ya", "zel", "bo", "ce", "dru", "el", "fa", "gi",
];

fn word(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect()
}

fn capitalized(mut s: String) -> String {
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s
}

fn digits(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect()
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("domain {}: {msg}", self.name)));
        if self.name.is_empty()
            || self
                .name
                .chars()
                .any(|c| !(c.is_ascii_alphanumeric() || c == '_' || c == '-'))
        {
            return bad("name must be non-empty [A-Za-z0-9_-]");
        }
        let all_text = |parts: &[&str]| parts.iter().all(|p| p.chars().all(|c| (' '..='~').contains(&c)));
        match &self.generator {
            GeneratorParams::Brackets {
                open,
                close,
                operators,
                atoms,
                separator,
                period,
                ..
            } => {
                if open.is_empty() || open.chars().count() != close.chars().count() {
                    return bad("open and close must be non-empty and of equal length");
                }
                if atoms.is_empty() || atoms.iter().any(String::is_empty) || operators.is_empty() {
                    return bad("atoms and operators must be non-empty");
                }
                if *period == Some(0) {
                    return bad("period must be at least 1");
                }
                let mut parts = vec![open.as_str(), close.as_str(), separator.as_str()];
                parts.extend(operators.iter().map(String::as_str));
                parts.extend(atoms.iter().map(String::as_str));
                if !all_text(&parts) {
                    return bad("text outside printable ASCII");
                }
            }
            GeneratorParams::Records {
                fields,
                field_sep,
                record_sep,
            } => {
                if fields.is_empty() {
                    return bad("records need at least one field");
                }
                let mut parts = vec![field_sep.as_str(), record_sep.as_str()];
                for f in fields {
                    parts.push(&f.key);
                    match &f.value {
                        ValueKind::Digits { len: 0 } | ValueKind::Token { len: 0, .. } => {
                            return bad("digit and token fields need len >= 1")
                        }
                        ValueKind::Token { alphabet, .. } if alphabet.is_empty() => return bad("empty token alphabet"),
                        ValueKind::Token { alphabet, .. } => parts.push(alphabet),
                        ValueKind::Choice { options } if options.is_empty() => return bad("empty choice field"),
                        ValueKind::Choice { options } => parts.extend(options.iter().map(String::as_str)),
                        _ => {}
                    }
                }
                if !all_text(&parts) {
                    return bad("text outside printable ASCII");
                }
            }
            GeneratorParams::Markov {
                words,
                n_words,
                branching,
                ..
            } => {
                if words.is_empty() && *n_words == 0 {
                    return bad("markov domains need words or n_words");
                }
                if *branching == 0 {
                    return bad("branching must be at least 1");
                }
                if words.iter().any(|w| w.is_empty() || w.contains(' '))
                    || !all_text(&words.iter().map(String::as_str).collect::<Vec<_>>())
                {
                    return bad("words must be non-empty printable ASCII without spaces");
                }
            }
        }
        Ok(())
    }

    /// Generates exactly `len` characters from the stream `rng`.
    pub fn generate(&self, rng: &RngStream, len: usize) -> String {
        let mut r = rng.rng();
        let mut out = String::with_capacity(len + 32);
        match &self.generator {
            GeneratorParams::Brackets { period, separator, .. } => {
                let target = period.map_or(len, |p| p.min(len));
                while out.len() < target {
                    if !out.is_empty() {
                        out.push_str(separator);
                    }
                    self.expression(&mut r, 0, &mut out);
                }
                out.truncate(target);
                if out.len() < len {
                    let motif = out.clone();
                    while out.len() < len {
                        out.push_str(&motif);
                    }
                }
            }
            GeneratorParams::Records {
                fields,
                field_sep,
                record_sep,
            } => {
                while out.len() < len {
                    if !out.is_empty() {
                        out.push_str(record_sep);
                    }
                    for (i, f) in fields.iter().enumerate() {
                        if i > 0 {
                            out.push_str(field_sep);
                        }
                        out.push_str(&f.key);
                        out.push_str(&value(&mut r, &f.value));
                    }
                }
            }
            GeneratorParams::Markov {
                words,
                n_words,
                branching,
                grammar_seed,
            } => {
                let chain = Chain::new(words, *n_words, *branching, *grammar_seed);
                let mut w = r.random_range(0..chain.words.len());
                let mut since_stop = 0;
                while out.len() < len {
                    if !out.is_empty() {
                        if since_stop >= 4 && r.random_bool(0.2) {
                            out.push('.');
                            since_stop = 0;
                        } else if since_stop >= 2 && r.random_bool(0.08) {
                            out.push(',');
                        }
                        out.push(' ');
                    }
                    out.push_str(&chain.words[w]);
                    since_stop += 1;
                    w = *chain.next[w].choose(&mut r).expect("branching >= 1");
                }
            }
        }
        out.truncate(len);
        out
    }

    fn expression(&self, r: &mut ChaCha8Rng, depth: usize, out: &mut String) {
        let GeneratorParams::Brackets {
            open,
            close,
            operators,
            atoms,
            max_depth,
            prefix,
            ..
        } = &self.generator
        else {
            unreachable!("expression is only called for bracket domains")
        };
        if depth >= *max_depth || r.random_bool(0.35) {
            out.push_str(atoms.choose(r).expect("validated"));
            return;
        }
        let pair = r.random_range(0..open.len());
        out.push_str(&open[pair..pair + 1]);
        let op = operators.choose(r).expect("validated");
        if *prefix {
            out.push_str(op);
            out.push(' ');
            self.expression(r, depth + 1, out);
            out.push(' ');
            self.expression(r, depth + 1, out);
        } else {
            self.expression(r, depth + 1, out);
            out.push_str(op);
            self.expression(r, depth + 1, out);
        }
        out.push_str(&close[pair..pair + 1]);
    }
}

fn value(r: &mut ChaCha8Rng, kind: &ValueKind) -> String {
    match kind {
        ValueKind::Digits { len } => digits(r, *len),
        ValueKind::Token { len, alphabet } => {
            let chars: Vec<char> = alphabet.chars().collect();
            (0..*len).map(|_| *chars.choose(r).expect("validated")).collect()
        }
        ValueKind::Choice { options } => options.choose(r).expect("validated").clone(),
        ValueKind::Name => capitalized(word(r, 2, 3)),
        ValueKind::Date => format!(
            "{}-{:02}-{:02}",
            r.random_range(1950..2030),
            r.random_range(1..=12),
            r.random_range(1..=28)
        ),
        ValueKind::Amount => format!("{}.{}", r.random_range(1..100_000), digits(r, 2)),
    }
}

struct Chain {
    words: Vec<String>,
    next: Vec<Vec<usize>>,
}

impl Chain {
    fn new(words: &[String], n_words: usize, branching: usize, seed: u64) -> Self {
        let grammar = RngStream::new(seed).named("markov");
        let words: Vec<String> = if words.is_empty() {
            let mut r = grammar.named("words").rng();
            (0..n_words).map(|_| word(&mut r, 1, 3)).collect()
        } else {
            words.to_vec()
        };
        let mut r = grammar.named("edges").rng();
        let next = (0..words.len())
            .map(|_| (0..branching).map(|_| r.random_range(0..words.len())).collect())
            .collect();
        Self { words, next }
    }
}

fn brackets(
    name: &str,
    open: &str,
    close: &str,
    ops: &[&str],
    atoms: &[&str],
    sep: &str,
    depth: usize,
    prefix: bool,
) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        category: Category::Structural,
        generator: GeneratorParams::Brackets {
            open: open.into(),
            close: close.into(),
            operators: ops.iter().map(|s| s.to_string()).collect(),
            atoms: atoms.iter().map(|s| s.to_string()).collect(),
            separator: sep.into(),
            max_depth: depth,
            prefix,
            period: None,
        },
    }
}

fn records(name: &str, fields: Vec<(&str, ValueKind)>, field_sep: &str, record_sep: &str) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        category: Category::SemiStructural,
        generator: GeneratorParams::Records {
            fields: fields
                .into_iter()
                .map(|(k, v)| Field {
                    key: k.into(),
                    value: v,
                })
                .collect(),
            field_sep: field_sep.into(),
            record_sep: record_sep.into(),
        },
    }
}

fn markov(name: &str, n_words: usize, branching: usize, grammar_seed: u64) -> DomainSpec {
    DomainSpec {
        name: name.into(),
        category: Category::FreeText,
        generator: GeneratorParams::Markov {
            words: Vec::new(),
            n_words,
            branching,
            grammar_seed,
        },
    }
}

fn choice(options: &[&str]) -> ValueKind {
    ValueKind::Choice {
        options: options.iter().map(|s| s.to_string()).collect(),
    }
}

/// The stock set of eleven domains: four structural, four semi-structural,
/// three free-text.
pub fn default_domains() -> Vec<DomainSpec> {
    let digits1: Vec<&str> = vec!["0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "x", "y"];
    let mut cycle = brackets("cycle", "(", ")", &["+", "-", "*"], &digits1, ";", 2, false);
    if let GeneratorParams::Brackets { period, .. } = &mut cycle.generator {
        *period = Some(8);
    }
    vec![
        brackets("arith", "(", ")", &["+", "-", "*", "/"], &digits1, " = ", 3, false),
        brackets(
            "sexpr",
            "(",
            ")",
            &["car", "cdr", "cons", "if", "let", "eq"],
            &["a", "b", "nil", "t", "xs", "n"],
            " ",
            3,
            true,
        ),
        brackets(
            "nested",
            "[{<",
            "]}>",
            &[",", ":", "|"],
            &["a", "b", "c", "d", "e", "f"],
            "",
            4,
            false,
        ),
        cycle,
        records(
            "registry",
            vec![
                ("id=", ValueKind::Digits { len: 5 }),
                ("name=", ValueKind::Name),
                ("born=", ValueKind::Date),
            ],
            ";",
            " | ",
        ),
        records(
            "ledger",
            vec![
                ("acct ", ValueKind::Digits { len: 4 }),
                (" amt ", ValueKind::Amount),
                (" ", choice(&["USD", "EUR", "GBP", "JPY"])),
            ],
            ",",
            "; ",
        ),
        records(
            "statute",
            vec![
                ("Sec. ", ValueKind::Digits { len: 2 }),
                ("(", choice(&["a", "b", "c", "d"])),
                (") The ", choice(&["tenant", "lessor", "party", "holder"])),
                (" shall ", choice(&["pay", "file", "notify", "deliver"])),
                (" by ", ValueKind::Date),
            ],
            "",
            ". ",
        ),
        records(
            "blobs",
            vec![(
                "",
                ValueKind::Token {
                    len: 16,
                    alphabet: "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/".into(),
                },
            )],
            "",
            "",
        ),
        markov("prose", 120, 3, 11),
        markov("tales", 80, 2, 23),
        markov("notes", 200, 5, 37),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_cover_categories() {
        let d = default_domains();
        for spec in &d {
            spec.validate().unwrap();
        }
        for c in Category::ALL {
            assert!(d.iter().filter(|s| s.category == c).count() >= 3, "{c}");
        }
    }

    #[test]
    fn generation_is_deterministic_and_exact_length() {
        for spec in default_domains() {
            let rng = RngStream::new(5).named(&spec.name);
            let a = spec.generate(&rng, 64);
            assert_eq!(a.len(), 64, "{}: {a}", spec.name);
            assert_eq!(a, spec.generate(&rng, 64));
            assert_ne!(a, spec.generate(&rng.substream(1), 64), "{}", spec.name);
            assert!(crate::corpus::encode(&a).is_ok());
        }
    }

    #[test]
    fn periodic_domain_repeats() {
        let spec = default_domains().into_iter().find(|d| d.name == "cycle").unwrap();
        let s = spec.generate(&RngStream::new(1), 64);
        assert_eq!(&s[..8], &s[8..16]);
        assert_eq!(&s[..8], &s[56..64]);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut d = default_domains().remove(0);
        d.name = "bad name".into();
        assert!(d.validate().is_err());
        let m = markov("m", 0, 2, 1);
        assert!(m.validate().is_err());
    }
}
