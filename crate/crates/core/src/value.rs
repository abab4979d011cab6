//! Canonical numeric values.
//!
//! Values are exact decimals. Text such as `"12,500 tonnes"`, `"45%"` or
//! `"10–12 MWh"` is normalized with locale-free rules: commas are thousands
//! separators, a trailing `%` becomes the unit, a range keeps its first
//! number, and any text after the number is taken as the unit.

use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::de::{self, Visitor};
use serde::{Deserializer, Serializer};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedNumber {
    pub value: Decimal,
    /// Text after the number (or `%`), trimmed; `None` if nothing followed.
    pub unit: Option<String>,
    /// The text was a range and only its first number was kept.
    pub range: bool,
}

const RANGE_SEPARATORS: &[&str] = &["-", "\u{2013}", "\u{2014}", "~", "to "];
const CURRENCY_PREFIXES: &[&str] = &["HK$", "US$", "RMB", "$", "\u{a5}", "\u{20ac}", "\u{a3}"];

/// Scan a number at the start of `s`, returning its canonical text and the
/// byte length consumed.
fn scan_number(s: &str) -> Option<(String, usize)> {
    let bytes = s.as_bytes();
    let mut i = 0;
    let mut out = String::new();
    if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
        if bytes[i] == b'-' {
            out.push('-');
        }
        i += 1;
    }
    let mut digits = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'0'..=b'9' => {
                out.push(bytes[i] as char);
                digits += 1;
                i += 1;
            }
            b',' if digits > 0 && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => i += 1,
            _ => break,
        }
    }
    if i < bytes.len() && bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
        out.push('.');
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            out.push(bytes[i] as char);
            digits += 1;
            i += 1;
        }
    }
    (digits > 0).then_some((out, i))
}

fn to_decimal(text: &str) -> Option<Decimal> {
    Decimal::from_str(text)
        .or_else(|_| Decimal::from_scientific(text))
        .ok()
        .map(|d| d.normalize())
}

/// Parse a value string; `None` if it does not start with a number.
pub fn parse_number(text: &str) -> Option<ParsedNumber> {
    let mut s = text.trim().replace('\u{2212}', "-");
    for p in CURRENCY_PREFIXES {
        if let Some(rest) = s.strip_prefix(p) {
            s = rest.trim_start().to_string();
            break;
        }
    }
    let (num, used) = scan_number(&s)?;
    let value = to_decimal(&num)?;
    let mut rest = s[used..].trim_start();
    let mut range = false;
    for sep in RANGE_SEPARATORS {
        if let Some(after) = rest.strip_prefix(sep) {
            let after = after.trim_start();
            if let Some((_, used2)) = scan_number(after) {
                range = true;
                rest = after[used2..].trim_start();
                break;
            }
        }
    }
    let unit = if rest.starts_with('%') {
        Some("%".to_string())
    } else {
        let u = rest.trim().trim_end_matches('.').trim();
        (!u.is_empty()).then(|| u.to_string())
    };
    Some(ParsedNumber { value, unit, range })
}

/// Canonical decimal from a JSON number's textual form.
pub fn decimal_from_json(n: &serde_json::Number) -> Option<Decimal> {
    to_decimal(&n.to_string())
}

/// Serde helpers for `Option<Decimal>`: written as a string, read from a
/// string or a JSON number.
pub mod opt_decimal {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<Decimal>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(d) => s.serialize_some(&d.normalize().to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Decimal>, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Option<Decimal>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a decimal as string or number, or null")
            }
            fn visit_none<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(None)
            }
            fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
                Ok(None)
            }
            fn visit_some<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
                super::decimal::deserialize(d).map(Some)
            }
        }
        d.deserialize_option(V)
    }
}

/// Serde helpers for `Decimal`: written as a string, read from a string or
/// a JSON number.
pub mod decimal {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Decimal, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.normalize().to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Decimal;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a decimal as string or number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Decimal, E> {
                to_decimal(v.trim()).ok_or_else(|| E::custom(format!("invalid decimal `{v}`")))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Decimal, E> {
                Ok(Decimal::from(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Decimal, E> {
                Ok(Decimal::from(v))
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Decimal, E> {
                to_decimal(&v.to_string()).ok_or_else(|| E::custom(format!("invalid decimal {v}")))
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    #[test]
    fn thousands_and_unit() {
        let p = parse_number("12,500 tonnes").unwrap();
        assert_eq!(p.value, d("12500"));
        assert_eq!(p.unit.as_deref(), Some("tonnes"));
        assert!(!p.range);
    }

    #[test]
    fn percent_becomes_unit() {
        let p = parse_number("45.0%").unwrap();
        assert_eq!(p.value, d("45"));
        assert_eq!(p.unit.as_deref(), Some("%"));
    }

    #[test]
    fn range_keeps_first_number() {
        for s in ["10\u{2013}12 MWh", "10-12 MWh", "10 to 12 MWh"] {
            let p = parse_number(s).unwrap();
            assert_eq!(p.value, d("10"), "{s}");
            assert_eq!(p.unit.as_deref(), Some("MWh"), "{s}");
            assert!(p.range, "{s}");
        }
    }

    #[test]
    fn negatives_currency_and_rejects() {
        assert_eq!(parse_number("-3.5").unwrap().value, d("-3.5"));
        assert_eq!(parse_number("HK$ 1,200").unwrap().value, d("1200"));
        assert!(parse_number("n/a").is_none());
        assert!(parse_number("").is_none());
        assert!(parse_number(".").is_none());
    }

    #[test]
    fn serde_accepts_strings_and_numbers() {
        #[derive(serde::Deserialize, serde::Serialize)]
        struct W {
            #[serde(with = "opt_decimal")]
            v: Option<Decimal>,
        }
        let a: W = serde_json::from_str(r#"{"v": 12.50}"#).unwrap();
        let b: W = serde_json::from_str(r#"{"v": "12.5"}"#).unwrap();
        let c: W = serde_json::from_str(r#"{"v": null}"#).unwrap();
        assert_eq!(a.v, b.v);
        assert_eq!(c.v, None);
        assert_eq!(serde_json::to_string(&a).unwrap(), r#"{"v":"12.5"}"#);
    }

    proptest! {
        #[test]
        fn grouped_integers_round_trip(n in 0u64..10_000_000_000) {
            let grouped = {
                let s = n.to_string();
                let mut out = String::new();
                for (i, c) in s.chars().enumerate() {
                    if i > 0 && (s.len() - i) % 3 == 0 {
                        out.push(',');
                    }
                    out.push(c);
                }
                out
            };
            let p = parse_number(&format!("{grouped} kWh")).unwrap();
            prop_assert_eq!(p.value, Decimal::from(n));
            prop_assert_eq!(p.unit.as_deref(), Some("kWh"));
        }

        #[test]
        fn never_panics(s in "\\PC{0,40}") {
            let _ = parse_number(&s);
        }
    }
}
