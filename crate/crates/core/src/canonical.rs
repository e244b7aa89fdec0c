//! Canonical JSON rendering.
//!
//! Object keys are emitted in lexicographic order, reals with nine
//! significant digits, and no insignificant whitespace. Two values that are
//! structurally equal render to identical bytes.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Renders any serializable value in canonical form.
pub fn to_canonical_string<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = String::new();
    write_value(&value, &mut out);
    Ok(out)
}

pub fn render(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, &mut out);
    out
}

/// First eight bytes of SHA-256 over the canonical rendering.
pub fn digest64<T: Serialize>(value: &T) -> Result<u64> {
    Ok(digest64_bytes(to_canonical_string(value)?.as_bytes()))
}

pub fn digest64_bytes(bytes: &[u8]) -> u64 {
    let hash = Sha256::digest(bytes);
    u64::from_be_bytes(hash[..8].try_into().expect("sha256 is 32 bytes"))
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_value(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else {
                out.push_str(&format_real(n.as_f64().unwrap_or(f64::NAN)));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string serialization is infallible"))
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(key).expect("string serialization is infallible"));
                out.push(':');
                write_value(&map[key], out);
            }
            out.push('}');
        }
    }
}

/// Nine significant digits, trailing zeros trimmed, always with a decimal
/// point or exponent so the value reads back as a real.
pub fn format_real(x: f64) -> String {
    if x == 0.0 {
        return "0.0".into();
    }
    if !x.is_finite() {
        // JSON has no representation; serde_json maps these to null anyway.
        return "null".into();
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();

    let body = if (-5..15).contains(&exp) {
        let mut s = if exp >= 0 {
            let int_len = exp as usize + 1;
            let (int_part, frac) = if digits.len() > int_len {
                (digits[..int_len].to_string(), digits[int_len..].to_string())
            } else {
                (format!("{:0<width$}", digits, width = int_len), String::new())
            };
            format!("{int_part}.{frac}")
        } else {
            let zeros = "0".repeat((-exp - 1) as usize);
            format!("0.{zeros}{digits}")
        };
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.push('0');
        }
        s
    } else {
        let mut frac = digits[1..].to_string();
        while frac.ends_with('0') {
            frac.pop();
        }
        if frac.is_empty() {
            format!("{}.0e{}", &digits[..1], exp)
        } else {
            format!("{}.{}e{}", &digits[..1], frac, exp)
        }
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}
