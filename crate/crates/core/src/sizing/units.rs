//! Quantities written as `"<number> <prefix><unit>"`, e.g. `"20 pF"`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UnitError {
    #[error("`{0}` has no unit")]
    MissingUnit(String),
    #[error("`{text}` is not in {expected}")]
    WrongUnit { text: String, expected: String },
    #[error("`{0}` is not a number")]
    BadNumber(String),
}

fn prefix_scale(c: char) -> Option<f64> {
    Some(match c {
        'f' => 1e-15,
        'p' => 1e-12,
        'n' => 1e-9,
        'u' | 'µ' => 1e-6,
        'm' => 1e-3,
        'k' => 1e3,
        'M' => 1e6,
        'G' => 1e9,
        _ => return None,
    })
}

/// Parses a quantity and converts it to the base of `unit`.
///
/// Units with a power (`um^2`) scale the prefix by that power; rate units
/// (`V/us`) scale by the inverse prefix of the denominator.
pub fn parse_quantity(text: &str, unit: &str) -> Result<f64, UnitError> {
    let t = text.trim();
    let split = t
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .map(|(i, _)| i)
        .unwrap_or(t.len());
    let (num, rest) = t.split_at(split);
    let num = num.trim();
    let rest = rest.trim();
    if rest.is_empty() {
        return Err(UnitError::MissingUnit(text.to_string()));
    }
    let value: f64 = num.parse().map_err(|_| UnitError::BadNumber(text.to_string()))?;
    let scale = unit_scale(rest, unit).ok_or_else(|| UnitError::WrongUnit { text: text.to_string(), expected: unit.to_string() })?;
    Ok(value * scale)
}

fn unit_scale(written: &str, unit: &str) -> Option<f64> {
    if written == unit {
        return Some(1.0);
    }
    if let Some((wn, wd)) = written.split_once('/') {
        let (un, ud) = unit.split_once('/')?;
        return Some(unit_scale(wn, un)? / unit_scale(wd, ud)?);
    }
    let (base, power) = match unit.split_once('^') {
        Some((b, p)) => (b, p.parse::<i32>().ok()?),
        None => (unit, 1),
    };
    let wbase = match written.split_once('^') {
        Some((b, p)) if p.parse::<i32>().ok()? == power => b,
        Some(_) => return None,
        None if power == 1 => written,
        None => return None,
    };
    if wbase == base {
        return Some(1.0);
    }
    let mut chars = wbase.chars();
    let first = chars.next()?;
    if chars.as_str() == base {
        prefix_scale(first).map(|s| s.powi(power))
    } else {
        None
    }
}

/// Formats `value` (in base units) with the given prefix, e.g. `(2e-5, "u", "A")`.
pub fn show(value: f64, prefix: &str, unit: &str) -> String {
    let scale = prefix.chars().next().and_then(prefix_scale).unwrap_or(1.0);
    format!("{} {}{}", crate::netlist::format_si(value / scale), prefix, unit)
}
