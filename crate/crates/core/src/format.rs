//! Locale-independent number formatting for CSV and text output.

use crate::magnitude::Magnitude;

/// Significant digits of every emitted float.
pub const SIGNIFICANT_DIGITS: usize = 12;

/// `%.12g`-style formatting: fixed notation for exponents in `[-5, 12)`,
/// scientific otherwise, trailing zeros trimmed.
pub fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIGNIFICANT_DIGITS as i32).contains(&exp) {
        let decimals = (SIGNIFICANT_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

/// Like [`fmt_float`], but values beyond the `f64` range keep their decimal
/// exponent instead of collapsing to `inf` or `0`.
pub fn fmt_magnitude(m: Magnitude) -> String {
    if m.is_zero() {
        return "0".into();
    }
    let v = m.value();
    if v.is_finite() && v >= f64::MIN_POSITIVE {
        return fmt_float(v);
    }
    let log10 = m.log10();
    let mut exp = log10.floor();
    let mut mantissa = 10f64.powf(log10 - exp);
    let rounded = format!("{:.*}", SIGNIFICANT_DIGITS - 1, mantissa);
    if rounded.starts_with("10") {
        exp += 1.0;
        mantissa /= 10.0;
    }
    format!(
        "{}e{}",
        trim_zeros(format!("{:.*}", SIGNIFICANT_DIGITS - 1, mantissa)),
        exp as i64
    )
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}
