//! Text formatting for metric tables.

use comdense::model::ParamCount;

/// Metric in `[0, 1]` printed to three places without the leading zero:
/// `0.356` becomes `.356`, `1.0` stays `1.000`.
pub fn metric(v: f64) -> String {
    let s = format!("{v:.3}");
    match s.strip_prefix("0.") {
        Some(rest) => format!(".{rest}"),
        None => s,
    }
}

/// Difference against a baseline in the `(+.012)` style. Empty when the
/// rounded difference is zero.
pub fn delta(v: f64, baseline: f64) -> String {
    let d = v - baseline;
    let rounded = format!("{:.3}", d.abs());
    if rounded == "0.000" {
        return String::new();
    }
    let sign = if d > 0.0 { '+' } else { '-' };
    format!("({sign}{})", metric(d.abs()).trim_start_matches('0'))
}

/// Integer with thousands separators.
pub fn grouped(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn param_table(count: &ParamCount) -> String {
    let rows = [
        ("embeddings", count.embeddings),
        ("relation-aware", count.relation_aware),
        ("common", count.common),
        ("projection", count.projection),
        ("total", count.total()),
    ];
    rows.iter()
        .map(|(name, n)| format!("{name:<15} {:>14}\n", grouped(*n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_drops_leading_zero() {
        assert_eq!(metric(0.3561), ".356");
        assert_eq!(metric(1.0), "1.000");
        assert_eq!(metric(0.0), ".000");
    }

    #[test]
    fn delta_style() {
        assert_eq!(delta(0.368, 0.356), "(+.012)");
        assert_eq!(delta(0.350, 0.356), "(-.006)");
        assert_eq!(delta(0.356, 0.356), "");
        assert_eq!(delta(0.3561, 0.3560), "");
        assert_eq!(delta(1.0, 0.0), "(+1.000)");
    }

    #[test]
    fn grouping() {
        assert_eq!(grouped(0), "0");
        assert_eq!(grouped(999), "999");
        assert_eq!(grouped(66_552_576), "66,552,576");
    }
}
