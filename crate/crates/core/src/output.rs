//! Number formatting and file helpers shared by the CSV and JSON exporters.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `header` followed by one comma-joined line per row.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456789.12345679] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
