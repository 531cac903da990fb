use std::io::Write;

/// One CSV field.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(n) => Some(*n as f64),
            Cell::Text(_) => None,
        }
    }
}

/// Shortest round-trip decimal, switching to exponent form for very small
/// or very large magnitudes.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if x.is_finite() && (x.abs() < 1e-3 || x.abs() >= 1e6) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Num(x) => f.write_str(&format_number(*x)),
            Cell::Int(n) => write!(f, "{n}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    pub scenario: String,
    pub digest: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    /// Writes a `#` comment line naming the tool version, scenario and config
    /// digest, then the header and rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# qlinksim {} scenario={} config_sha256={}",
            env!("CARGO_PKG_VERSION"),
            self.scenario,
            self.digest
        )?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.to_string()))?;
        }
        w.flush()
    }

    /// Column-aligned rendering for terminals.
    pub fn summary(&self) -> String {
        let cells: Vec<Vec<String>> = std::iter::once(self.columns.iter().map(|c| c.to_string()).collect())
            .chain(self.rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()))
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| cells.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for row in cells {
            let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            s.push_str(line.join("  ").trim_end());
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 2.5e-7, 1.0 / 3.0, 10e9, 123.456, -4e-4] {
            assert_eq!(format_number(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_number(0.0), "0");
        assert_eq!(format_number(10e9), "1e10");
        assert_eq!(format_number(0.25), "0.25");
    }

    #[test]
    fn csv_has_comment_header_and_rows() {
        let t = ResultTable {
            scenario: "x".into(),
            digest: "ab".into(),
            columns: vec!["a", "b"],
            rows: vec![vec![Cell::Num(1.5), Cell::Text("on-demand".into())]],
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert!(lines[0].starts_with("# qlinksim ") && lines[0].ends_with("scenario=x config_sha256=ab"));
        assert_eq!(&lines[1..], ["a,b", "1.5,on-demand"]);
    }
}
