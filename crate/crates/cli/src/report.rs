//! Report assembly and emission. A report is an ordered collection of
//! metadata, scalars, tables, and verdicts; the three emitters render the
//! same data as human-readable text, CSV records, or a structured
//! JSON-style document. All numeric output uses 17-significant-digit
//! scientific notation so re-emission is byte-identical and parse-back is
//! exact.

use sha2::{Digest, Sha256};

/// One table cell. Numbers stay typed until emission so each format can
/// render them natively.
#[derive(Debug, Clone)]
pub enum Cell {
    Text(String),
    Int(i64),
    Real(f64),
    Complex(f64, f64),
    /// Exact rational, rendered as `num/den`.
    Rational(u64, u64),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            // Commas are the record separator; free text sanitizes them.
            Cell::Text(s) => s.replace(',', ";"),
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_f64(*v),
            Cell::Complex(re, im) => format!("{}+{}j", fmt_f64(*re), fmt_f64(*im)),
            Cell::Rational(n, d) => format!("{n}/{d}"),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Text(s) => json_string(s),
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_f64(*v),
            Cell::Complex(re, im) => format!("[{}, {}]", fmt_f64(*re), fmt_f64(*im)),
            Cell::Rational(n, d) => json_string(&format!("{n}/{d}")),
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_f64(*v),
            Cell::Complex(re, im) => {
                let sign = if *im < 0.0 { "-" } else { "+" };
                format!("{} {} {}i", fmt_f64(*re), sign, fmt_f64(im.abs()))
            }
            Cell::Rational(n, d) => format!("{n}/{d}"),
        }
    }
}

/// 17 significant digits: round-trips every f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

/// A named invariant with its measured residual against a tolerance.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub invariant: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Verdict {
    /// Pass iff `residual ≤ tolerance`.
    pub fn from_residual(invariant: &str, residual: f64, tolerance: f64) -> Verdict {
        Verdict {
            invariant: invariant.into(),
            residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }

    /// A structural predicate reported in verdict form (residual 0 or 1).
    pub fn from_flag(invariant: &str, pass: bool) -> Verdict {
        Verdict {
            invariant: invariant.into(),
            residual: if pass { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass,
        }
    }
}

/// The full result of one command run. Field order is emission order, so
/// building the report deterministically makes every emitter
/// deterministic.
#[derive(Debug, Clone, Default)]
pub struct ReportDocument {
    pub command: String,
    pub config_digest: String,
    pub tolerances: Vec<(String, f64)>,
    pub scalars: Vec<(String, f64)>,
    pub tables: Vec<Table>,
    pub verdicts: Vec<Verdict>,
}

impl ReportDocument {
    pub fn new(command: &str, digest: &str) -> ReportDocument {
        ReportDocument {
            command: command.into(),
            config_digest: digest.into(),
            ..ReportDocument::default()
        }
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.tolerances.push((name.into(), value));
    }

    pub fn scalar(&mut self, name: &str, value: f64) {
        self.scalars.push((name.into(), value));
    }

    pub fn table(&mut self, table: Table) {
        self.tables.push(table);
    }

    pub fn verdict(&mut self, verdict: Verdict) {
        self.verdicts.push(verdict);
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn failed_count(&self) -> usize {
        self.verdicts.iter().filter(|v| !v.pass).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Structured,
}

pub fn emit(report: &ReportDocument, format: Format) -> String {
    match format {
        Format::Text => emit_text(report),
        Format::Csv => emit_csv(report),
        Format::Structured => emit_structured(report),
    }
}

fn emit_text(r: &ReportDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {}\n", r.command));
    out.push_str(&format!("config digest: {}\n", r.config_digest));
    if !r.tolerances.is_empty() {
        out.push_str("\ntolerances:\n");
        for (name, v) in &r.tolerances {
            out.push_str(&format!("  {name} = {}\n", fmt_f64(*v)));
        }
    }
    if !r.scalars.is_empty() {
        out.push_str("\nresults:\n");
        for (name, v) in &r.scalars {
            out.push_str(&format!("  {name} = {}\n", fmt_f64(*v)));
        }
    }
    for t in &r.tables {
        out.push_str(&format!("\n{}:\n", t.name));
        let mut widths: Vec<usize> = t.columns.iter().map(|c| c.len()).collect();
        let rendered: Vec<Vec<String>> = t
            .rows
            .iter()
            .map(|row| row.iter().map(Cell::text).collect())
            .collect();
        for row in &rendered {
            for (i, cell) in row.iter().enumerate() {
                if i < widths.len() {
                    widths[i] = widths[i].max(cell.len());
                }
            }
        }
        let header: Vec<String> = t
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{:<w$}", c, w = widths[i]))
            .collect();
        out.push_str(&format!("  {}\n", header.join("  ")));
        for row in &rendered {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:<w$}", c, w = widths.get(i).copied().unwrap_or(0)))
                .collect();
            out.push_str(&format!("  {}\n", line.join("  ")));
        }
    }
    if !r.verdicts.is_empty() {
        out.push_str("\nverdicts:\n");
        for v in &r.verdicts {
            out.push_str(&format!(
                "  [{}] {} (residual {} vs tolerance {})\n",
                if v.pass { "pass" } else { "FAIL" },
                v.invariant,
                fmt_f64(v.residual),
                fmt_f64(v.tolerance),
            ));
        }
    }
    out
}

/// CSV: every line is a record with a leading record-type field, so one
/// stream carries metadata, scalars, tables, and verdicts unambiguously.
fn emit_csv(r: &ReportDocument) -> String {
    let mut out = String::new();
    out.push_str(&format!("meta,command,{}\n", r.command));
    out.push_str(&format!("meta,digest,{}\n", r.config_digest));
    for (name, v) in &r.tolerances {
        out.push_str(&format!("tolerance,{name},{}\n", fmt_f64(*v)));
    }
    for (name, v) in &r.scalars {
        out.push_str(&format!("scalar,{name},{}\n", fmt_f64(*v)));
    }
    for t in &r.tables {
        out.push_str(&format!("table,{},{}\n", t.name, t.columns.join(",")));
        for row in &t.rows {
            let cells: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&format!("row,{},{}\n", t.name, cells.join(",")));
        }
    }
    for v in &r.verdicts {
        out.push_str(&format!(
            "verdict,{},{},{},{}\n",
            v.invariant,
            fmt_f64(v.residual),
            fmt_f64(v.tolerance),
            if v.pass { "pass" } else { "fail" }
        ));
    }
    out
}

fn emit_structured(r: &ReportDocument) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"command\": {},\n", json_string(&r.command)));
    out.push_str(&format!(
        "  \"digest\": {},\n",
        json_string(&r.config_digest)
    ));
    out.push_str("  \"tolerances\": {");
    for (i, (name, v)) in r.tolerances.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("\n    {}: {}", json_string(name), fmt_f64(*v)));
    }
    out.push_str(if r.tolerances.is_empty() { "},\n" } else { "\n  },\n" });
    out.push_str("  \"scalars\": {");
    for (i, (name, v)) in r.scalars.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("\n    {}: {}", json_string(name), fmt_f64(*v)));
    }
    out.push_str(if r.scalars.is_empty() { "},\n" } else { "\n  },\n" });
    out.push_str("  \"tables\": {");
    for (i, t) in r.tables.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("\n    {}: {{\n", json_string(&t.name)));
        let cols: Vec<String> = t.columns.iter().map(|c| json_string(c)).collect();
        out.push_str(&format!("      \"columns\": [{}],\n", cols.join(", ")));
        out.push_str("      \"rows\": [");
        for (j, row) in t.rows.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            let cells: Vec<String> = row.iter().map(Cell::json).collect();
            out.push_str(&format!("\n        [{}]", cells.join(", ")));
        }
        out.push_str(if t.rows.is_empty() { "]\n" } else { "\n      ]\n" });
        out.push_str("    }");
    }
    out.push_str(if r.tables.is_empty() { "},\n" } else { "\n  },\n" });
    out.push_str("  \"verdicts\": [");
    for (i, v) in r.verdicts.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!(
            "\n    {{\"invariant\": {}, \"residual\": {}, \"tolerance\": {}, \"pass\": {}}}",
            json_string(&v.invariant),
            fmt_f64(v.residual),
            fmt_f64(v.tolerance),
            v.pass
        ));
    }
    out.push_str(if r.verdicts.is_empty() { "]\n" } else { "\n  ]\n" });
    out.push_str("}\n");
    out
}

/// Lowercase hex SHA-256 of the run's defining input (scenario bytes or
/// the canonicalized flag string).
pub fn digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ReportDocument {
        let mut r = ReportDocument::new("demo run", "abc123");
        r.tolerance("consistency", 1e-10);
        r.scalar("residual", 3.25e-12);
        r.table(Table {
            name: "probabilities".into(),
            columns: vec!["label".into(), "p".into()],
            rows: vec![
                vec![Cell::Int(1), Cell::Rational(1, 3)],
                vec![Cell::Int(2), Cell::Rational(2, 3)],
            ],
        });
        r.verdict(Verdict::from_residual("consistency", 3.25e-12, 1e-10));
        r
    }

    #[test]
    fn emission_is_deterministic() {
        let r = sample();
        for fmt in [Format::Text, Format::Csv, Format::Structured] {
            assert_eq!(emit(&r, fmt), emit(&r, fmt));
        }
    }

    #[test]
    fn csv_rows_carry_typed_cells() {
        let out = emit(&sample(), Format::Csv);
        assert!(out.contains("row,probabilities,1,1/3"));
        assert!(out.contains("verdict,consistency,"));
        assert!(out.contains(",pass\n"));
    }

    #[test]
    fn structured_output_is_balanced() {
        let out = emit(&sample(), Format::Structured);
        assert_eq!(
            out.matches('{').count(),
            out.matches('}').count(),
            "unbalanced braces in {out}"
        );
        assert!(out.contains("\"command\": \"demo run\""));
        // 17-significant-digit numerics (the nearest double to 3.25e-12).
        assert!(out.contains("3.2500000000000001e-12"));
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [
            0.1,
            std::f64::consts::PI,
            -3.25e-12,
            1.0 / 3.0,
            f64::MIN_POSITIVE,
        ] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "through {s}");
        }
    }

    #[test]
    fn digest_is_stable_hex() {
        let d = digest(b"abc");
        assert_eq!(d.len(), 64);
        assert_eq!(
            d,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn empty_report_emits_header_only() {
        let r = ReportDocument::new("empty", "00");
        let text = emit(&r, Format::Text);
        assert_eq!(text, "# empty\nconfig digest: 00\n");
        let csv = emit(&r, Format::Csv);
        assert_eq!(csv, "meta,command,empty\nmeta,digest,00\n");
    }
}
