//! Plain-text rendering of a finished run. Values are copied from the CSVs
//! as strings, never re-parsed or recomputed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::pipeline::{BUCKETS_FILE, BUCKETS_HEADER, TABLE1_FILE, TABLE1_HEADER, TABLE2_FILE, TABLE2_HEADER};

fn read_table(dir: &Path, rel: &str, header: &[&str]) -> CliResult<Vec<Vec<String>>> {
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(CliError::Validation(format!("missing {}", path.display())));
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(CliError::Validation(format!(
            "{} has columns {found:?}, expected {header:?}",
            path.display()
        )));
    }
    reader
        .records()
        .map(|r| {
            r.map(|rec| rec.iter().map(str::to_string).collect())
                .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// Left-aligned columns separated by two spaces, with a rule under the
/// header. Trailing spaces are trimmed so the output is stable to diff.
fn render(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = String::new();
        for (cell, w) in cells.zip(&widths) {
            let _ = write!(s, "{cell:<w$}  ");
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut rule.iter().map(String::as_str));
    for row in rows {
        line(&mut row.iter().map(String::as_str));
    }
}

/// Renders Table 1, Table 2 and the bucket table of a run directory.
pub fn cmd_report(run_dir: &Path) -> CliResult<String> {
    let empty = match fs::read_dir(run_dir) {
        Ok(mut entries) => entries.next().is_none(),
        Err(_) => true,
    };
    if empty {
        return Err(CliError::Validation(format!(
            "run directory {} is empty or missing",
            run_dir.display()
        )));
    }
    let table1 = read_table(run_dir, TABLE1_FILE, &TABLE1_HEADER)?;
    let table2 = read_table(run_dir, TABLE2_FILE, &TABLE2_HEADER)?;
    let buckets = read_table(run_dir, BUCKETS_FILE, &BUCKETS_HEADER)?;

    let mut out = String::new();
    out.push_str("Logging-policy estimation (nDCG, mean ± 95% CI half-width)\n\n");
    let rows: Vec<Vec<String>> = table1
        .iter()
        .map(|r| {
            vec![
                r[0].clone(),
                format!("{} ± {}", r[1], r[2]),
                format!("{} ± {}", r[3], r[4]),
            ]
        })
        .collect();
    render(&mut out, &["method", "accuracy", "strength"], &rows);

    out.push_str("\nRanking performance on test queries (95% CI)\n\n");
    let rows: Vec<Vec<String>> = table2
        .iter()
        .map(|r| {
            vec![
                r[0].clone(),
                format!("{}@{}", r[1], r[2]),
                r[3].clone(),
                format!("[{}, {}]", r[4], r[5]),
                r[6].clone(),
            ]
        })
        .collect();
    render(&mut out, &["model", "metric", "mean", "interval", "queries"], &rows);

    out.push_str("\nQueries bucketed by estimated logging-policy nDCG\n\n");
    let rows: Vec<Vec<String>> = buckets
        .iter()
        .map(|r| {
            vec![
                r[0].clone(),
                format!("[{}, {}]", r[1], r[2]),
                r[3].clone(),
                r[4].clone(),
                r[5].clone(),
                r[6].clone(),
            ]
        })
        .collect();
    render(
        &mut out,
        &["bucket", "policy ndcg", "model", "mean", "vs random", "queries"],
        &rows,
    );
    Ok(out)
}
