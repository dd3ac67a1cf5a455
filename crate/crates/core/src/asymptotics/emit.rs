use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
    Ok(())
}

/// Whitespace-separated columns with a `#` header line.
pub fn write_gnuplot(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "# {}", columns.join(" "))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.12e}")).collect();
        writeln!(f, "{}", cells.join(" "))?;
    }
    f.flush()?;
    Ok(())
}
