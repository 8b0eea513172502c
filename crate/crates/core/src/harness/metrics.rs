//! Per-round metrics CSV.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::protocol::RoundRecord;

pub const HEADER: &str =
    "round,mode,train_loss,test_accuracy,t_encrypt_ms,t_decrypt_ms,t_train_ms,equivalence_rel_err";

/// Floats use 17 significant digits so the file round-trips `f64` exactly.
pub fn write_metrics<W: Write>(out: &mut W, records: &[RoundRecord]) -> std::io::Result<()> {
    writeln!(out, "{HEADER}")?;
    for r in records {
        let eq = r
            .equivalence_rel_err
            .map(|e| format!("{e:.16e}"))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.round,
            r.mode.as_str(),
            r.train_loss,
            r.test_accuracy,
            r.t_encrypt_ms,
            r.t_decrypt_ms,
            r.t_train_ms,
            eq
        )?;
    }
    Ok(())
}

/// Writes the CSV to `path`.
pub fn write_metrics_file(path: &Path, records: &[RoundRecord]) -> crate::Result<()> {
    let io = |source| crate::Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    write_metrics(&mut out, records).map_err(io)?;
    out.flush().map_err(io)
}
