//! Result files: atomic whole-file writes, CSV rows, summary documents.

use std::io::Write;
use std::path::{Path, PathBuf};

use gl2d::study::ConvergenceRecord;

pub const CONVERGE_HEADER: &str = "kappa,n,h,err_l2,err_hk1,err_energy,scaled_l2,\
scaled_hk1,scaled_energy,order_l2,order_hk1,order_energy,bestapprox_hk1,bestapprox_l2,\
preasymptotic_flag";

pub const BESTAPPROX_HEADER: &str =
    "kappa,n,h,bestapprox_hk1,bestapprox_l2,order_hk1,order_l2,preasymptotic_flag";

pub const EIGS_HEADER: &str = "kappa,lambda_1,lambda_2,lambda_3,lambda_4,lambda_5";

/// Shortest round-trip decimal; empty for an undefined value.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn record_row(r: &ConvergenceRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.kappa,
        r.n,
        r.h,
        r.err_l2,
        r.err_hk1,
        r.err_energy,
        r.scaled_l2,
        r.scaled_hk1,
        r.scaled_energy,
        opt(r.order_l2),
        opt(r.order_hk1),
        opt(r.order_energy),
        r.bestapprox_hk1,
        r.bestapprox_l2,
        r.preasymptotic
    )
}

fn temp_path(target: &Path) -> PathBuf {
    use std::time::{SystemTime, UNIX_EPOCH};
    let nonce =
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.subsec_nanos()).unwrap_or(0);
    let dir = target.parent().unwrap_or_else(|| Path::new("."));
    let base = target.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dir.join(format!(".{base}.{nonce}.tmp"))
}

/// Whole-file atomic write: temp file in the target directory, then rename.
pub fn atomic_write(target: &Path, text: &str) -> std::io::Result<()> {
    let tmp = temp_path(target);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(text.as_bytes())?;
        f.sync_all()?;
    }
    if std::fs::rename(&tmp, target).is_err() {
        let retry = temp_path(target);
        std::fs::write(&retry, text.as_bytes())?;
        std::fs::rename(&retry, target)?;
    }
    Ok(())
}

pub fn write_csv(target: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let mut text = String::with_capacity(header.len() + 1 + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    atomic_write(target, &text)
}
