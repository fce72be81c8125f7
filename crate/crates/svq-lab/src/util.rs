//! Small shared helpers.

use crate::error::Result;
use std::path::Path;

/// FNV-1a 64-bit hash; stable across runs and platforms, used to fingerprint
/// configs and dataset specs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Exponential of the Shannon entropy of a count histogram. Zero counts are
/// ignored; when every nonzero count is equal the result is the exact number
/// of occupied bins. Returns 1.0 for an all-zero histogram.
pub fn perplexity_of_counts(counts: &[u64]) -> f64 {
    let active: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    if active.is_empty() {
        return 1.0;
    }
    let first = active[0];
    if active.iter().all(|&c| c == first) {
        return active.len() as f64;
    }
    let total: u64 = active.iter().sum();
    let tf = total as f64;
    let sum_clnc: f64 = active.iter().map(|&c| (c as f64) * (c as f64).ln()).sum();
    (tf.ln() - sum_clnc / tf).exp()
}

/// Formats `v` with `sig` significant digits for CSV output. Integers keep
/// their exact form, trailing zeros are trimmed, and non-finite values pass
/// through as `NaN`/`inf`.
pub fn format_sig(v: f64, sig: usize) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes a file atomically: the bytes land in a sibling temp file first and
/// are renamed into place, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp-{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id()
        )),
        None => Path::new(&format!(".atomic.tmp-{}", std::process::id())).to_path_buf(),
    };
    std::fs::write(&tmp, bytes)?;
    match std::fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e.into())
        }
    }
}
