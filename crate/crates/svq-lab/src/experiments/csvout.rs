//! CSV rendering shared by every experiment: a `# config_hash=` provenance
//! comment, 6-significant-digit floats, LF line endings, atomic writes.

use crate::error::Result;
use crate::util::{atomic_write, format_sig};
use std::path::Path;

pub fn float_cell(v: f64) -> String {
    format_sig(v, 6)
}

pub fn render_csv(config_hash: u64, columns: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("# config_hash={config_hash:016x}\n");
    out.push_str(&columns.join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), columns.len());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, config_hash: u64, columns: &[&str], rows: &[Vec<String>]) -> Result<()> {
    atomic_write(path, render_csv(config_hash, columns, rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_provenance_header() {
        let rows = vec![
            vec!["a".to_string(), float_cell(0.123456789)],
            vec!["b".to_string(), float_cell(f64::NAN)],
        ];
        let text = render_csv(0xdead_beef, &["name", "value"], &rows);
        assert_eq!(
            text,
            "# config_hash=00000000deadbeef\nname,value\na,0.123457\nb,NaN\n"
        );
        assert!(!text.contains('\r'));
    }
}
