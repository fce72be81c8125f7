//! Plain-text dataset manifests: one `key=value` pair per line.

use crate::error::{Error, Result};
use crate::util::atomic_write;
use std::collections::BTreeMap;
use std::path::Path;

use super::synth::SyntheticSpec;

/// Renders pairs as `key=value` lines (LF endings, order preserved).
pub fn render_manifest(pairs: &[(String, String)]) -> Result<String> {
    let mut out = String::new();
    for (k, v) in pairs {
        if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::param(format!("manifest key/value '{k}'='{v}' not representable")));
        }
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    atomic_write(path, render_manifest(pairs)?.as_bytes())
}

/// Parses `key=value` lines; blank lines are skipped, duplicate keys error.
pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::data(format!("manifest line {} has no '=': '{line}'", i + 1)))?;
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::data(format!("duplicate manifest key '{k}'")));
        }
    }
    Ok(map)
}

pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

/// Standard manifest rows for a synthetic dataset spec.
pub fn dataset_manifest(spec: &SyntheticSpec) -> Vec<(String, String)> {
    vec![
        ("kind".into(), spec.kind.name().into()),
        ("height".into(), spec.height.to_string()),
        ("width".into(), spec.width.to_string()),
        ("t_in".into(), spec.t_in.to_string()),
        ("count".into(), spec.samples.to_string()),
        ("seed".into(), spec.seed.to_string()),
        ("spec_hash".into(), format!("{:016x}", spec.spec_hash())),
    ]
}
