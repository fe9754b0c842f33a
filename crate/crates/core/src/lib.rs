//! Benchmark harness for tabular data cleaning.
//!
//! The pipeline injects ledgered errors into clean data ([`inject`]), flags
//! suspicious cells ([`detect`], [`constraints`]), repairs them ([`repair`]),
//! trains downstream models on every data version ([`model`]) and scores each
//! stage ([`eval`], [`stats`]). [`bench`] plans and runs the experiment grid.

use std::collections::BTreeMap;

pub mod bench;
pub mod constraints;
pub mod detect;
pub mod eval;
pub mod inject;
pub mod model;
pub mod repair;
pub mod stats;
pub mod tabular;

/// Splits `name[:key=value,...]` into the name and its parameters.
pub fn parse_spec_string(s: &str) -> Result<(String, BTreeMap<String, String>), String> {
    let s = s.trim();
    let (name, rest) = match s.split_once(':') {
        Some((n, r)) => (n.trim(), Some(r)),
        None => (s, None),
    };
    if name.is_empty() {
        return Err(format!("missing name in `{s}`"));
    }
    let mut params = BTreeMap::new();
    if let Some(rest) = rest {
        for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            if params.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(format!("parameter `{}` given twice", k.trim()));
            }
        }
    }
    Ok((name.to_string(), params))
}
