//! Loading TOML configs and applying `--set key=value` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cleanbench::bench::BenchmarkConfig;
use toml::Value;

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string (`--set name=desk` is the string `desk`).
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Applies one `a.b.c=value` override. Numeric segments index arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override `{assignment}` has an empty key segment");
    }
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            Value::Table(t) => {
                if last {
                    t.insert(key.to_string(), parse_value(raw.trim()));
                    return Ok(());
                }
                t.entry(key.to_string()).or_insert_with(|| Value::Table(Default::default()))
            }
            Value::Array(a) => {
                let idx: usize = key.parse().with_context(|| format!("`{key}` indexes an array in `{path}`"))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| anyhow!("index {idx} out of range ({len} items) in `{path}`"))?;
                if last {
                    *slot = parse_value(raw.trim());
                    return Ok(());
                }
                slot
            }
            _ => bail!("`{path}`: cannot descend into a scalar at `{key}`"),
        };
    }
    Ok(())
}

/// Raw config text plus the parsed, override-applied benchmark config.
pub struct LoadedConfig {
    pub text: String,
    pub config: BenchmarkConfig,
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: Value = toml::from_str::<toml::Table>(&text)
        .map(Value::Table)
        .with_context(|| format!("parsing {}", path.display()))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut config: BenchmarkConfig = value.try_into().with_context(|| format!("invalid config {}", path.display()))?;
    if let Some(base) = path.parent() {
        config.resolve_paths(base);
    }
    Ok(LoadedConfig { text, config })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_nested_and_typed() {
        let mut v: Value = Value::Table(toml::from_str("repeats = 3\n[sweep]\nerror_rates = [0.1]\n[[datasets]]\nname = 'a'\n").unwrap());
        apply_override(&mut v, "repeats=5").unwrap();
        apply_override(&mut v, "sweep.error_rates=[0.2, 0.4]").unwrap();
        apply_override(&mut v, "datasets.0.name=renamed").unwrap();
        apply_override(&mut v, "new.deep.key=true").unwrap();
        assert_eq!(v["repeats"].as_integer(), Some(5));
        assert_eq!(v["sweep"]["error_rates"].as_array().unwrap().len(), 2);
        assert_eq!(v["datasets"][0]["name"].as_str(), Some("renamed"));
        assert_eq!(v["new"]["deep"]["key"].as_bool(), Some(true));
        assert!(apply_override(&mut v, "repeats.x=1").is_err());
        assert!(apply_override(&mut v, "datasets.4.name=x").is_err());
        assert!(apply_override(&mut v, "noequals").is_err());
    }
}
