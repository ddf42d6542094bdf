use super::{run_with_data, DataBundle, ExperimentConfig};
use crate::error::{Error, Result};

/// Ordered `(dotted key, candidate values)` pairs; the first key varies slowest.
pub type GridSpace = Vec<(String, Vec<toml::Value>)>;

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub assignment: Vec<(String, toml::Value)>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: ExperimentConfig,
    pub best_index: usize,
    pub rows: Vec<GridRow>,
}

pub const MAX_GRID_POINTS: usize = 256;

/// Sets `key` (dotted, e.g. `train.local_epochs`) on a copy of `cfg`.
pub fn apply_override(cfg: &ExperimentConfig, key: &str, value: &toml::Value) -> Result<ExperimentConfig> {
    let mut root = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config("empty grid key".into()))?;
    let mut node = &mut root;
    for part in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("grid key '{key}' crosses a non-table value")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("grid key '{key}' crosses a non-table value")))?
        .insert(leaf.to_string(), value.clone());
    let out: ExperimentConfig = root
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("grid key '{key}': {e}")))?;
    out.validate()?;
    Ok(out)
}

fn points(space: &GridSpace) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for (_, values) in space {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..values.len()).map(move |i| {
                    let mut p = prefix.clone();
                    p.push(i);
                    p
                })
            })
            .collect();
    }
    out
}

/// Evaluates every grid point with `score` and keeps the first best.
pub fn grid_search_with(
    space: &GridSpace,
    base: &ExperimentConfig,
    mut score: impl FnMut(&ExperimentConfig) -> Result<f64>,
) -> Result<GridResult> {
    if space.is_empty() || space.iter().any(|(_, v)| v.is_empty()) {
        return Err(Error::Config("grid space is empty".into()));
    }
    let total: usize = space.iter().map(|(_, v)| v.len()).product();
    if total > MAX_GRID_POINTS {
        return Err(Error::Config(format!(
            "grid has {total} points; the limit is {MAX_GRID_POINTS}"
        )));
    }
    let mut rows = Vec::with_capacity(total);
    let mut best: Option<(usize, ExperimentConfig, f64)> = None;
    for (i, point) in points(space).iter().enumerate() {
        let mut cfg = base.clone();
        let mut assignment = Vec::with_capacity(space.len());
        for ((key, values), &j) in space.iter().zip(point) {
            cfg = apply_override(&cfg, key, &values[j])?;
            assignment.push((key.clone(), values[j].clone()));
        }
        let accuracy = score(&cfg)?;
        log::info!("grid point {i}: {assignment:?} -> {accuracy:.4}");
        if best.as_ref().is_none_or(|b| accuracy > b.2) {
            best = Some((i, cfg, accuracy));
        }
        rows.push(GridRow { assignment, accuracy });
    }
    let (best_index, best, _) = best.expect("non-empty grid");
    Ok(GridResult { best, best_index, rows })
}

/// Grid search on final test accuracy with the base config's seed.
pub fn run_grid_search(space: &GridSpace, base: &ExperimentConfig, data: &DataBundle) -> Result<GridResult> {
    grid_search_with(space, base, |cfg| Ok(run_with_data(cfg, data)?.final_accuracy()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use toml::Value;

    fn space(entries: &[(&str, Vec<Value>)]) -> GridSpace {
        entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn override_sets_nested_keys() {
        let cfg = apply_override(&ExperimentConfig::default(), "train.local_epochs", &Value::Integer(4)).unwrap();
        assert_eq!(cfg.train_spec().local_epochs, 4);
        let cfg = apply_override(&cfg, "attack.kind", &Value::String("mpaf".into())).unwrap();
        assert_eq!(cfg.attack.kind, crate::threat::AttackKind::Mpaf);
        assert!(apply_override(&cfg, "nonsense", &Value::Integer(1)).is_err());
    }

    #[test]
    fn single_point_is_best() {
        let s = space(&[("rounds", vec![Value::Integer(3)])]);
        let r = grid_search_with(&s, &ExperimentConfig::default(), |_| Ok(0.5)).unwrap();
        assert_eq!(r.best.rounds, 3);
        assert_eq!(r.rows.len(), 1);
    }

    #[test]
    fn ties_keep_declaration_order() {
        let s = space(&[("rounds", vec![Value::Integer(4), Value::Integer(4), Value::Integer(2)])]);
        let r = grid_search_with(&s, &ExperimentConfig::default(), |c| Ok(c.rounds as f64)).unwrap();
        assert_eq!(r.best_index, 0);
    }

    #[test]
    fn cartesian_order_first_key_slowest() {
        let s = space(&[
            ("rounds", vec![Value::Integer(1), Value::Integer(2)]),
            ("seed", vec![Value::Integer(5), Value::Integer(6)]),
        ]);
        let mut seen = Vec::new();
        grid_search_with(&s, &ExperimentConfig::default(), |c| {
            seen.push((c.rounds, c.seed));
            Ok(0.0)
        })
        .unwrap();
        assert_eq!(seen, vec![(1, 5), (1, 6), (2, 5), (2, 6)]);
    }

    #[test]
    fn empty_space_is_config_error() {
        assert!(grid_search_with(&vec![], &ExperimentConfig::default(), |_| Ok(0.0))
            .unwrap_err()
            .is_config());
    }
}
