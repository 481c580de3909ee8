//! Family × ratio accuracy table.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde_json::Value;

use csfall::sensing::Family;

use crate::ReportArgs;

/// One table cell taken from an eval or history JSON file.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub family: Family,
    pub ratio: f64,
    pub accuracy: f64,
    /// Eval results take precedence over history files for the same cell.
    pub from_eval: bool,
}

pub fn parse_cell(v: &Value) -> Option<Cell> {
    let family: Family = serde_json::from_value(v.get("family")?.clone()).ok()?;
    let ratio = v.get("ratio")?.as_f64()?;
    if let Some(acc) = v.get("accuracy").and_then(Value::as_f64) {
        return Some(Cell {
            family,
            ratio,
            accuracy: acc,
            from_eval: true,
        });
    }
    // history file: validation accuracy at the best epoch
    let best = v.get("best_epoch")?.as_u64()? as usize;
    let epochs = v.get("epochs")?.as_array()?;
    let acc = epochs.get(best.checked_sub(1)?)?.get("val_accuracy")?.as_f64()?;
    Some(Cell {
        family,
        ratio,
        accuracy: acc,
        from_eval: false,
    })
}

/// CSV text: one row per family (the five randomized families always, identity
/// if present), one column per ratio; missing cells are empty.
pub fn render(cells: &[Cell], ratios: &[usize]) -> anyhow::Result<String> {
    let mut cols: Vec<f64> = ratios.iter().map(|&r| r as f64).collect();
    for c in cells {
        if !cols.contains(&c.ratio) {
            cols.push(c.ratio);
        }
    }
    cols.sort_by(f64::total_cmp);
    let mut table: BTreeMap<(Family, u64), &Cell> = BTreeMap::new();
    for c in cells {
        let key = (c.family, c.ratio.to_bits());
        match table.get(&key) {
            Some(prev) if prev.from_eval && !c.from_eval => {}
            _ => {
                table.insert(key, c);
            }
        }
    }
    let mut families: Vec<Family> = Family::RANDOMIZED.to_vec();
    if cells.iter().any(|c| c.family == Family::Identity) {
        families.push(Family::Identity);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["family".to_string()];
    header.extend(cols.iter().map(|r| r.to_string()));
    w.write_record(&header)?;
    for f in families {
        let mut row = vec![f.name().to_string()];
        for r in &cols {
            row.push(table.get(&(f, r.to_bits())).map(|c| c.accuracy.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn report(out: &Path, a: ReportArgs, quiet: bool) -> anyhow::Result<()> {
    let mut cells = Vec::new();
    for p in &a.inputs {
        let text = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        let v: Value = serde_json::from_slice(&text)
            .map_err(|e| csfall::Error::Format(format!("{}: {e}", p.display())))?;
        match parse_cell(&v) {
            Some(c) => cells.push(c),
            None => {
                if !quiet {
                    eprintln!("skipping {}: no family/ratio/accuracy", p.display());
                }
            }
        }
    }
    let csv = render(&cells, &a.ratios)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(&a.file);
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    if !quiet {
        println!("{}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(family: Family, ratio: f64, accuracy: f64) -> Cell {
        Cell {
            family,
            ratio,
            accuracy,
            from_eval: true,
        }
    }

    fn parse(csv_text: &str) -> Vec<Vec<String>> {
        csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(csv_text.as_bytes())
            .records()
            .map(|r| r.unwrap().iter().map(str::to_string).collect())
            .collect()
    }

    #[test]
    fn full_grid_is_twenty_cells() {
        let mut cells = Vec::new();
        for (i, f) in Family::RANDOMIZED.into_iter().enumerate() {
            for (j, r) in [4.0, 16.0, 32.0, 64.0].into_iter().enumerate() {
                cells.push(cell(f, r, 0.5 + 0.01 * (i * 4 + j) as f64 + 1e-9));
            }
        }
        let rows = parse(&render(&cells, &[4, 16, 32, 64]).unwrap());
        assert_eq!(rows[0], vec!["family", "4", "16", "32", "64"]);
        assert_eq!(rows.len(), 6);
        let mut count = 0;
        for (i, f) in Family::RANDOMIZED.into_iter().enumerate() {
            assert_eq!(rows[i + 1][0], f.name());
            for j in 0..4 {
                let v: f64 = rows[i + 1][j + 1].parse().unwrap();
                assert_eq!(v, 0.5 + 0.01 * (i * 4 + j) as f64 + 1e-9);
                count += 1;
            }
        }
        assert_eq!(count, 20);
    }

    #[test]
    fn missing_cells_are_empty() {
        let rows = parse(&render(&[cell(Family::Smm, 16.0, 0.9)], &[4, 16, 32, 64]).unwrap());
        assert_eq!(rows[3], vec!["smm", "", "0.9", "", ""]);
        assert!(rows[1][1..].iter().all(String::is_empty));
    }

    #[test]
    fn extra_ratio_and_identity_columns() {
        let rows = parse(&render(&[cell(Family::Identity, 1.0, 1.0)], &[4]).unwrap());
        assert_eq!(rows[0], vec!["family", "1", "4"]);
        assert_eq!(rows.last().unwrap(), &vec!["identity".to_string(), "1".into(), "".into()]);
    }

    #[test]
    fn history_cells_and_precedence() {
        let hist = serde_json::json!({
            "family": "lsmm", "ratio": 4.0, "best_epoch": 2,
            "epochs": [{"val_accuracy": 0.1}, {"val_accuracy": 0.7}, {"val_accuracy": 0.6}]
        });
        let h = parse_cell(&hist).unwrap();
        assert_eq!(h.accuracy, 0.7);
        assert!(!h.from_eval);
        let e = parse_cell(&serde_json::json!({"family": "lsmm", "ratio": 4.0, "accuracy": 0.8})).unwrap();
        let rows = parse(&render(&[e.clone(), h.clone()], &[4]).unwrap());
        assert_eq!(rows[4][1], "0.8");
        let rows = parse(&render(&[h, e], &[4]).unwrap());
        assert_eq!(rows[4][1], "0.8");
        assert!(parse_cell(&serde_json::json!({"ratio": 4})).is_none());
    }
}
