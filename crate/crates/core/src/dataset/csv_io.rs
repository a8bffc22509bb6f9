use std::path::Path;

use super::{ClusteredDataset, Observation};
use crate::error::{Error, Result};

/// Column mapping for [`load_csv`].
///
/// Empty `x` / `z` lists mean "every column named `x<k>` / `z<k>`", in
/// ascending `k`. Coordinates are read from `coords` when given, otherwise
/// from `coord_x`/`coord_y` if both are present.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub id: String,
    pub location: String,
    pub sublocation: String,
    pub selected: String,
    pub outcome: String,
    pub x: Vec<String>,
    pub z: Vec<String>,
    pub coords: Option<(String, String)>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "obs_id".into(),
            location: "location".into(),
            sublocation: "sublocation".into(),
            selected: "selected".into(),
            outcome: "y2".into(),
            x: Vec::new(),
            z: Vec::new(),
            coords: None,
        }
    }
}

fn numbered_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<String> {
    let mut found: Vec<(u32, String)> = headers
        .iter()
        .filter_map(|h| {
            let k = h.strip_prefix(prefix)?.parse::<u32>().ok()?;
            Some((k, h.to_string()))
        })
        .collect();
    found.sort();
    found.into_iter().map(|(_, h)| h).collect()
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

fn parse_f64(field: &str, col: &str, row: usize) -> Result<f64> {
    field.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Row {
        row,
        message: format!("column `{col}`: cannot parse `{field}` as a finite number"),
    })
}

/// Reads and validates a dataset. Row numbers in errors are file line numbers
/// (the header is line 1).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ClusteredDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();

    let x_names = if schema.x.is_empty() {
        numbered_columns(&headers, "x")
    } else {
        schema.x.clone()
    };
    let z_names = if schema.z.is_empty() {
        numbered_columns(&headers, "z")
    } else {
        schema.z.clone()
    };
    if z_names.is_empty() {
        return Err(Error::MissingColumn("z1 (selection covariates)".into()));
    }
    let coord_names = match &schema.coords {
        Some(c) => Some(c.clone()),
        None if headers.iter().any(|h| h == "coord_x") && headers.iter().any(|h| h == "coord_y") => {
            Some(("coord_x".to_string(), "coord_y".to_string()))
        }
        None => None,
    };

    let id_col = column(&headers, &schema.id)?;
    let loc_col = column(&headers, &schema.location)?;
    let sub_col = column(&headers, &schema.sublocation)?;
    let sel_col = column(&headers, &schema.selected)?;
    let y_col = column(&headers, &schema.outcome)?;
    let x_cols = x_names.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;
    let z_cols = z_names.iter().map(|n| column(&headers, n)).collect::<Result<Vec<_>>>()?;
    let coord_cols = match &coord_names {
        Some((a, b)) => Some((column(&headers, a)?, column(&headers, b)?)),
        None => None,
    };

    let mut observations = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |c: usize| record.get(c).unwrap_or("");

        let selected = match field(sel_col) {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Row {
                    row,
                    message: format!("column `{}` must be 0 or 1, got `{other}`", schema.selected),
                })
            }
        };
        let outcome = match field(y_col) {
            "" => None,
            s => Some(parse_f64(s, &schema.outcome, row)?),
        };
        match (selected, outcome.is_some()) {
            (false, true) => {
                return Err(Error::Row {
                    row,
                    message: "non-selected row carries an outcome".into(),
                })
            }
            (true, false) => {
                return Err(Error::Row {
                    row,
                    message: "selected row has an empty outcome".into(),
                })
            }
            _ => {}
        }
        let obs_id = field(id_col).to_string();
        if obs_id.is_empty() {
            return Err(Error::Row { row, message: "empty obs_id".into() });
        }
        if !seen.insert(obs_id.clone()) {
            return Err(Error::Row {
                row,
                message: format!("duplicate obs_id `{obs_id}`"),
            });
        }
        let x = x_cols
            .iter()
            .zip(&x_names)
            .map(|(&c, n)| parse_f64(field(c), n, row))
            .collect::<Result<Vec<_>>>()?;
        let z = z_cols
            .iter()
            .zip(&z_names)
            .map(|(&c, n)| parse_f64(field(c), n, row))
            .collect::<Result<Vec<_>>>()?;
        let coords = match (coord_cols, &coord_names) {
            (Some((a, b)), Some((na, nb))) => match (field(a), field(b)) {
                ("", "") => None,
                (fa, fb) => Some((parse_f64(fa, na, row)?, parse_f64(fb, nb, row)?)),
            },
            _ => None,
        };
        observations.push(Observation {
            obs_id,
            location_id: field(loc_col).to_string(),
            sublocation_id: field(sub_col).to_string(),
            selected,
            outcome,
            x,
            z,
            coords,
        });
    }

    let ds = ClusteredDataset::new(observations)?.with_names(x_names, z_names)?;
    for w in ds.warnings() {
        log::warn!("{}: {w}", path.display());
    }
    Ok(ds)
}

/// Writes the dataset with canonical column names.
pub fn write_csv(ds: &ClusteredDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    let has_coords = ds.observations().iter().any(|o| o.coords.is_some());

    let mut header = vec!["obs_id".to_string(), "location".into(), "sublocation".into(), "selected".into(), "y2".into()];
    header.extend((1..=ds.p()).map(|k| format!("x{k}")));
    header.extend((1..=ds.q()).map(|k| format!("z{k}")));
    if has_coords {
        header.extend(["coord_x".to_string(), "coord_y".into()]);
    }
    writer.write_record(&header)?;

    for o in ds.observations() {
        let mut rec = vec![
            o.obs_id.clone(),
            o.location_id.clone(),
            o.sublocation_id.clone(),
            if o.selected { "1" } else { "0" }.to_string(),
            o.outcome.map(|y| y.to_string()).unwrap_or_default(),
        ];
        rec.extend(o.x.iter().map(f64::to_string));
        rec.extend(o.z.iter().map(f64::to_string));
        if has_coords {
            match o.coords {
                Some((a, b)) => rec.extend([a.to_string(), b.to_string()]),
                None => rec.extend([String::new(), String::new()]),
            }
        }
        writer.write_record(&rec)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a two-column CSV of obs_id pairs (header row required).
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() < 2 || record[0].is_empty() || record[1].is_empty() {
            return Err(Error::Row {
                row,
                message: "adjacency rows need two obs_id fields".into(),
            });
        }
        edges.push((record[0].to_string(), record[1].to_string()));
    }
    Ok(edges)
}
