//! CSV ingestion. The expected shape is a header `stratum,treated,outcome`
//! followed by one row per unit; rows may appear grouped by stratum or
//! interleaved (grouping is inferred from the stratum key, strata ordered by
//! first appearance). Unit order within a stratum is the file order.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{Design, StratifiedDataset, Stratum};
use crate::{Error, Result};

pub fn ingest_csv(path: &Path, design: Design) -> Result<StratifiedDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?;

    {
        let headers = reader.headers().map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        let expected = ["stratum", "treated", "outcome"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::Csv {
                line: 1,
                message: format!(
                    "header must be exactly `stratum,treated,outcome`, got `{}`",
                    got.join(",")
                ),
            });
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<bool>, Vec<f64>)> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e
                .position()
                .map(|p| p.line() as usize)
                .unwrap_or_default(),
            message: e.to_string(),
        })?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        if record.len() != 3 {
            return Err(Error::Csv {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let stratum_key = record[0].to_string();
        if stratum_key.is_empty() {
            return Err(Error::Csv {
                line,
                message: "empty stratum key".to_string(),
            });
        }
        let treated = match &record[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Csv {
                    line,
                    message: format!("treated must be 0 or 1, got {other:?}"),
                })
            }
        };
        let outcome: f64 = record[2].parse().map_err(|_| Error::Csv {
            line,
            message: format!("could not parse outcome {:?}", &record[2]),
        })?;
        let entry = groups.entry(stratum_key.clone()).or_insert_with(|| {
            order.push(stratum_key.clone());
            (Vec::new(), Vec::new())
        });
        entry.0.push(treated);
        entry.1.push(outcome);
    }

    if order.is_empty() {
        return Err(Error::Csv {
            line: 1,
            message: "empty dataset".to_string(),
        });
    }

    let strata = order
        .into_iter()
        .map(|key| {
            let (assignments, outcomes) = groups.remove(&key).expect("key recorded");
            Stratum::new(assignments, outcomes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StratifiedDataset::new(strata, design))
}
