use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::Sample;

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses `client_id,label,f0,...,f{d-1}` rows. Clients keep the order of
/// their first row; the label universe is `0..=max label` unless
/// `num_classes` is given, in which case larger labels are rejected.
pub fn read_csv<R: Read>(reader: R, num_classes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_error(1, e.to_string()))?,
        None => return Err(parse_error(1, "missing header")),
    };
    if header.len() < 3 || &header[0] != "client_id" || &header[1] != "label" {
        return Err(parse_error(1, "header must start with client_id,label and name at least one feature"));
    }
    for (k, name) in header.iter().skip(2).enumerate() {
        if name != format!("f{k}") {
            return Err(parse_error(1, format!("expected feature column f{k}, found {name:?}")));
        }
    }
    let dim = header.len() - 2;

    let mut clients: Vec<ClientData> = Vec::new();
    let mut max_label = 0usize;
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 2 {
            return Err(parse_error(line, format!("expected {} fields, found {}", dim + 2, record.len())));
        }
        let id = record[0].trim();
        if id.is_empty() {
            return Err(parse_error(line, "empty client_id"));
        }
        let label: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_error(line, format!("label {:?} is not a non-negative integer", &record[1])))?;
        if let Some(c) = num_classes {
            if label >= c {
                return Err(parse_error(line, format!("unknown label {label} (expected < {c})")));
            }
        }
        let features = record
            .iter()
            .skip(2)
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_error(line, format!("feature {f:?} is not a finite decimal")))
            })
            .collect::<Result<Vec<f64>>>()?;
        max_label = max_label.max(label);
        let sample = Sample::new(features, label);
        match clients.iter_mut().find(|c| c.id == id) {
            Some(c) => c.samples.push(sample),
            None => clients.push(ClientData { id: id.to_string(), samples: vec![sample] }),
        }
    }
    if clients.is_empty() {
        return Err(parse_error(1, "no data rows"));
    }
    Dataset::new(dim, num_classes.unwrap_or(max_label + 1), clients)
}

pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    read_csv(File::open(path)?, num_classes)
}

/// Writes the dataset in the format [`read_csv`] accepts. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["client_id".to_string(), "label".to_string()];
    header.extend((0..dataset.feature_dim).map(|k| format!("f{k}")));
    w.write_record(&header).map_err(|e| Error::Io(e.into()))?;
    for c in &dataset.clients {
        for s in &c.samples {
            let mut row = vec![c.id.clone(), s.label.to_string()];
            row.extend(s.features.iter().map(|x| format!("{x:?}")));
            w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv(dataset, File::create(path)?)
}
