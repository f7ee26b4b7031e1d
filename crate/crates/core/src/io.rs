//! External file contracts.
//!
//! * Observations: CSV with header `patient_id,hour,feature,value[,cohort]`.
//! * Reference model: JSON document with a mandatory `schema_version`.
//! * Scores: CSV with header `patient_id,hour,comprehensive,features_used,`
//!   followed by one column per reference feature; skipped features are
//!   written as empty fields.
//!
//! Floats are written in shortest round-trip form, so parsing a written file
//! reproduces every value exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::density::{Bandwidth, DensityOnGrid, Grid};
use crate::detector::ScoreRecord;
use crate::error::{Error, Result};
use crate::observations::{CohortLabel, Observation, ObservationTable};
use crate::reference::{BuildMetadata, FeatureReference, ReferenceModel, SCHEMA_VERSION};
use crate::registry::FeatureRegistry;

const OBSERVATION_COLUMNS: [&str; 4] = ["patient_id", "hour", "feature", "value"];
const SCORE_COLUMNS: [&str; 4] = ["patient_id", "hour", "comprehensive", "features_used"];

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e.to_string()),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn parse_float(field: &str, what: &str, line: u64) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("{what} `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("{what} `{field}` is not finite"),
        });
    }
    Ok(v)
}

/// Reads an observation CSV, rejecting any feature unknown to `registry`.
pub fn parse_observations<R: Read>(reader: R, registry: &FeatureRegistry) -> Result<ObservationTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let names: Vec<&str> = header.iter().collect();
    let has_cohort = match names.as_slice() {
        [a, b, c, d] if [*a, *b, *c, *d] == OBSERVATION_COLUMNS => false,
        [a, b, c, d, "cohort"] if [*a, *b, *c, *d] == OBSERVATION_COLUMNS => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!(
                    "expected header `patient_id,hour,feature,value[,cohort]`, got `{}`",
                    names.join(",")
                ),
            })
        }
    };

    let mut table = ObservationTable::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let expected = if has_cohort { 4..=5 } else { 4..=4 };
        if !expected.contains(&record.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", names.len(), record.len()),
            });
        }
        let patient_id = &record[0];
        if patient_id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty patient_id".into(),
            });
        }
        let hour = parse_float(&record[1], "hour", line)?;
        if hour < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("negative hour {hour}"),
            });
        }
        let feature = &record[2];
        if !registry.contains(feature) {
            return Err(Error::UnknownFeature(feature.to_string()));
        }
        let value = parse_float(&record[3], "value", line)?;
        table.push(Observation {
            patient_id: patient_id.to_string(),
            hour,
            feature_id: feature.to_string(),
            value,
        })?;
        if let Some(label) = record.get(4) {
            let label: CohortLabel = label.parse().expect("infallible");
            table
                .set_label(patient_id, label)
                .map_err(|e| Error::Parse {
                    line,
                    message: e.to_string(),
                })?;
        }
    }
    Ok(table)
}

/// Writes observations with a `cohort` column.
pub fn write_observations<W: Write>(table: &ObservationTable, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(OBSERVATION_COLUMNS.iter().chain(&["cohort"]))
        .map_err(csv_error)?;
    for r in table.rows() {
        wtr.write_record([
            r.patient_id.as_str(),
            &r.hour.to_string(),
            &r.feature_id,
            &r.value.to_string(),
            table.label(&r.patient_id).as_str(),
        ])
        .map_err(csv_error)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureDocument {
    feature_id: String,
    grid: Grid,
    bandwidth: f64,
    n_samples: usize,
    sample_mean: f64,
    sample_sd: f64,
    density: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct ModelDocument<'a> {
    schema_version: u32,
    metadata: &'a BuildMetadata,
    features: Vec<FeatureDocument>,
}

/// Serializes a reference model to its JSON document.
pub fn save_reference<W: Write>(model: &ReferenceModel, writer: W) -> Result<()> {
    let doc = ModelDocument {
        schema_version: SCHEMA_VERSION,
        metadata: model.metadata(),
        features: model
            .features()
            .iter()
            .map(|f| FeatureDocument {
                feature_id: f.feature_id.clone(),
                grid: *f.grid(),
                bandwidth: f.bandwidth.value(),
                n_samples: f.n_samples,
                sample_mean: f.sample_mean,
                sample_sd: f.sample_sd,
                density: f.density.values().to_vec(),
            })
            .collect(),
    };
    serde_json::to_writer_pretty(writer, &doc).map_err(|e| Error::Io(e.to_string()))
}

pub fn reference_to_string(model: &ReferenceModel) -> Result<String> {
    let mut buf = Vec::new();
    save_reference(model, &mut buf)?;
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}

fn model_error(feature: Option<&str>, message: impl Into<String>) -> Error {
    Error::ModelParse {
        feature: feature.map(str::to_string),
        message: message.into(),
    }
}

fn feature_from_value(value: Value) -> Result<FeatureReference> {
    let name = value
        .get("feature_id")
        .and_then(Value::as_str)
        .map(str::to_string);
    let fail = |msg: String| model_error(name.as_deref(), msg);
    let doc: FeatureDocument = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
    doc.grid.validate().map_err(|e| fail(e.to_string()))?;
    if doc.density.len() != doc.grid.n_points() {
        return Err(fail(format!(
            "density has {} values but the grid has {} points",
            doc.density.len(),
            doc.grid.n_points()
        )));
    }
    let density = DensityOnGrid::from_normalized(doc.grid, doc.density).map_err(|e| fail(e.to_string()))?;
    let bandwidth = Bandwidth::new(doc.bandwidth).map_err(|e| fail(e.to_string()))?;
    Ok(FeatureReference {
        feature_id: doc.feature_id,
        density,
        bandwidth,
        n_samples: doc.n_samples,
        sample_mean: doc.sample_mean,
        sample_sd: doc.sample_sd,
    })
}

/// Parses and validates a reference model document.
pub fn load_reference<R: Read>(reader: R) -> Result<ReferenceModel> {
    let mut root: Value = serde_json::from_reader(reader).map_err(|e| model_error(None, e.to_string()))?;
    let version = match root.get("schema_version") {
        None => return Err(Error::IncompatibleModel("document has no schema_version".into())),
        Some(v) => v
            .as_u64()
            .ok_or_else(|| Error::IncompatibleModel(format!("schema_version `{v}` is not an integer")))?,
    };
    if version != u64::from(SCHEMA_VERSION) {
        return Err(Error::IncompatibleModel(format!(
            "schema_version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    let metadata: BuildMetadata = serde_json::from_value(root.get_mut("metadata").map(Value::take).unwrap_or(Value::Null))
        .map_err(|e| model_error(None, format!("metadata: {e}")))?;
    let features = match root.get_mut("features").map(Value::take) {
        Some(Value::Array(items)) => items,
        _ => return Err(model_error(None, "`features` must be an array")),
    };
    let features = features
        .into_iter()
        .map(feature_from_value)
        .collect::<Result<Vec<_>>>()?;
    ReferenceModel::new(features, metadata).map_err(|e| model_error(None, e.to_string()))
}

pub fn reference_from_str(text: &str) -> Result<ReferenceModel> {
    load_reference(text.as_bytes())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes score records sorted by patient then hour, one column per feature.
pub fn write_scores<W: Write>(records: &[ScoreRecord], features: &[String], writer: W) -> Result<()> {
    let mut sorted: Vec<&ScoreRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        a.patient_id
            .cmp(&b.patient_id)
            .then(a.hour_index.cmp(&b.hour_index))
    });
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(SCORE_COLUMNS.iter().copied().chain(features.iter().map(String::as_str)))
        .map_err(csv_error)?;
    for r in sorted {
        write_score_row(&mut wtr, r, features)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Header line of the score CSV, without a trailing newline.
pub fn score_header(features: &[String]) -> String {
    SCORE_COLUMNS
        .iter()
        .copied()
        .chain(features.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(",")
}

/// One score CSV line, without a trailing newline.
pub fn score_line(record: &ScoreRecord, features: &[String]) -> Result<String> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    write_score_row(&mut wtr, record, features)?;
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    let mut line = String::from_utf8(bytes).expect("csv is utf-8");
    line.pop();
    Ok(line)
}

fn write_score_row<W: Write>(wtr: &mut csv::Writer<W>, r: &ScoreRecord, features: &[String]) -> Result<()> {
    let mut row = vec![
        r.patient_id.clone(),
        r.hour_index.to_string(),
        r.comprehensive.to_string(),
        r.features_used.to_string(),
    ];
    row.extend(features.iter().map(|f| fmt_opt(r.per_feature.get(f).map(|v| v.bits()))));
    wtr.write_record(&row).map_err(csv_error)
}

/// One parsed line of a score CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub patient_id: String,
    pub hour: usize,
    pub comprehensive: f64,
    pub features_used: usize,
    pub per_feature: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub features: Vec<String>,
    pub rows: Vec<ScoreRow>,
}

/// Reads a score CSV written by [`write_scores`].
pub fn parse_scores<R: Read>(reader: R) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < SCORE_COLUMNS.len() || header.iter().take(4).ne(SCORE_COLUMNS.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected score header starting with `{}`", SCORE_COLUMNS.join(",")),
        });
    }
    let features: Vec<String> = header.iter().skip(4).map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let int = |i: usize, what: &str| -> Result<usize> {
            record[i].parse().map_err(|_| Error::Parse {
                line,
                message: format!("{what} `{}` is not a non-negative integer", &record[i]),
            })
        };
        let per_feature = (4..record.len())
            .map(|i| match &record[i] {
                "" => Ok(None),
                s => parse_float(s, &header[i], line).map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ScoreRow {
            patient_id: record[0].to_string(),
            hour: int(1, "hour")?,
            comprehensive: parse_float(&record[2], "comprehensive", line)?,
            features_used: int(3, "features_used")?,
            per_feature,
        });
    }
    Ok(ScoreTable { features, rows })
}

/// Reads cohort labels from any CSV with `patient_id` and `cohort` columns,
/// such as an observation file. Conflicting labels are an error.
pub fn read_labels<R: Read>(reader: R) -> Result<std::collections::BTreeMap<String, CohortLabel>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let column = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing `{name}` column"),
        })
    };
    let (pid, cohort) = (column("patient_id")?, column("cohort")?);
    let mut table = ObservationTable::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let (Some(p), Some(c)) = (record.get(pid), record.get(cohort)) else {
            return Err(Error::Parse {
                line,
                message: "row is missing the patient_id or cohort field".into(),
            });
        };
        table
            .set_label(p, c.parse().expect("infallible"))
            .map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
    }
    Ok(table.labels().clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::{DivergenceValue, FeatureScoreMap};

    fn registry() -> FeatureRegistry {
        FeatureRegistry::default()
    }

    #[test]
    fn parses_labelled_row() {
        let text = "patient_id,hour,feature,value,cohort\np1,3.5,heart_rate,88,control\n";
        let t = parse_observations(text.as_bytes(), &registry()).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows()[0].hour, 3.5);
        assert_eq!(t.label("p1"), CohortLabel::Control);
    }

    #[test]
    fn rejects_nan_with_line_number() {
        let text = "patient_id,hour,feature,value\np1,1,heart_rate,80\np1,3.5,heart_rate,NaN\n";
        match parse_observations(text.as_bytes(), &registry()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let t = parse_observations("patient_id,hour,feature,value\n".as_bytes(), &registry()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn rejects_unknown_feature_and_bad_rows() {
        let text = "patient_id,hour,feature,value\np1,1,lactate,2\n";
        assert_eq!(
            parse_observations(text.as_bytes(), &registry()),
            Err(Error::UnknownFeature("lactate".into()))
        );
        let text = "patient_id,hour,feature,value\np1,1,heart_rate\n";
        assert!(matches!(
            parse_observations(text.as_bytes(), &registry()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "patient_id,hour,feature,value\np1,-2,heart_rate,1\n";
        assert!(matches!(
            parse_observations(text.as_bytes(), &registry()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_observations("pid,t,f,v\n".as_bytes(), &registry()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    fn record(p: &str, hour: usize, scores: &[(&str, f64)]) -> ScoreRecord {
        let per_feature: FeatureScoreMap = scores
            .iter()
            .map(|(f, v)| (f.to_string(), DivergenceValue::new(*v).unwrap()))
            .collect();
        ScoreRecord {
            patient_id: p.into(),
            hour_index: hour,
            comprehensive: scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64,
            features_used: per_feature.features_used(),
            per_feature,
            features_skipped: vec![],
        }
    }

    #[test]
    fn score_csv_shape_and_order() {
        let features = vec!["a".to_string(), "b".to_string()];
        let records = vec![
            record("p2", 1, &[("a", 0.5), ("b", 0.25)]),
            record("p1", 2, &[("a", 0.1)]),
            record("p1", 1, &[("a", 0.2), ("b", 0.4)]),
        ];
        let mut out = Vec::new();
        write_scores(&records, &features, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "patient_id,hour,comprehensive,features_used,a,b");
        assert!(lines[1].starts_with("p1,1,"));
        assert_eq!(lines[2], "p1,2,0.1,1,0.1,");
        assert!(lines[3].starts_with("p2,1,0.375,2,"));

        let parsed = parse_scores(text.as_bytes()).unwrap();
        assert_eq!(parsed.features, features);
        assert_eq!(parsed.rows[1].per_feature, vec![Some(0.1), None]);
        assert_eq!(score_line(&records[1], &features).unwrap(), "p1,2,0.1,1,0.1,");
        assert_eq!(score_header(&features), lines[0]);
    }

    #[test]
    fn labels_from_observation_csv() {
        let text = "patient_id,hour,feature,value,cohort\np1,1,x,1,control\np2,1,x,1,treatment\np3,1,x,1,\n";
        let labels = read_labels(text.as_bytes()).unwrap();
        assert_eq!(labels["p1"], CohortLabel::Control);
        assert_eq!(labels["p2"], CohortLabel::Treatment);
        assert_eq!(labels["p3"], CohortLabel::Unlabeled);
        let bad = "patient_id,cohort\np1,control\np1,treatment\n";
        assert!(matches!(read_labels(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
    }
}
