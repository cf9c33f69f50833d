//! Delimited-text ingestion and emission for hospital and external datasets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::Serialize;

use super::dictionary::{resolve_hospital, CodeDictionary, HospitalGroups};
use super::{
    Charges, ExternalRecord, Gender, HospitalCode, HospitalRecord, Icd9Code, IncidentMap, Zip, MULTI_VALUE_SEPARATOR,
};
use crate::error::{Error, Result};

pub const HOSPITAL_COLUMNS: [&str; 14] = [
    "record_id",
    "hospital",
    "admit_type",
    "length_of_stay",
    "discharge_year",
    "discharge_month",
    "age_years",
    "age_months",
    "gender",
    "zip",
    "diagnoses",
    "procedures",
    "payers",
    "charges",
];

const HOSPITAL_OPTIONAL: [&str; 4] = ["admit_type", "procedures", "payers", "charges"];

pub const EXTERNAL_COLUMNS: [&str; 10] = [
    "ext_id",
    "name",
    "gender",
    "age_years",
    "incident_date",
    "zip_candidates",
    "hospital_candidates",
    "diagnosis_prefixes",
    "dob",
    "source",
];

/// Optional extra external column naming an incident type; used to fill blank
/// `diagnosis_prefixes` cells through an [`IncidentMap`].
pub const INCIDENT_TYPE_COLUMN: &str = "incident_type";

/// Optional extra external column of hospital names as a story gives them; resolved
/// to codes through a [`CodeDictionary`] and [`HospitalGroups`].
pub const HOSPITAL_NAMES_COLUMN: &str = "hospital_names";

/// Lookup tables applied while reading external records.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExternalContext<'a> {
    pub incidents: Option<&'a IncidentMap>,
    pub dictionary: Option<&'a CodeDictionary>,
    pub groups: Option<&'a HospitalGroups>,
}

/// Maps canonical field names to the header names used by a particular file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    columns: BTreeMap<String, String>,
}

impl Schema {
    pub fn hospital() -> Self {
        Self::identity(&HOSPITAL_COLUMNS)
    }

    pub fn external() -> Self {
        let mut schema = Self::identity(&EXTERNAL_COLUMNS);
        schema
            .columns
            .insert(INCIDENT_TYPE_COLUMN.into(), INCIDENT_TYPE_COLUMN.into());
        schema
            .columns
            .insert(HOSPITAL_NAMES_COLUMN.into(), HOSPITAL_NAMES_COLUMN.into());
        schema
    }

    fn identity(fields: &[&str]) -> Self {
        Schema {
            columns: fields.iter().map(|f| (f.to_string(), f.to_string())).collect(),
        }
    }

    /// Reads `field` from the column headed `header` instead of its canonical name.
    pub fn rename(mut self, field: &str, header: &str) -> Self {
        self.columns.insert(field.to_string(), header.to_string());
        self
    }

    fn header_for<'a>(&'a self, field: &'a str) -> &'a str {
        self.columns.get(field).map(String::as_str).unwrap_or(field)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    /// 1-based line number in the input (the header is line 1).
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub rows_read: usize,
    pub accepted: usize,
    pub errors: Vec<RowError>,
}

impl ParseReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

struct Columns {
    index: BTreeMap<&'static str, usize>,
}

impl Columns {
    fn resolve(
        headers: &csv::StringRecord,
        schema: &Schema,
        fields: &[&'static str],
        optional: &[&'static str],
    ) -> Result<Self> {
        let mut index = BTreeMap::new();
        for &field in fields {
            let header = schema.header_for(field);
            match headers.iter().position(|h| h.trim() == header) {
                Some(i) => {
                    index.insert(field, i);
                }
                None if optional.contains(&field) => {}
                None => return Err(Error::MissingColumn(header.to_string())),
            }
        }
        Ok(Columns { index })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, field: &str) -> &'r str {
        self.index
            .get(field)
            .and_then(|&i| row.get(i))
            .map(str::trim)
            .unwrap_or("")
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(input)
}

fn split_multi(cell: &str) -> impl Iterator<Item = &str> {
    cell.split(MULTI_VALUE_SEPARATOR)
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

fn parse_num<T: FromStr>(cell: &str, what: &str) -> std::result::Result<T, String> {
    cell.parse()
        .map_err(|_| format!("{what}: `{cell}` is not a valid non-negative integer"))
}

fn parse_date(cell: &str, what: &str) -> std::result::Result<NaiveDate, String> {
    NaiveDate::parse_from_str(cell, "%Y-%m-%d").map_err(|_| format!("{what}: `{cell}` is not an ISO 8601 date"))
}

fn line_of(row: &csv::StringRecord) -> u64 {
    row.position().map(|p| p.line()).unwrap_or(0)
}

/// Parses a header-bearing hospital CSV.
///
/// Malformed rows are skipped and listed in the report; a missing required column or a
/// duplicate `record_id` aborts the whole parse.
pub fn parse_hospital_dataset<R: Read>(input: R, schema: &Schema) -> Result<(Vec<HospitalRecord>, ParseReport)> {
    let mut rdr = reader(input);
    let cols = Columns::resolve(rdr.headers()?, schema, &HOSPITAL_COLUMNS, &HOSPITAL_OPTIONAL)?;
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                report.rows_read += 1;
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.errors.push(RowError {
                    row: line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        report.rows_read += 1;
        let line = line_of(&row);
        match hospital_from_row(&cols, &row) {
            Ok(rec) => {
                if !seen.insert(rec.record_id.clone()) {
                    return Err(Error::DuplicateId {
                        id: rec.record_id,
                        row: line,
                    });
                }
                records.push(rec);
            }
            Err(reason) => report.errors.push(RowError { row: line, reason }),
        }
    }
    report.accepted = records.len();
    Ok((records, report))
}

fn hospital_from_row(cols: &Columns, row: &csv::StringRecord) -> std::result::Result<HospitalRecord, String> {
    let get = |f| cols.get(row, f);
    let record_id = get("record_id").to_string();
    if record_id.is_empty() {
        return Err("record_id is blank".into());
    }
    let diagnoses = split_multi(get("diagnoses"))
        .map(|c| Icd9Code::parse(c).map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let charges = match get("charges") {
        "" => None,
        c => Some(Charges::parse(c).map_err(|e| e.to_string())?),
    };
    let rec = HospitalRecord {
        record_id,
        hospital: HospitalCode::parse(get("hospital")).map_err(|e| e.to_string())?,
        admit_type: get("admit_type").to_string(),
        length_of_stay: parse_num(get("length_of_stay"), "length_of_stay")?,
        discharge_year: parse_num(get("discharge_year"), "discharge_year")?,
        discharge_month: parse_num(get("discharge_month"), "discharge_month")?,
        age_years: parse_num(get("age_years"), "age_years")?,
        age_months: parse_num(get("age_months"), "age_months")?,
        gender: get("gender").parse().map_err(|e: Error| e.to_string())?,
        zip: Zip::parse(get("zip")).map_err(|e| e.to_string())?,
        diagnoses,
        procedures: split_multi(get("procedures")).map(String::from).collect(),
        payers: split_multi(get("payers")).map(String::from).collect(),
        charges,
    };
    rec.validate()?;
    Ok(rec)
}

/// Parses a header-bearing external-knowledge CSV. Blank cells become absent fields.
pub fn parse_external_dataset<R: Read>(input: R, schema: &Schema) -> Result<(Vec<ExternalRecord>, ParseReport)> {
    parse_external_dataset_with(input, schema, None)
}

/// Like [`parse_external_dataset`]; rows with a blank `diagnosis_prefixes` cell and an
/// `incident_type` column get their prefixes from `incidents`.
pub fn parse_external_dataset_with<R: Read>(
    input: R,
    schema: &Schema,
    incidents: Option<&IncidentMap>,
) -> Result<(Vec<ExternalRecord>, ParseReport)> {
    let ctx = ExternalContext {
        incidents,
        ..ExternalContext::default()
    };
    parse_external_dataset_in(input, schema, &ctx)
}

/// Like [`parse_external_dataset_with`], also resolving a `hospital_names` column
/// (`;`-separated) into hospital candidates. A name that resolves to nothing is a row
/// error.
pub fn parse_external_dataset_in<R: Read>(
    input: R,
    schema: &Schema,
    ctx: &ExternalContext<'_>,
) -> Result<(Vec<ExternalRecord>, ParseReport)> {
    let mut rdr = reader(input);
    let mut fields: Vec<&'static str> = EXTERNAL_COLUMNS.to_vec();
    fields.push(INCIDENT_TYPE_COLUMN);
    fields.push(HOSPITAL_NAMES_COLUMN);
    let optional: Vec<&'static str> = fields[1..].to_vec();
    let cols = Columns::resolve(rdr.headers()?, schema, &fields, &optional)?;
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        report.rows_read += 1;
        let row = match row {
            Ok(row) => row,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                report.errors.push(RowError {
                    row: line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = line_of(&row);
        match external_from_row(&cols, &row, ctx) {
            Ok(rec) => {
                if !seen.insert(rec.ext_id.clone()) {
                    return Err(Error::DuplicateId {
                        id: rec.ext_id,
                        row: line,
                    });
                }
                records.push(rec);
            }
            Err(reason) => report.errors.push(RowError { row: line, reason }),
        }
    }
    report.accepted = records.len();
    Ok((records, report))
}

fn external_from_row(
    cols: &Columns,
    row: &csv::StringRecord,
    ctx: &ExternalContext<'_>,
) -> std::result::Result<ExternalRecord, String> {
    let get = |f| cols.get(row, f);
    let opt = |f| Some(get(f)).filter(|s: &&str| !s.is_empty());

    let mut rec = ExternalRecord::new(get("ext_id"));
    if rec.ext_id.is_empty() {
        return Err("ext_id is blank".into());
    }
    rec.name = opt("name").map(String::from);
    rec.gender = opt("gender")
        .map(|g| g.parse::<Gender>().map_err(|e| e.to_string()))
        .transpose()?;
    rec.age_years = opt("age_years").map(|a| parse_num(a, "age_years")).transpose()?;
    rec.incident_date = opt("incident_date")
        .map(|d| parse_date(d, "incident_date"))
        .transpose()?;
    rec.dob = opt("dob").map(|d| parse_date(d, "dob")).transpose()?;
    rec.zip_candidates = split_multi(get("zip_candidates"))
        .map(|z| Zip::parse(z).map_err(|e| e.to_string()))
        .collect::<std::result::Result<BTreeSet<_>, _>>()?;
    rec.hospital_candidates = split_multi(get("hospital_candidates"))
        .map(|h| HospitalCode::parse(h).map_err(|e| e.to_string()))
        .collect::<std::result::Result<BTreeSet<_>, _>>()?;
    rec.diagnosis_prefixes = split_multi(get("diagnosis_prefixes"))
        .map(|p| Icd9Code::parse(p).map_err(|e| e.to_string()))
        .collect::<std::result::Result<BTreeSet<_>, _>>()?;
    if rec.diagnosis_prefixes.is_empty() {
        if let (Some(map), Some(kind)) = (ctx.incidents, opt(INCIDENT_TYPE_COLUMN)) {
            rec.diagnosis_prefixes = map.prefixes(kind);
        }
    }
    let names: Vec<&str> = split_multi(get(HOSPITAL_NAMES_COLUMN)).collect();
    if !names.is_empty() {
        let empty_dict = CodeDictionary::new();
        let empty_groups = HospitalGroups::new();
        let dict = ctx.dictionary.unwrap_or(&empty_dict);
        let groups = ctx.groups.unwrap_or(&empty_groups);
        for name in names {
            let codes = resolve_hospital(name, dict, groups);
            if codes.is_empty() {
                return Err(format!("hospital name `{name}` matches no dictionary entry or group"));
            }
            rec.hospital_candidates.extend(codes);
        }
    }
    rec.source = get("source").to_string();
    rec.validate()?;
    Ok(rec)
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(&MULTI_VALUE_SEPARATOR.to_string())
}

/// Writes records in the canonical hospital CSV layout.
pub fn write_hospital_dataset<W: Write>(records: &[HospitalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HOSPITAL_COLUMNS)?;
    for r in records {
        w.write_record([
            r.record_id.clone(),
            r.hospital.to_string(),
            r.admit_type.clone(),
            r.length_of_stay.to_string(),
            r.discharge_year.to_string(),
            r.discharge_month.to_string(),
            r.age_years.to_string(),
            r.age_months.to_string(),
            r.gender.to_string(),
            r.zip.to_string(),
            join(&r.diagnoses),
            join(&r.procedures),
            join(&r.payers),
            r.charges.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes records in the canonical external CSV layout.
pub fn write_external_dataset<W: Write>(records: &[ExternalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EXTERNAL_COLUMNS)?;
    let date = |d: Option<NaiveDate>| d.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.ext_id.clone(),
            r.name.clone().unwrap_or_default(),
            r.gender.map(|g| g.to_string()).unwrap_or_default(),
            r.age_years.map(|a| a.to_string()).unwrap_or_default(),
            date(r.incident_date),
            join(&r.zip_candidates),
            join(&r.hospital_candidates),
            join(&r.diagnosis_prefixes),
            date(r.dob),
            r.source.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
