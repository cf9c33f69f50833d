use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{normalize_description, ExternalRecord, Zip, MULTI_VALUE_SEPARATOR};
use crate::temporal::age_months_at;

/// One person as a public-records lookup service reports them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicRecord {
    pub name: String,
    pub dob: NaiveDate,
    pub zip_history: BTreeSet<Zip>,
    pub age_hint: Option<u32>,
}

/// Local stand-in for a public-records service, looked up by normalized name.
#[derive(Debug, Clone, Default)]
pub struct PublicRecordsTable {
    rows: Vec<PublicRecord>,
    by_name: BTreeMap<String, Vec<usize>>,
}

pub const PUBLIC_RECORD_COLUMNS: [&str; 4] = ["name", "dob", "zip_history", "age_hint"];

impl PublicRecordsTable {
    pub fn new(rows: Vec<PublicRecord>) -> Result<Self> {
        let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            let key = normalize_description(&row.name);
            if key.is_empty() {
                return Err(Error::invalid("public record name", &row.name, "name is empty"));
            }
            by_name.entry(key).or_default().push(i);
        }
        Ok(PublicRecordsTable { rows, by_name })
    }

    pub fn rows(&self) -> &[PublicRecord] {
        &self.rows
    }

    pub fn lookup(&self, name: &str) -> impl Iterator<Item = &PublicRecord> {
        self.by_name
            .get(&normalize_description(name))
            .into_iter()
            .flatten()
            .map(|&i| &self.rows[i])
    }

    /// Reads a `name,dob,zip_history,age_hint` CSV. Any malformed row is an error.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let ni = col("name").ok_or_else(|| Error::MissingColumn("name".into()))?;
        let di = col("dob").ok_or_else(|| Error::MissingColumn("dob".into()))?;
        let zi = col("zip_history");
        let ai = col("age_hint");
        let mut rows = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let cell = |i: Option<usize>| i.and_then(|i| row.get(i)).unwrap_or("");
            let dob_raw = cell(Some(di));
            let dob = NaiveDate::parse_from_str(dob_raw, "%Y-%m-%d")
                .map_err(|_| Error::invalid("public record dob", dob_raw, "expected YYYY-MM-DD"))?;
            let zip_history = cell(zi)
                .split(MULTI_VALUE_SEPARATOR)
                .map(str::trim)
                .filter(|z| !z.is_empty())
                .map(Zip::parse)
                .collect::<Result<BTreeSet<_>>>()?;
            let age_hint = match cell(ai) {
                "" => None,
                a => Some(
                    a.parse()
                        .map_err(|_| Error::invalid("age_hint", a, "expected an integer"))?,
                ),
            };
            rows.push(PublicRecord {
                name: cell(Some(ni)).to_string(),
                dob,
                zip_history,
                age_hint,
            });
        }
        PublicRecordsTable::new(rows)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(PUBLIC_RECORD_COLUMNS)?;
        for r in &self.rows {
            let zips: Vec<&str> = r.zip_history.iter().map(Zip::as_str).collect();
            w.write_record([
                r.name.clone(),
                r.dob.format("%Y-%m-%d").to_string(),
                zips.join(&MULTI_VALUE_SEPARATOR.to_string()),
                r.age_hint.map(|a| a.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnrichmentStatus {
    /// Exactly one person matched; date of birth and ZIP history were merged in.
    Enriched,
    /// No name, or no age-consistent person of that name.
    None,
    /// Several age-consistent people share the name; nothing was merged.
    Ambiguous,
}

impl EnrichmentStatus {
    pub fn label(self) -> &'static str {
        match self {
            EnrichmentStatus::Enriched => "enriched",
            EnrichmentStatus::None => "none",
            EnrichmentStatus::Ambiguous => "ambiguous",
        }
    }
}

fn age_consistent(ext: &ExternalRecord, row: &PublicRecord) -> bool {
    let Some(age) = ext.age_years else {
        return true;
    };
    let implied = match ext.incident_date {
        Some(at) => match age_months_at(row.dob, at) {
            Ok(months) => months / 12,
            Err(_) => return false,
        },
        None => match row.age_hint {
            Some(hint) => hint,
            None => return true,
        },
    };
    implied.abs_diff(age) <= 1
}

/// Looks the subject up by exact normalized name, keeping people whose date of birth
/// puts them within a year of the reported age at the incident date. A single survivor
/// contributes its date of birth (unless one is already known) and its ZIP history.
pub fn enrich(ext: &ExternalRecord, table: &PublicRecordsTable) -> (ExternalRecord, EnrichmentStatus) {
    let Some(name) = ext.name.as_deref() else {
        return (ext.clone(), EnrichmentStatus::None);
    };
    let hits: Vec<&PublicRecord> = table.lookup(name).filter(|r| age_consistent(ext, r)).collect();
    match hits.as_slice() {
        [] => (ext.clone(), EnrichmentStatus::None),
        [row] => {
            let mut out = ext.clone();
            out.dob.get_or_insert(row.dob);
            out.zip_candidates.extend(row.zip_history.iter().copied());
            (out, EnrichmentStatus::Enriched)
        }
        _ => (ext.clone(), EnrichmentStatus::Ambiguous),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    fn boylston() -> ExternalRecord {
        let mut ext = ExternalRecord::new("n1");
        ext.name = Some("Raymond Boylston".into());
        ext.age_years = Some(61);
        ext.incident_date = Some(ymd(2011, 10, 18));
        ext
    }

    fn row(name: &str, dob: NaiveDate, zips: &[&str]) -> PublicRecord {
        PublicRecord {
            name: name.into(),
            dob,
            zip_history: zips.iter().map(|z| Zip::parse(z).unwrap()).collect(),
            age_hint: None,
        }
    }

    #[test]
    fn single_hit_merges_dob_and_zips() {
        let table = PublicRecordsTable::new(vec![
            row("Raymond  BOYLSTON", ymd(1951, 5, 10), &["98851"]),
            row("Someone Else", ymd(1950, 1, 1), &["98001"]),
        ])
        .unwrap();
        let (out, status) = enrich(&boylston(), &table);
        assert_eq!(status, EnrichmentStatus::Enriched);
        assert_eq!(out.dob, Some(ymd(1951, 5, 10)));
        assert_eq!(
            out.zip_candidates.iter().map(Zip::as_str).collect::<Vec<_>>(),
            ["98851"]
        );
    }

    #[test]
    fn missing_name_is_a_no_op() {
        let mut ext = boylston();
        ext.name = None;
        ext.zip_candidates.insert(Zip::parse("98851").unwrap());
        let table = PublicRecordsTable::new(vec![row("Raymond Boylston", ymd(1951, 5, 10), &["98001"])]).unwrap();
        let (out, status) = enrich(&ext, &table);
        assert_eq!(status, EnrichmentStatus::None);
        assert_eq!(out, ext);
    }

    #[test]
    fn two_consistent_namesakes_are_ambiguous() {
        let table = PublicRecordsTable::new(vec![
            row("Raymond Boylston", ymd(1951, 5, 10), &["98851"]),
            row("Raymond Boylston", ymd(1950, 2, 1), &["99201"]),
        ])
        .unwrap();
        let (out, status) = enrich(&boylston(), &table);
        assert_eq!(status, EnrichmentStatus::Ambiguous);
        assert_eq!(out, boylston());
    }

    #[test]
    fn age_filter_removes_namesakes() {
        // 60 at the incident is within a year of 61; a 30-year-old is not.
        let table = PublicRecordsTable::new(vec![
            row("Raymond Boylston", ymd(1951, 5, 10), &["98851"]),
            row("Raymond Boylston", ymd(1981, 5, 10), &["99201"]),
        ])
        .unwrap();
        let (out, status) = enrich(&boylston(), &table);
        assert_eq!(status, EnrichmentStatus::Enriched);
        assert_eq!(out.dob, Some(ymd(1951, 5, 10)));
    }

    #[test]
    fn csv_round_trip() {
        let table = PublicRecordsTable::new(vec![
            row("Raymond Boylston", ymd(1951, 5, 10), &["98851", "98823"]),
            PublicRecord {
                age_hint: Some(40),
                ..row("Ann Lee", ymd(1971, 1, 2), &[])
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = PublicRecordsTable::from_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows(), table.rows());
    }
}
