//! Generalization policies, k-anonymity statistics and sensitive-diagnosis flags.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{icd9_prefix_match, Gender, HospitalRecord, Zip};

/// A 3-digit ZIP area is published only if strictly more people than this live in it.
pub const SAFE_HARBOR_POPULATION_THRESHOLD: u64 = 20_000;

/// Population per 3-digit ZIP prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZipPopulationTable {
    populations: BTreeMap<String, u64>,
}

impl ZipPopulationTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, zip3: &str, population: u64) -> Result<()> {
        let zip3 = zip3.trim();
        if zip3.len() != 3 || !zip3.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::invalid("zip3", zip3, "expected exactly 3 digits"));
        }
        self.populations.insert(zip3.to_string(), population);
        Ok(())
    }

    /// Population of a prefix; unknown prefixes count as empty.
    pub fn population(&self, zip3: &str) -> u64 {
        self.populations.get(zip3).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.populations.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Reads a `zip3,population` CSV.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (zi, pi) = (col("zip3")?, col("population")?);
        let mut table = ZipPopulationTable::new();
        for row in rdr.records() {
            let row = row?;
            let pop_raw = row.get(pi).unwrap_or("");
            let pop = pop_raw
                .parse()
                .map_err(|_| Error::invalid("population", pop_raw, "expected a non-negative integer"))?;
            table.insert(row.get(zi).unwrap_or(""), pop)?;
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["zip3", "population"])?;
        for (zip3, pop) in self.iter() {
            w.write_record([zip3.to_string(), pop.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// HIPAA Safe Harbor style generalization of one record.
///
/// The ZIP keeps its first three digits (`98851` → `98800`) when that area's population
/// exceeds 20,000 and becomes `00000` otherwise; the discharge month is erased (0),
/// leaving the year; the age in months drops to whole years (`age_years * 12`).
/// Applying it twice changes nothing further.
pub fn safe_harbor(rec: &HospitalRecord, population: &ZipPopulationTable) -> HospitalRecord {
    let mut out = rec.clone();
    out.zip = if population.population(rec.zip.zip3()) > SAFE_HARBOR_POPULATION_THRESHOLD {
        rec.zip.generalized()
    } else {
        Zip::SUPPRESSED
    };
    out.discharge_month = 0;
    out.age_months = rec.age_years * 12;
    out
}

/// ICD9 prefixes whose presence makes a record sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivePrefixes {
    prefixes: Vec<String>,
}

/// Shipped list: HIV (042, V08), syphilis and other venereal diseases (090-099),
/// alcohol and drug psychoses (291, 292), alcohol dependence (303), drug dependence
/// (304), nondependent abuse including tobacco use disorder (305) and history of
/// tobacco use (V1582). Edit or replace it with a prefix file.
pub const DEFAULT_SENSITIVE_PREFIXES: [&str; 18] = [
    "042", "090", "091", "092", "093", "094", "095", "096", "097", "098", "099", "291", "292", "303", "304", "305",
    "V08", "V1582",
];

impl Default for SensitivePrefixes {
    fn default() -> Self {
        SensitivePrefixes {
            prefixes: DEFAULT_SENSITIVE_PREFIXES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SensitivePrefixes {
    pub fn new<I, S>(prefixes: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        for p in prefixes {
            let p = p.as_ref().trim().to_ascii_uppercase();
            crate::model::Icd9Code::parse(&p)?;
            out.push(p);
        }
        out.sort();
        out.dedup();
        Ok(SensitivePrefixes { prefixes: out })
    }

    /// One prefix per line; `#` starts a comment.
    pub fn from_reader<R: Read>(input: R) -> Result<Self> {
        let mut prefixes = Vec::new();
        for line in BufReader::new(input).lines() {
            let line = line?;
            let content = line.split('#').next().unwrap_or("").trim();
            if !content.is_empty() {
                prefixes.push(content.to_string());
            }
        }
        SensitivePrefixes::new(prefixes)
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }
}

pub fn flag_sensitive(rec: &HospitalRecord, sensitive: &SensitivePrefixes) -> bool {
    rec.diagnoses
        .iter()
        .any(|c| sensitive.prefixes.iter().any(|p| icd9_prefix_match(c, p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QiField {
    Dob,
    BirthYear,
    Gender,
    Zip,
    Zip3,
    AgeYears,
    AgeMonths,
    DischargeMonth,
}

impl QiField {
    pub const ALL: [QiField; 8] = [
        QiField::Dob,
        QiField::BirthYear,
        QiField::Gender,
        QiField::Zip,
        QiField::Zip3,
        QiField::AgeYears,
        QiField::AgeMonths,
        QiField::DischargeMonth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QiField::Dob => "dob",
            QiField::BirthYear => "birth_year",
            QiField::Gender => "gender",
            QiField::Zip => "zip",
            QiField::Zip3 => "zip3",
            QiField::AgeYears => "age_years",
            QiField::AgeMonths => "age_months",
            QiField::DischargeMonth => "discharge_month",
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.map(QiField::name).join(", ")
    }
}

impl FromStr for QiField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        QiField::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| Error::UnknownQiField(s.trim().to_string(), QiField::valid_names()))
    }
}

impl fmt::Display for QiField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered, duplicate-free, non-empty list of quasi-identifier fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuasiIdentifier(Vec<QiField>);

impl QuasiIdentifier {
    pub fn new(fields: Vec<QiField>) -> Result<Self> {
        if fields.is_empty() {
            return Err(Error::Config("quasi-identifier needs at least one field".into()));
        }
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].contains(f) {
                return Err(Error::Config(format!("quasi-identifier repeats field `{f}`")));
            }
        }
        Ok(QuasiIdentifier(fields))
    }

    pub fn fields(&self) -> &[QiField] {
        &self.0
    }
}

impl FromStr for QuasiIdentifier {
    type Err = Error;

    /// Comma- or semicolon-separated field names.
    fn from_str(s: &str) -> Result<Self> {
        let fields = s
            .split([',', ';'])
            .filter(|t| !t.trim().is_empty())
            .map(QiField::from_str)
            .collect::<Result<Vec<_>>>()?;
        QuasiIdentifier::new(fields)
    }
}

impl fmt::Display for QuasiIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|q| q.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// A record that can report quasi-identifier values. `None` means the record kind
/// does not carry that field.
pub trait QiSubject {
    fn qi_value(&self, field: QiField) -> Option<String>;
}

impl QiSubject for HospitalRecord {
    fn qi_value(&self, field: QiField) -> Option<String> {
        Some(match field {
            QiField::Dob | QiField::BirthYear => return None,
            QiField::Gender => self.gender.to_string(),
            QiField::Zip => self.zip.to_string(),
            QiField::Zip3 => self.zip.zip3().to_string(),
            QiField::AgeYears => self.age_years.to_string(),
            QiField::AgeMonths => self.age_months.to_string(),
            QiField::DischargeMonth => format!("{}-{:02}", self.discharge_year, self.discharge_month),
        })
    }
}

/// A demographic row (voter-list style): date of birth, gender and ZIP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub dob: NaiveDate,
    pub gender: Gender,
    pub zip: Zip,
}

impl PersonRecord {
    /// Reads a `dob,gender,zip` CSV; extra columns are ignored.
    pub fn read_csv<R: Read>(input: R) -> Result<Vec<PersonRecord>> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (di, gi, zi) = (col("dob")?, col("gender")?, col("zip")?);
        let mut out = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let dob_raw = row.get(di).unwrap_or("");
            out.push(PersonRecord {
                dob: NaiveDate::parse_from_str(dob_raw, "%Y-%m-%d")
                    .map_err(|_| Error::invalid("dob", dob_raw, "expected YYYY-MM-DD"))?,
                gender: row.get(gi).unwrap_or("").parse()?,
                zip: Zip::parse(row.get(zi).unwrap_or(""))?,
            });
        }
        Ok(out)
    }
}

impl QiSubject for PersonRecord {
    fn qi_value(&self, field: QiField) -> Option<String> {
        Some(match field {
            QiField::Dob => self.dob.format("%Y-%m-%d").to_string(),
            QiField::BirthYear => self.dob.year().to_string(),
            QiField::Gender => self.gender.to_string(),
            QiField::Zip => self.zip.to_string(),
            QiField::Zip3 => self.zip.zip3().to_string(),
            QiField::AgeYears | QiField::AgeMonths | QiField::DischargeMonth => return None,
        })
    }
}

fn class_sizes<T: QiSubject>(records: &[T], qi: &QuasiIdentifier) -> Result<HashMap<Vec<String>, usize>> {
    let mut classes: HashMap<Vec<String>, usize> = HashMap::new();
    for rec in records {
        let key = qi
            .fields()
            .iter()
            .map(|&f| {
                rec.qi_value(f)
                    .ok_or_else(|| Error::QiFieldUnavailable(f.name().into()))
            })
            .collect::<Result<Vec<_>>>()?;
        *classes.entry(key).or_default() += 1;
    }
    Ok(classes)
}

/// Map from equivalence-class size `k` to the number of records in classes of that
/// size. The values always sum to `records.len()`.
pub fn k_anonymity_histogram<T: QiSubject>(records: &[T], qi: &QuasiIdentifier) -> Result<BTreeMap<usize, usize>> {
    let mut hist = BTreeMap::new();
    for size in class_sizes(records, qi)?.into_values() {
        *hist.entry(size).or_default() += size;
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniquenessStats {
    pub records: usize,
    pub unique_records: usize,
    pub fraction: f64,
    pub warning: Option<String>,
}

/// Share of records alone in their equivalence class. An empty dataset gives 0 with a
/// warning.
pub fn uniqueness_fraction<T: QiSubject>(records: &[T], qi: &QuasiIdentifier) -> Result<UniquenessStats> {
    let hist = k_anonymity_histogram(records, qi)?;
    let unique = hist.get(&1).copied().unwrap_or(0);
    if records.is_empty() {
        return Ok(UniquenessStats {
            records: 0,
            unique_records: 0,
            fraction: 0.0,
            warning: Some("empty dataset; uniqueness defined as 0".into()),
        });
    }
    Ok(UniquenessStats {
        records: records.len(),
        unique_records: unique,
        fraction: unique as f64 / records.len() as f64,
        warning: None,
    })
}
