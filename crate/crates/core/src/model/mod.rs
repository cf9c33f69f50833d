//! Domain types, dataset parsing and hierarchical code semantics.

mod csvio;
mod dictionary;
mod icd9;
mod incident;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::DischargePeriod;

pub use csvio::{
    parse_external_dataset, parse_external_dataset_in, parse_external_dataset_with, parse_hospital_dataset,
    write_external_dataset, write_hospital_dataset, ExternalContext, ParseReport, RowError, Schema, EXTERNAL_COLUMNS,
    HOSPITAL_COLUMNS, HOSPITAL_NAMES_COLUMN, INCIDENT_TYPE_COLUMN,
};
pub use dictionary::{normalize_description, resolve_hospital, CodeDictionary, HospitalGroups};
pub use icd9::{icd9_prefix_match, Icd9Code};
pub use incident::{incident_to_prefixes, IncidentMap, OBSERVED_PREFIXES};

/// Multi-valued CSV cells separate their items with this character.
pub const MULTI_VALUE_SEPARATOR: char = ';';

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
    /// Unknown. Only hospital records carry this value.
    U,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
            Gender::U => "U",
        }
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Gender::M),
            "f" | "female" => Ok(Gender::F),
            "u" | "unknown" => Ok(Gender::U),
            _ => Err(Error::invalid("gender", s, "expected M, F or U")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A 5-digit ZIP code. Generalized data reuses the shape: `98800` for a published
/// 3-digit prefix and `00000` for a suppressed one.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Zip([u8; 5]);

impl Zip {
    pub const SUPPRESSED: Zip = Zip(*b"00000");

    pub fn parse(raw: &str) -> Result<Self> {
        let raw_trim = raw.trim();
        let bytes = raw_trim.as_bytes();
        if bytes.len() != 5 || !bytes.iter().all(u8::is_ascii_digit) {
            return Err(Error::invalid("ZIP", raw, "expected exactly 5 digits"));
        }
        let mut out = [0u8; 5];
        out.copy_from_slice(bytes);
        Ok(Zip(out))
    }

    pub fn as_str(&self) -> &str {
        // Always ASCII digits.
        std::str::from_utf8(&self.0).expect("ZIP bytes are ASCII")
    }

    pub fn zip3(&self) -> &str {
        &self.as_str()[..3]
    }

    /// The `XXX00` form used to publish only the 3-digit prefix.
    pub fn generalized(&self) -> Zip {
        let mut out = self.0;
        out[3] = b'0';
        out[4] = b'0';
        Zip(out)
    }
}

impl FromStr for Zip {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Zip::parse(s)
    }
}

impl TryFrom<String> for Zip {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Zip::parse(&s)
    }
}

impl From<Zip> for String {
    fn from(z: Zip) -> String {
        z.as_str().to_owned()
    }
}

impl fmt::Display for Zip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Zip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Zip({})", self.as_str())
    }
}

/// Hospital code from the state dictionary: digits, optionally followed by one letter
/// that distinguishes units of the same facility (`162`, `137a`).
///
/// `162` and `162a` are distinct codes; unit letters are never merged.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HospitalCode(String);

impl HospitalCode {
    pub fn parse(raw: &str) -> Result<Self> {
        let text = raw.trim();
        let digits = text.bytes().take_while(u8::is_ascii_digit).count();
        let rest = &text[digits..];
        let ok = digits > 0 && (rest.is_empty() || (rest.len() == 1 && rest.as_bytes()[0].is_ascii_alphabetic()));
        if !ok {
            return Err(Error::invalid(
                "hospital code",
                raw,
                "expected digits with an optional unit letter",
            ));
        }
        Ok(HospitalCode(text.to_ascii_lowercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for HospitalCode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HospitalCode::parse(s)
    }
}

impl TryFrom<String> for HospitalCode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        HospitalCode::parse(&s)
    }
}

impl From<HospitalCode> for String {
    fn from(c: HospitalCode) -> String {
        c.0
    }
}

impl fmt::Display for HospitalCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Non-negative currency amount, stored in cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Charges(pub u64);

impl Charges {
    pub fn parse(raw: &str) -> Result<Self> {
        let text = raw.trim().trim_start_matches('$').replace(',', "");
        let (whole, frac) = match text.split_once('.') {
            Some((w, f)) => (w, f),
            None => (text.as_str(), ""),
        };
        let digits_ok = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
        if whole.is_empty() || !digits_ok(whole) || !digits_ok(frac) || frac.len() > 2 {
            return Err(Error::invalid(
                "charges",
                raw,
                "expected a non-negative amount with at most 2 decimals",
            ));
        }
        let whole: u64 = whole
            .parse()
            .map_err(|_| Error::invalid("charges", raw, "amount out of range"))?;
        let cents: u64 = match frac.len() {
            0 => 0,
            1 => frac.parse::<u64>().unwrap_or(0) * 10,
            _ => frac.parse().unwrap_or(0),
        };
        whole
            .checked_mul(100)
            .and_then(|c| c.checked_add(cents))
            .map(Charges)
            .ok_or_else(|| Error::invalid("charges", raw, "amount out of range"))
    }
}

impl fmt::Display for Charges {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

/// One de-identified hospitalization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HospitalRecord {
    pub record_id: String,
    pub hospital: HospitalCode,
    pub admit_type: String,
    pub length_of_stay: u32,
    pub discharge_year: i32,
    /// 1-12, or 0 when generalization left only the discharge year.
    pub discharge_month: u32,
    pub age_years: u32,
    pub age_months: u32,
    pub gender: Gender,
    pub zip: Zip,
    pub diagnoses: Vec<Icd9Code>,
    pub procedures: Vec<String>,
    pub payers: Vec<String>,
    pub charges: Option<Charges>,
}

impl HospitalRecord {
    /// Checks the record-level invariants; returns the first violation.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.record_id.trim().is_empty() {
            return Err("record_id is empty".into());
        }
        if self.discharge_month > 12 {
            return Err(format!("discharge_month {} outside 1-12", self.discharge_month));
        }
        if self.age_months / 12 != self.age_years {
            return Err(format!(
                "age_months {} implies {} years, record says {}",
                self.age_months,
                self.age_months / 12,
                self.age_years
            ));
        }
        if self.diagnoses.is_empty() {
            return Err("diagnoses list is empty".into());
        }
        Ok(())
    }

    /// Generalized records keep only the discharge year.
    pub fn is_generalized(&self) -> bool {
        self.discharge_month == 0
    }

    pub fn discharge_period(&self) -> DischargePeriod {
        if self.discharge_month == 0 {
            DischargePeriod::Year(self.discharge_year)
        } else {
            DischargePeriod::Month {
                year: self.discharge_year,
                month: self.discharge_month,
            }
        }
    }
}

/// One subject described by outside knowledge such as a news report.
///
/// Blank fields are absent and never take part in comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalRecord {
    pub ext_id: String,
    pub name: Option<String>,
    pub gender: Option<Gender>,
    pub age_years: Option<u32>,
    pub incident_date: Option<NaiveDate>,
    pub zip_candidates: BTreeSet<Zip>,
    pub hospital_candidates: BTreeSet<HospitalCode>,
    /// 3-character ICD9 families.
    pub diagnosis_prefixes: BTreeSet<Icd9Code>,
    pub dob: Option<NaiveDate>,
    pub source: String,
}

impl ExternalRecord {
    pub fn new(ext_id: impl Into<String>) -> Self {
        ExternalRecord {
            ext_id: ext_id.into(),
            name: None,
            gender: None,
            age_years: None,
            incident_date: None,
            zip_candidates: BTreeSet::new(),
            hospital_candidates: BTreeSet::new(),
            diagnosis_prefixes: BTreeSet::new(),
            dob: None,
            source: String::new(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.ext_id.trim().is_empty() {
            return Err("ext_id is empty".into());
        }
        if self.name.is_none() && self.zip_candidates.is_empty() {
            return Err("record has neither a name nor a ZIP candidate".into());
        }
        if self.gender == Some(Gender::U) {
            return Err("external gender must be M or F".into());
        }
        if let Some(p) = self.diagnosis_prefixes.iter().find(|p| p.len() != Icd9Code::MIN_LEN) {
            return Err(format!("diagnosis prefix `{p}` must have exactly 3 characters"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zip_shapes() {
        let z = Zip::parse("98851").unwrap();
        assert_eq!(z.zip3(), "988");
        assert_eq!(z.generalized().as_str(), "98800");
        assert!(Zip::parse("9885").is_err());
        assert!(Zip::parse("9885a").is_err());
    }

    #[test]
    fn hospital_code_shapes() {
        assert_eq!(HospitalCode::parse("162").unwrap().as_str(), "162");
        assert_eq!(HospitalCode::parse("137A").unwrap().as_str(), "137a");
        assert_ne!(
            HospitalCode::parse("162").unwrap(),
            HospitalCode::parse("162a").unwrap()
        );
        assert!(HospitalCode::parse("").is_err());
        assert!(HospitalCode::parse("a162").is_err());
        assert!(HospitalCode::parse("162ab").is_err());
    }

    #[test]
    fn charges_round_trip() {
        let c = Charges::parse("71708.47").unwrap();
        assert_eq!(c.0, 7_170_847);
        assert_eq!(c.to_string(), "71708.47");
        assert_eq!(Charges::parse("$1,200.5").unwrap().to_string(), "1200.50");
        assert!(Charges::parse("-3").is_err());
        assert!(Charges::parse("1.234").is_err());
    }

    #[test]
    fn gender_parsing() {
        assert_eq!("male".parse::<Gender>().unwrap(), Gender::M);
        assert_eq!("F".parse::<Gender>().unwrap(), Gender::F);
        assert!("x".parse::<Gender>().is_err());
    }
}
