use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use super::{HospitalCode, MULTI_VALUE_SEPARATOR};
use crate::error::{Error, Result};

/// Lower-cases, trims and collapses internal whitespace runs to one space.
pub fn normalize_description(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Code → description dictionary with a normalized reverse lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeDictionary {
    entries: BTreeMap<String, String>,
    reverse: BTreeMap<String, BTreeSet<String>>,
}

impl CodeDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces an entry, keeping the reverse index exact.
    pub fn insert(&mut self, code: impl Into<String>, description: impl Into<String>) {
        let code = code.into().trim().to_string();
        let description = description.into();
        if let Some(old) = self.entries.insert(code.clone(), description.clone()) {
            let key = normalize_description(&old);
            if let Some(codes) = self.reverse.get_mut(&key) {
                codes.remove(&code);
                if codes.is_empty() {
                    self.reverse.remove(&key);
                }
            }
        }
        self.reverse
            .entry(normalize_description(&description))
            .or_default()
            .insert(code);
    }

    /// Loads a `code,description` CSV.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (ci, di) = (col("code")?, col("description")?);
        let mut dict = CodeDictionary::new();
        for row in rdr.records() {
            let row = row?;
            let code = row.get(ci).unwrap_or("");
            if code.is_empty() {
                continue;
            }
            dict.insert(code, row.get(di).unwrap_or(""));
        }
        Ok(dict)
    }

    pub fn describe(&self, code: &str) -> Option<&str> {
        self.entries.get(code.trim()).map(String::as_str)
    }

    /// Codes whose description normalizes to the same text as `description`.
    pub fn codes_for(&self, description: &str) -> Option<&BTreeSet<String>> {
        self.reverse.get(&normalize_description(description))
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Regional aliases that stand for several hospitals ("Tri-Cities hospital").
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HospitalGroups {
    groups: BTreeMap<String, BTreeSet<HospitalCode>>,
}

impl HospitalGroups {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, alias: &str, codes: impl IntoIterator<Item = HospitalCode>) {
        self.groups
            .entry(normalize_description(alias))
            .or_default()
            .extend(codes);
    }

    /// Loads an `alias,codes` CSV with semicolon-separated codes.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (ai, ci) = (col("alias")?, col("codes")?);
        let mut groups = HospitalGroups::new();
        for row in rdr.records() {
            let row = row?;
            let codes = row
                .get(ci)
                .unwrap_or("")
                .split(MULTI_VALUE_SEPARATOR)
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(HospitalCode::parse)
                .collect::<Result<Vec<_>>>()?;
            groups.insert(row.get(ai).unwrap_or(""), codes);
        }
        Ok(groups)
    }

    pub fn get(&self, alias: &str) -> Option<&BTreeSet<HospitalCode>> {
        self.groups.get(&normalize_description(alias))
    }
}

/// Resolves a hospital name as written in a news report to dictionary codes.
///
/// An exact normalized description hit wins; otherwise a group alias; otherwise the
/// empty set, which means "unresolvable". Several codes sharing one description are
/// all returned.
pub fn resolve_hospital(name: &str, dictionary: &CodeDictionary, groups: &HospitalGroups) -> BTreeSet<HospitalCode> {
    if let Some(codes) = dictionary.codes_for(name) {
        let resolved: BTreeSet<_> = codes.iter().filter_map(|c| HospitalCode::parse(c).ok()).collect();
        if !resolved.is_empty() {
            return resolved;
        }
    }
    groups.get(name).cloned().unwrap_or_default()
}
