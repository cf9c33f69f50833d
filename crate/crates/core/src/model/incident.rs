use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

use super::{Icd9Code, MULTI_VALUE_SEPARATOR};
use crate::error::{Error, Result};

/// ICD9 families recorded for news subjects whose incident details could be coded.
pub const OBSERVED_PREFIXES: [&str; 42] = [
    "437", "444", "508", "518", "562", "569", "800", "801", "802", "803", "804", "805", "808", "818", "824", "827",
    "829", "861", "864", "873", "884", "900", "910", "920", "923", "942", "943", "944", "945", "946", "947", "959",
    "V58", "E81", "E82", "E88", "E89", "E92", "E95", "E96", "E97", "E98",
];

fn normalize_incident(kind: &str) -> String {
    kind.split(|c: char| c.is_whitespace() || c == '-' || c == '_')
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Configurable incident vocabulary: incident type → ICD9 families.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidentMap {
    map: BTreeMap<String, BTreeSet<Icd9Code>>,
}

impl Default for IncidentMap {
    fn default() -> Self {
        let mut map = IncidentMap::empty();
        map.insert("motor_vehicle", ["E81", "E82"]);
        map.insert("assault", ["E96"]);
        map
    }
}

impl IncidentMap {
    pub fn empty() -> Self {
        IncidentMap { map: BTreeMap::new() }
    }

    /// Panics if a prefix is not a valid ICD9 code shape; meant for literals.
    pub fn insert<'a>(&mut self, kind: &str, prefixes: impl IntoIterator<Item = &'a str>) {
        let set = self.map.entry(normalize_incident(kind)).or_default();
        set.extend(
            prefixes
                .into_iter()
                .map(|p| Icd9Code::parse(p).expect("valid ICD9 prefix")),
        );
    }

    /// Loads an `incident_type,prefixes` CSV; entries extend the defaults.
    pub fn from_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let (ki, pi) = (col("incident_type")?, col("prefixes")?);
        let mut map = IncidentMap::default();
        for row in rdr.records() {
            let row = row?;
            let prefixes = row
                .get(pi)
                .unwrap_or("")
                .split(MULTI_VALUE_SEPARATOR)
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| {
                    let code = Icd9Code::parse(p)?;
                    if code.len() != Icd9Code::MIN_LEN {
                        return Err(Error::invalid("incident prefix", p, "must have exactly 3 characters"));
                    }
                    Ok(code)
                })
                .collect::<Result<BTreeSet<_>>>()?;
            map.map
                .entry(normalize_incident(row.get(ki).unwrap_or("")))
                .or_default()
                .extend(prefixes);
        }
        Ok(map)
    }

    /// Mapped families; unknown incident types map to the empty set.
    pub fn prefixes(&self, kind: &str) -> BTreeSet<Icd9Code> {
        self.map.get(&normalize_incident(kind)).cloned().unwrap_or_default()
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

pub fn incident_to_prefixes(kind: &str, mapping: &IncidentMap) -> BTreeSet<Icd9Code> {
    mapping.prefixes(kind)
}
