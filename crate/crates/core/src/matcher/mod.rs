//! Exact-unique matching of external records against hospital records.
//!
//! Six predicates compare an external record with a hospital record. A record matches
//! when every predicate whose external side is known passes; a match is accepted only
//! when it is unique. When nothing matches, up to two droppable fields are suppressed
//! and the search is repeated.

mod audit;
mod enrich;
mod index;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{icd9_prefix_match, ExternalRecord, HospitalRecord, Zip};
use crate::temporal::{age_months_range, AdmitWindow};

pub use audit::{run_audit, AuditConfig, AuditReport, CaseResult, RelaxationHistogram, Tallies};
pub use enrich::{enrich, EnrichmentStatus, PublicRecord, PublicRecordsTable};
pub use index::MatchIndex;

/// The six comparable fields, in the order relaxation tries to drop them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Zip,
    Age,
    Hospital,
    AdmitWindow,
    Diagnosis,
    Gender,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::Zip,
        Field::Age,
        Field::Hospital,
        Field::AdmitWindow,
        Field::Diagnosis,
        Field::Gender,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Zip => "zip",
            Field::Age => "age",
            Field::Hospital => "hospital",
            Field::AdmitWindow => "admit_window",
            Field::Diagnosis => "diagnosis",
            Field::Gender => "gender",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Field::ALL
            .into_iter()
            .find(|f| f.name() == key || (key == "admit_month" && *f == Field::AdmitWindow))
            .ok_or_else(|| {
                let valid: Vec<_> = Field::ALL.iter().map(|f| f.name()).collect();
                Error::invalid("field", s, format!("expected one of {}", valid.join(", ")))
            })
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A subset of [`Field`], iterated in canonical order.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FieldSet(u8);

impl FieldSet {
    pub const EMPTY: FieldSet = FieldSet(0);
    pub const ALL: FieldSet = FieldSet(0b11_1111);

    pub fn of(fields: impl IntoIterator<Item = Field>) -> Self {
        fields.into_iter().fold(FieldSet::EMPTY, |s, f| s.with(f))
    }

    /// Fields suppressed by default: the ones observed to be wrong in news reports.
    pub fn default_droppable() -> Self {
        FieldSet::of([Field::Zip, Field::Age, Field::Hospital])
    }

    pub fn contains(self, f: Field) -> bool {
        self.0 & f.bit() != 0
    }

    pub fn with(self, f: Field) -> Self {
        FieldSet(self.0 | f.bit())
    }

    pub fn without(self, f: Field) -> Self {
        FieldSet(self.0 & !f.bit())
    }

    pub fn union(self, other: FieldSet) -> Self {
        FieldSet(self.0 | other.0)
    }

    pub fn intersection(self, other: FieldSet) -> Self {
        FieldSet(self.0 & other.0)
    }

    pub fn difference(self, other: FieldSet) -> Self {
        FieldSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: FieldSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Field> {
        Field::ALL.into_iter().filter(move |f| self.contains(*f))
    }

    /// All subsets of exactly `k` fields, in lexicographic canonical order.
    pub fn combinations(self, k: usize) -> Vec<FieldSet> {
        let fields: Vec<Field> = self.iter().collect();
        let mut out = Vec::new();
        let mut pick = Vec::with_capacity(k);
        fn rec(fields: &[Field], start: usize, k: usize, pick: &mut Vec<Field>, out: &mut Vec<FieldSet>) {
            if pick.len() == k {
                out.push(FieldSet::of(pick.iter().copied()));
                return;
            }
            for i in start..fields.len() {
                pick.push(fields[i]);
                rec(fields, i + 1, k, pick, out);
                pick.pop();
            }
        }
        rec(&fields, 0, k, &mut pick, &mut out);
        out
    }
}

impl fmt::Display for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(Field::name).collect();
        f.write_str(&names.join(";"))
    }
}

impl fmt::Debug for FieldSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self)
    }
}

impl FromStr for FieldSet {
    type Err = Error;

    /// Accepts names separated by `,`, `;` or `+`; the empty string is the empty set.
    fn from_str(s: &str) -> Result<Self> {
        s.split([',', ';', '+'])
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(Field::from_str)
            .collect::<Result<Vec<_>>>()
            .map(FieldSet::of)
    }
}

impl Serialize for FieldSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter().map(Field::name))
    }
}

impl<'de> Deserialize<'de> for FieldSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        names
            .iter()
            .map(|n| n.parse::<Field>())
            .collect::<Result<Vec<_>>>()
            .map(FieldSet::of)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The external side is blank, so the field is not compared.
    Absent,
}

impl Verdict {
    fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Per-field verdicts for one (external, hospital) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldVerdicts([Verdict; 6]);

impl FieldVerdicts {
    pub fn get(&self, f: Field) -> Verdict {
        self.0[f as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Field, Verdict)> + '_ {
        Field::ALL.into_iter().map(|f| (f, self.get(f)))
    }

    pub fn with(&self, v: Verdict) -> FieldSet {
        FieldSet::of(self.iter().filter(|(_, x)| *x == v).map(|(f, _)| f))
    }
}

/// Fields whose external side carries a value.
pub fn present_fields(ext: &ExternalRecord) -> FieldSet {
    let mut set = FieldSet::EMPTY;
    if ext.gender.is_some() {
        set = set.with(Field::Gender);
    }
    if ext.dob.is_some() || ext.age_years.is_some() {
        set = set.with(Field::Age);
    }
    if !ext.zip_candidates.is_empty() {
        set = set.with(Field::Zip);
    }
    if !ext.hospital_candidates.is_empty() {
        set = set.with(Field::Hospital);
    }
    if ext.incident_date.is_some() {
        set = set.with(Field::AdmitWindow);
    }
    if !ext.diagnosis_prefixes.is_empty() {
        set = set.with(Field::Diagnosis);
    }
    set
}

/// Evaluates predicates for one external record against many hospital records.
pub(crate) struct Probe<'e> {
    ext: &'e ExternalRecord,
    slack_days: u32,
    present: FieldSet,
}

/// Order in which predicates are short-circuited: fields stored inline in the record
/// first, then those behind a heap pointer, which cost a cache miss on large datasets.
const CHECK_ORDER: [Field; 6] = [
    Field::Gender,
    Field::Zip,
    Field::AdmitWindow,
    Field::Hospital,
    Field::Diagnosis,
    Field::Age,
];

impl<'e> Probe<'e> {
    pub(crate) fn new(ext: &'e ExternalRecord, slack_days: u32) -> Self {
        Probe {
            ext,
            slack_days,
            present: present_fields(ext),
        }
    }

    pub(crate) fn present(&self) -> FieldSet {
        self.present
    }

    fn window(rec: &HospitalRecord) -> Option<AdmitWindow> {
        rec.discharge_period().admit_window(rec.length_of_stay)
    }

    /// Pass/fail for a field the external record carries.
    fn check(&self, field: Field, rec: &HospitalRecord) -> bool {
        let ext = self.ext;
        match field {
            Field::Gender => ext.gender == Some(rec.gender),
            Field::Hospital => ext.hospital_candidates.contains(&rec.hospital),
            Field::Zip => zip_compatible(&ext.zip_candidates, rec),
            Field::Diagnosis => rec
                .diagnoses
                .iter()
                .any(|c| ext.diagnosis_prefixes.iter().any(|p| icd9_prefix_match(c, p.as_str()))),
            // Admission within [first - stay, last - stay] widened by the slack, i.e. the
            // incident day plus the stay falls in the discharge period give or take the slack.
            Field::AdmitWindow => match (ext.incident_date, rec.discharge_period().day_numbers()) {
                (Some(d), Some((first, last))) => {
                    let shifted = i64::from(d.num_days_from_ce()) + i64::from(rec.length_of_stay);
                    let slack = i64::from(self.slack_days);
                    first - slack <= shifted && shifted <= last + slack
                }
                _ => false,
            },
            Field::Age => match (ext.dob, ext.age_years) {
                (Some(dob), _) => {
                    let Some((lo, hi)) = Self::window(rec).and_then(|w| age_months_range(dob, &w)) else {
                        return false;
                    };
                    if rec.is_generalized() {
                        (lo / 12..=hi / 12).contains(&rec.age_years)
                    } else {
                        (lo..=hi).contains(&rec.age_months)
                    }
                }
                (None, Some(years)) => rec.age_years == years,
                (None, None) => false,
            },
        }
    }

    pub(crate) fn verdict(&self, field: Field, rec: &HospitalRecord) -> Verdict {
        if !self.present.contains(field) {
            return Verdict::Absent;
        }
        Verdict::from_bool(self.check(field, rec))
    }

    pub(crate) fn verdicts(&self, rec: &HospitalRecord) -> FieldVerdicts {
        FieldVerdicts(Field::ALL.map(|f| self.verdict(f, rec)))
    }

    /// True iff every present field in `fields` passes. Callers exclude the vacuous case.
    pub(crate) fn passes(&self, fields: FieldSet, rec: &HospitalRecord) -> bool {
        let active = fields.intersection(self.present);
        CHECK_ORDER
            .iter()
            .filter(|f| active.contains(**f))
            .all(|&f| self.check(f, rec))
    }
}

fn zip_compatible(candidates: &BTreeSet<Zip>, rec: &HospitalRecord) -> bool {
    if !rec.is_generalized() {
        return candidates.contains(&rec.zip);
    }
    rec.zip == Zip::SUPPRESSED || candidates.iter().any(|c| c.zip3() == rec.zip.zip3())
}

/// Per-field verdicts of `ext` against `rec`.
///
/// Generalized records (discharge month erased) are compared at their coarser
/// precision: a whole-year admission window, a 3-digit ZIP that also accepts any
/// suppressed `00000`, and an age in years.
pub fn evaluate_predicates(ext: &ExternalRecord, rec: &HospitalRecord, slack_days: u32) -> FieldVerdicts {
    Probe::new(ext, slack_days).verdicts(rec)
}

/// Hospital records sorted by `record_id`, ids unique.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<HospitalRecord>,
}

impl Dataset {
    pub fn new(mut records: Vec<HospitalRecord>) -> Result<Self> {
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        if let Some(w) = records.windows(2).find(|w| w[0].record_id == w[1].record_id) {
            return Err(Error::DuplicateId {
                id: w[0].record_id.clone(),
                row: 0,
            });
        }
        Ok(Dataset { records })
    }

    pub fn records(&self) -> &[HospitalRecord] {
        &self.records
    }

    pub fn get(&self, index: u32) -> &HospitalRecord {
        &self.records[index as usize]
    }

    pub fn find(&self, record_id: &str) -> Option<&HospitalRecord> {
        self.records
            .binary_search_by(|r| r.record_id.as_str().cmp(record_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<HospitalRecord> {
        self.records
    }
}

/// Something that answers exact-match queries over a [`Dataset`].
pub trait ExactMatcher: Sync {
    fn dataset(&self) -> &Dataset;

    /// Indices into [`ExactMatcher::dataset`] of every record on which all present
    /// fields in `fields` pass, ascending (so also in `record_id` order). Empty when no
    /// field in `fields` is present on `ext`.
    fn candidates(&self, ext: &ExternalRecord, fields: FieldSet, slack_days: u32) -> Vec<u32>;

    fn ids(&self, indices: &[u32]) -> Vec<String> {
        indices
            .iter()
            .map(|&i| self.dataset().get(i).record_id.clone())
            .collect()
    }
}

/// The linear scan: the reference implementation every other matcher must agree with.
impl ExactMatcher for Dataset {
    fn dataset(&self) -> &Dataset {
        self
    }

    fn candidates(&self, ext: &ExternalRecord, fields: FieldSet, slack_days: u32) -> Vec<u32> {
        let probe = Probe::new(ext, slack_days);
        if fields.intersection(probe.present()).is_empty() {
            return Vec::new();
        }
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| probe.passes(fields, r))
            .map(|(i, _)| i as u32)
            .collect()
    }
}

/// Record ids matching `ext` on every present field in `use_fields`, by linear scan.
pub fn match_exact(ext: &ExternalRecord, dataset: &Dataset, use_fields: FieldSet, slack_days: u32) -> Vec<String> {
    dataset.ids(&dataset.candidates(ext, use_fields, slack_days))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub droppable: FieldSet,
    /// 0, 1 or 2.
    pub max_drop: u8,
    pub slack_days: u32,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            droppable: FieldSet::default_droppable(),
            max_drop: 2,
            slack_days: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_drop > 2 {
            return Err(Error::Config(format!(
                "max_drop must be 0, 1 or 2, got {}",
                self.max_drop
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    Unique {
        record_id: String,
    },
    Ambiguous {
        count: usize,
    },
    NoMatch,
    /// Different suppression choices at the same level isolate different records.
    Conflict,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Unique { .. } => "unique",
            Classification::Ambiguous { .. } => "ambiguous",
            Classification::NoMatch => "nomatch",
            Classification::Conflict => "conflict",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub classification: Classification,
    pub relaxation_level: u8,
    pub dropped: FieldSet,
    pub fields_used: FieldSet,
    pub candidate_ids: Vec<String>,
}

impl MatchOutcome {
    pub fn matched_record(&self) -> Option<&str> {
        match &self.classification {
            Classification::Unique { record_id } => Some(record_id),
            _ => None,
        }
    }

    fn no_match(present: FieldSet) -> Self {
        MatchOutcome {
            classification: Classification::NoMatch,
            relaxation_level: 0,
            dropped: FieldSet::EMPTY,
            fields_used: present,
            candidate_ids: Vec::new(),
        }
    }
}

/// Ambiguous outcomes list at most this many candidate ids; the count is always exact.
pub const MAX_REPORTED_CANDIDATES: usize = 100;

fn bounded(indices: &[u32]) -> &[u32] {
    &indices[..indices.len().min(MAX_REPORTED_CANDIDATES)]
}

/// Exact-unique matching with suppression of up to `config.max_drop` fields.
///
/// Level 0 uses every present field. A single survivor is a unique match and several
/// survivors are ambiguous; either way the search stops. Only an empty result moves on
/// to the next level, where every choice of that many droppable present fields is
/// tried. A level whose singleton results all name one record yields a unique match;
/// singletons naming different records yield a conflict. A level with no singleton but
/// some multi-record result is ambiguous (the smallest such result is reported), so
/// relaxation never continues past ambiguity. Otherwise the next level is tried, and
/// after the last one the outcome is no match.
pub fn match_with_relaxation<M: ExactMatcher + ?Sized>(
    ext: &ExternalRecord,
    matcher: &M,
    config: &MatchConfig,
) -> MatchOutcome {
    let present = present_fields(ext);
    if present.is_empty() {
        return MatchOutcome::no_match(present);
    }
    let slack = config.slack_days;
    let full = matcher.candidates(ext, FieldSet::ALL, slack);
    match full.len() {
        0 => {}
        1 => {
            return MatchOutcome {
                classification: Classification::Unique {
                    record_id: matcher.ids(&full).remove(0),
                },
                relaxation_level: 0,
                dropped: FieldSet::EMPTY,
                fields_used: present,
                candidate_ids: matcher.ids(&full),
            }
        }
        n => {
            return MatchOutcome {
                classification: Classification::Ambiguous { count: n },
                relaxation_level: 0,
                dropped: FieldSet::EMPTY,
                fields_used: present,
                candidate_ids: matcher.ids(bounded(&full)),
            }
        }
    }

    let droppable = config.droppable.intersection(present);
    for level in 1..=config.max_drop.min(2) {
        let results: Vec<(FieldSet, Vec<u32>)> = droppable
            .combinations(level as usize)
            .into_iter()
            .map(|dropped| {
                (
                    dropped,
                    matcher.candidates(ext, FieldSet::ALL.difference(dropped), slack),
                )
            })
            .collect();

        let singles: Vec<&(FieldSet, Vec<u32>)> = results.iter().filter(|(_, c)| c.len() == 1).collect();
        if let Some((dropped, _)) = singles.first() {
            let distinct: BTreeSet<u32> = singles.iter().map(|(_, c)| c[0]).collect();
            let ids = matcher.ids(&distinct.iter().copied().collect::<Vec<_>>());
            let classification = if ids.len() == 1 {
                Classification::Unique {
                    record_id: ids[0].clone(),
                }
            } else {
                Classification::Conflict
            };
            return MatchOutcome {
                classification,
                relaxation_level: level,
                dropped: *dropped,
                fields_used: present.difference(*dropped),
                candidate_ids: ids,
            };
        }

        if let Some((dropped, cands)) = results
            .iter()
            .filter(|(_, c)| c.len() >= 2)
            .min_by_key(|(_, c)| c.len())
        {
            return MatchOutcome {
                classification: Classification::Ambiguous { count: cands.len() },
                relaxation_level: level,
                dropped: *dropped,
                fields_used: present.difference(*dropped),
                candidate_ids: matcher.ids(bounded(cands)),
            };
        }
    }
    MatchOutcome::no_match(present)
}

#[cfg(test)]
mod tests;
