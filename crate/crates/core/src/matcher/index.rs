//! Inverted indexes over a [`Dataset`] answering exact-match queries by posting-list
//! intersection followed by residual predicate filtering.

use std::collections::{BTreeMap, HashMap};

use chrono::NaiveDate;

use super::{Dataset, ExactMatcher, Field, FieldSet, Probe};
use crate::model::{ExternalRecord, Gender, HospitalCode, Icd9Code, Zip};
use crate::temporal::DischargePeriod;

/// Postings are record indices in ascending order.
type Postings = Vec<u32>;

/// Records discharged in one period, sorted by (length of stay, index).
struct PeriodBucket {
    first: NaiveDate,
    last: NaiveDate,
    by_stay: Vec<(u32, u32)>,
}

impl PeriodBucket {
    /// Entries whose admission window (widened by `slack`) contains `date`: the stay
    /// must put `date + stay` inside the period, give or take the slack.
    fn containing(&self, date: NaiveDate, slack: u32) -> &[(u32, u32)] {
        let slack = i64::from(slack);
        let lo = (self.first - date).num_days() - slack;
        let hi = (self.last - date).num_days() + slack;
        if hi < 0 {
            return &[];
        }
        let lo = lo.max(0);
        let start = self.by_stay.partition_point(|&(los, _)| i64::from(los) < lo);
        let end = self.by_stay.partition_point(|&(los, _)| i64::from(los) <= hi);
        &self.by_stay[start..end.max(start)]
    }
}

/// Immutable blocked index; safe to query from many threads.
pub struct MatchIndex<'d> {
    dataset: &'d Dataset,
    gender: HashMap<Gender, Postings>,
    zip: HashMap<Zip, Postings>,
    hospital: HashMap<HospitalCode, Postings>,
    family: HashMap<String, Postings>,
    age_years: HashMap<u32, Postings>,
    periods: Vec<PeriodBucket>,
    has_generalized: bool,
}

enum Source<'a> {
    Lists(Vec<&'a [u32]>),
    Stays(Vec<&'a [(u32, u32)]>),
}

impl Source<'_> {
    fn estimate(&self) -> usize {
        match self {
            Source::Lists(l) => l.iter().map(|s| s.len()).sum(),
            Source::Stays(l) => l.iter().map(|s| s.len()).sum(),
        }
    }

    fn materialize(&self) -> Vec<u32> {
        let mut out: Vec<u32> = match self {
            Source::Lists(l) if l.len() == 1 => return l[0].to_vec(),
            Source::Lists(l) => l.iter().flat_map(|s| s.iter().copied()).collect(),
            Source::Stays(l) => l.iter().flat_map(|s| s.iter().map(|&(_, i)| i)).collect(),
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Membership test; only sorted posting lists support it.
    fn contains(&self, idx: u32) -> Option<bool> {
        match self {
            Source::Lists(l) => Some(l.iter().any(|s| s.binary_search(&idx).is_ok())),
            Source::Stays(_) => None,
        }
    }
}

fn lists(keys: Vec<&Postings>) -> Source<'_> {
    Source::Lists(keys.into_iter().map(Vec::as_slice).collect())
}

impl<'d> MatchIndex<'d> {
    pub fn build(dataset: &'d Dataset) -> Self {
        let mut gender: HashMap<Gender, Postings> = HashMap::new();
        let mut zip: HashMap<Zip, Postings> = HashMap::new();
        let mut hospital: HashMap<HospitalCode, Postings> = HashMap::new();
        let mut family: HashMap<String, Postings> = HashMap::new();
        let mut age_years: HashMap<u32, Postings> = HashMap::new();
        let mut periods: BTreeMap<DischargePeriod, Vec<(u32, u32)>> = BTreeMap::new();
        let mut has_generalized = false;

        for (i, rec) in dataset.records().iter().enumerate() {
            let i = i as u32;
            gender.entry(rec.gender).or_default().push(i);
            zip.entry(rec.zip).or_default().push(i);
            hospital.entry(rec.hospital.clone()).or_default().push(i);
            age_years.entry(rec.age_years).or_default().push(i);
            let mut families: Vec<&str> = rec.diagnoses.iter().map(|c| c.family()).collect();
            families.sort_unstable();
            families.dedup();
            for f in families {
                family.entry(f.to_string()).or_default().push(i);
            }
            periods
                .entry(rec.discharge_period())
                .or_default()
                .push((rec.length_of_stay, i));
            has_generalized |= rec.is_generalized();
        }

        let periods = periods
            .into_iter()
            .filter_map(|(period, mut by_stay)| {
                by_stay.sort_unstable();
                Some(PeriodBucket {
                    first: period.first_day()?,
                    last: period.last_day()?,
                    by_stay,
                })
            })
            .collect();

        MatchIndex {
            dataset,
            gender,
            zip,
            hospital,
            family,
            age_years,
            periods,
            has_generalized,
        }
    }

    /// Candidate source for `field`, and whether membership in it already decides the
    /// field so the residual check can skip it.
    fn source(&self, field: Field, ext: &ExternalRecord, slack: u32) -> Option<(Source<'_>, bool)> {
        let exact = match field {
            Field::Gender | Field::Hospital | Field::AdmitWindow => true,
            // Generalized postings are keyed by ZIP3, which a raw ZIP can collide with.
            Field::Zip => !self.has_generalized,
            Field::Diagnosis => ext.diagnosis_prefixes.iter().all(|p| p.len() == Icd9Code::MIN_LEN),
            // A stated age in years is compared as is; a birth date needs each record's window.
            Field::Age => true,
        };
        let source = match field {
            Field::Gender => lists(ext.gender.and_then(|g| self.gender.get(&g)).into_iter().collect()),
            Field::Hospital => lists(
                ext.hospital_candidates
                    .iter()
                    .filter_map(|h| self.hospital.get(h))
                    .collect(),
            ),
            Field::Zip => {
                let mut keys: Vec<Zip> = ext.zip_candidates.iter().copied().collect();
                if self.has_generalized {
                    keys.extend(ext.zip_candidates.iter().map(Zip::generalized));
                    keys.push(Zip::SUPPRESSED);
                }
                keys.sort_unstable();
                keys.dedup();
                lists(keys.iter().filter_map(|z| self.zip.get(z)).collect())
            }
            Field::Diagnosis => {
                let mut fams: Vec<String> = ext
                    .diagnosis_prefixes
                    .iter()
                    .map(|p| p.family().to_ascii_uppercase())
                    .collect();
                fams.sort_unstable();
                fams.dedup();
                lists(fams.iter().filter_map(|f| self.family.get(f)).collect())
            }
            Field::AdmitWindow => {
                let date = ext.incident_date?;
                Source::Stays(
                    self.periods
                        .iter()
                        .map(|b| b.containing(date, slack))
                        .filter(|s| !s.is_empty())
                        .collect(),
                )
            }
            Field::Age => match (ext.dob, ext.age_years) {
                (None, Some(years)) => lists(self.age_years.get(&years).into_iter().collect()),
                _ => return None,
            },
        };
        Some((source, exact))
    }
}

impl ExactMatcher for MatchIndex<'_> {
    fn dataset(&self) -> &Dataset {
        self.dataset
    }

    fn candidates(&self, ext: &ExternalRecord, fields: FieldSet, slack_days: u32) -> Vec<u32> {
        let probe = Probe::new(ext, slack_days);
        let active = fields.intersection(probe.present());
        if active.is_empty() {
            return Vec::new();
        }

        let mut sources: Vec<(usize, Field, Source<'_>, bool)> = active
            .iter()
            .filter_map(|f| {
                self.source(f, ext, slack_days)
                    .map(|(s, exact)| (s.estimate(), f, s, exact))
            })
            .collect();
        sources.sort_by_key(|(est, ..)| *est);

        // Fields still to be checked record by record.
        let mut residual = active;
        let mut candidates: Vec<u32> = match sources.first() {
            Some((0, ..)) => return Vec::new(),
            Some((_, field, driver, exact)) => {
                if *exact {
                    residual = residual.without(*field);
                }
                driver.materialize()
            }
            None => (0..self.dataset.len() as u32).collect(),
        };
        for (_, field, src, exact) in sources.iter().skip(1) {
            if candidates.is_empty() {
                break;
            }
            if src.contains(0).is_some() {
                candidates.retain(|&i| src.contains(i).unwrap_or(true));
                if *exact {
                    residual = residual.without(*field);
                }
            }
        }
        if !residual.is_empty() {
            candidates.retain(|&i| probe.passes(residual, self.dataset.get(i)));
        }
        candidates
    }
}
