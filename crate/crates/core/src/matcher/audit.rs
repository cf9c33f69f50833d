//! Batch audits: enrichment, relaxed matching and aggregate reporting.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::PublicRecordsTable;
use super::{enrich, match_with_relaxation, Classification, EnrichmentStatus, ExactMatcher, MatchConfig, MatchOutcome};
use crate::error::Result;
use crate::model::ExternalRecord;
use crate::privacy::{flag_sensitive, SensitivePrefixes};

#[derive(Debug, Clone, Default)]
pub struct AuditConfig {
    pub matching: MatchConfig,
    pub sensitive: SensitivePrefixes,
    /// Process externals on the rayon pool. Results do not depend on it.
    pub parallel: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tallies {
    pub unique: usize,
    pub ambiguous_2: usize,
    pub ambiguous_3plus: usize,
    pub nomatch: usize,
    pub conflict: usize,
}

impl Tallies {
    pub fn total(&self) -> usize {
        self.unique + self.ambiguous_2 + self.ambiguous_3plus + self.nomatch + self.conflict
    }

    fn add(&mut self, c: &Classification) {
        match c {
            Classification::Unique { .. } => self.unique += 1,
            Classification::Ambiguous { count } if *count == 2 => self.ambiguous_2 += 1,
            Classification::Ambiguous { .. } => self.ambiguous_3plus += 1,
            Classification::NoMatch => self.nomatch += 1,
            Classification::Conflict => self.conflict += 1,
        }
    }

    /// Share of each tally in percent; all zero for an empty audit.
    pub fn percentages(&self) -> BTreeMap<&'static str, f64> {
        let total = self.total();
        let pct = |n: usize| {
            if total == 0 {
                0.0
            } else {
                100.0 * n as f64 / total as f64
            }
        };
        BTreeMap::from([
            ("unique", pct(self.unique)),
            ("ambiguous_2", pct(self.ambiguous_2)),
            ("ambiguous_3plus", pct(self.ambiguous_3plus)),
            ("nomatch", pct(self.nomatch)),
            ("conflict", pct(self.conflict)),
        ])
    }
}

/// How much relaxation the unique matches needed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RelaxationHistogram {
    /// Relaxation level → unique matches found there.
    pub unique_by_level: BTreeMap<u8, usize>,
    /// Dropped field set (`;`-joined, `-` for none) → unique matches.
    pub unique_by_dropped: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseResult {
    pub ext_id: String,
    pub enrichment: EnrichmentStatus,
    pub outcome: MatchOutcome,
    /// Only unique matches are flagged.
    pub sensitive: bool,
}

impl CaseResult {
    pub fn candidate_count(&self) -> usize {
        match &self.outcome.classification {
            Classification::Unique { .. } => 1,
            Classification::Ambiguous { count } => *count,
            Classification::NoMatch => 0,
            Classification::Conflict => self.outcome.candidate_ids.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub total: usize,
    pub tallies: Tallies,
    pub relaxation: RelaxationHistogram,
    pub enrichment: BTreeMap<&'static str, usize>,
    pub sensitive_unique: usize,
    pub cases: Vec<CaseResult>,
}

pub const CASE_COLUMNS: [&str; 7] = [
    "ext_id",
    "classification",
    "relaxation_level",
    "dropped_fields",
    "matched_record_id",
    "candidate_count",
    "sensitive_flag",
];

fn dropped_label(outcome: &MatchOutcome) -> String {
    if outcome.dropped.is_empty() {
        "-".into()
    } else {
        outcome.dropped.to_string()
    }
}

impl AuditReport {
    fn from_cases(cases: Vec<CaseResult>) -> Self {
        let mut tallies = Tallies::default();
        let mut relaxation = RelaxationHistogram::default();
        let mut enrichment: BTreeMap<&'static str, usize> = [
            EnrichmentStatus::Enriched,
            EnrichmentStatus::None,
            EnrichmentStatus::Ambiguous,
        ]
        .into_iter()
        .map(|s| (s.label(), 0))
        .collect();
        let mut sensitive_unique = 0;
        for case in &cases {
            tallies.add(&case.outcome.classification);
            *enrichment.entry(case.enrichment.label()).or_default() += 1;
            if case.outcome.matched_record().is_some() {
                *relaxation
                    .unique_by_level
                    .entry(case.outcome.relaxation_level)
                    .or_default() += 1;
                *relaxation
                    .unique_by_dropped
                    .entry(dropped_label(&case.outcome))
                    .or_default() += 1;
            }
            sensitive_unique += usize::from(case.sensitive);
        }
        AuditReport {
            total: cases.len(),
            tallies,
            relaxation,
            enrichment,
            sensitive_unique,
            cases,
        }
    }

    /// Summary without per-case detail, as pretty JSON with sorted keys.
    pub fn summary_json(&self) -> Result<String> {
        let value = serde_json::json!({
            "total": self.total,
            "tallies": self.tallies,
            "percentages": self.tallies.percentages(),
            "relaxation": self.relaxation,
            "enrichment": self.enrichment,
            "sensitive_unique": self.sensitive_unique,
        });
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    /// Per-case table, one row per external in `ext_id` order.
    pub fn write_cases_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CASE_COLUMNS)?;
        for case in &self.cases {
            let o = &case.outcome;
            w.write_record([
                case.ext_id.clone(),
                o.classification.label().to_string(),
                o.relaxation_level.to_string(),
                dropped_label(o),
                o.matched_record().unwrap_or("").to_string(),
                case.candidate_count().to_string(),
                case.sensitive.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Enriches each external (when a public-records table is given), matches it with
/// relaxation and flags unique matches that carry sensitive diagnoses. Cases are
/// sorted by `ext_id`, so the report does not depend on processing order.
pub fn run_audit<M: ExactMatcher + ?Sized>(
    externals: &[ExternalRecord],
    matcher: &M,
    public: Option<&PublicRecordsTable>,
    config: &AuditConfig,
) -> AuditReport {
    let one = |ext: &ExternalRecord| {
        let (ext, enrichment) = match public {
            Some(table) => enrich(ext, table),
            None => (ext.clone(), EnrichmentStatus::None),
        };
        let outcome = match_with_relaxation(&ext, matcher, &config.matching);
        let sensitive = outcome
            .matched_record()
            .and_then(|id| matcher.dataset().find(id))
            .is_some_and(|rec| flag_sensitive(rec, &config.sensitive));
        CaseResult {
            ext_id: ext.ext_id,
            enrichment,
            outcome,
            sensitive,
        }
    };
    let mut cases: Vec<CaseResult> = if config.parallel {
        externals.par_iter().map(one).collect()
    } else {
        externals.iter().map(one).collect()
    };
    cases.sort_by(|a, b| a.ext_id.cmp(&b.ext_id));
    AuditReport::from_cases(cases)
}
