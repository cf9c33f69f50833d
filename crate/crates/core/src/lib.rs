//! Re-identification audit engine for de-identified hospital discharge data.
//!
//! The crate matches structured external-knowledge records (for example, facts
//! harvested from news reports) against hospitalization records using exact,
//! unique matching with systematic field suppression, and measures how much
//! residual risk remains under generalization policies.
//!
//! Modules:
//!
//! - [`model`]: domain types, CSV ingestion, ICD9 prefix semantics and code dictionaries.
//! - [`temporal`]: admission windows, whole-month ages and birth-month inference.
//! - [`matcher`]: predicates, exact matching, relaxation, the blocked index and audits.
//! - [`privacy`]: Safe Harbor generalization, k-anonymity statistics, sensitive flags.
//! - [`synth`]: seeded synthetic corpora with a ground-truth manifest.

pub mod error;
pub mod matcher;
pub mod model;
pub mod privacy;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
pub use matcher::{
    enrich, evaluate_predicates, match_exact, match_with_relaxation, run_audit, AuditConfig, AuditReport,
    Classification, Dataset, EnrichmentStatus, ExactMatcher, Field, FieldSet, FieldVerdicts, MatchConfig, MatchIndex,
    MatchOutcome, PublicRecord, PublicRecordsTable, Verdict,
};
pub use model::{
    icd9_prefix_match, CodeDictionary, ExternalRecord, Gender, HospitalCode, HospitalGroups, HospitalRecord, Icd9Code,
    IncidentMap, ParseReport, RowError, Zip,
};
pub use privacy::{QiField, QuasiIdentifier, SensitivePrefixes, ZipPopulationTable};
pub use temporal::{AdmitWindow, DischargePeriod, MonthWindow};
