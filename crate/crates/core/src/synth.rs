//! Seeded synthetic corpora with planted ground truth.
//!
//! All randomness comes from one `ChaCha8Rng` seeded with [`SynthConfig::seed`] via
//! `SeedableRng::seed_from_u64`, consumed in a fixed order on a single thread. The same
//! config therefore always yields byte-identical files from this implementation.
//!
//! Plantings are built forward: first the hospital record, then the external record
//! derived from it, then the planned perturbation. Every record added afterwards is
//! checked against every planted external and redrawn if it could change that
//! external's outcome, so the manifest states outcomes exactly rather than hoping.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, Months, NaiveDate};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{
    enrich, evaluate_predicates, Field, FieldSet, MatchConfig, PublicRecord, PublicRecordsTable, Verdict,
};
use crate::model::{
    write_external_dataset, write_hospital_dataset, Charges, ExternalRecord, Gender, HospitalCode, HospitalRecord,
    Icd9Code, IncidentMap, Zip,
};
use crate::privacy::ZipPopulationTable;
use crate::temporal::{age_months_at, days_in_month};

/// Diagnosis family used to push a planted external off its record. Never generated.
pub const PERTURB_FAMILY: &str = "V98";
/// Diagnosis family carried by planted no-match externals. Never generated.
pub const NOMATCH_FAMILY: &str = "V99";

const FILLER_CODES: [&str; 25] = [
    "80843", "51851", "86500", "80705", "5849", "8052", "2761", "78057", "2851", "4019", "25000", "4280", "42731",
    "496", "5990", "486", "2724", "53081", "311", "2449", "71590", "V5861", "4241", "7802", "78659",
];

/// Codes under the default sensitive prefixes.
const SENSITIVE_CODES: [&str; 7] = ["042", "0979", "30390", "3051", "30400", "V1582", "2910"];

const PROCEDURE_CODES: [&str; 8] = ["7915", "8872", "9904", "3893", "8741", "7935", "9671", "8703"];
const PAYERS: [&str; 4] = ["medicare", "medicaid", "commercial", "self"];

const FIRST_NAMES: [&str; 32] = [
    "Raymond", "Alice", "Maria", "James", "Linda", "Robert", "Susan", "Michael", "Karen", "David", "Nancy", "Thomas",
    "Betty", "Daniel", "Helen", "Paul", "Sandra", "Mark", "Donna", "George", "Carol", "Kenneth", "Ruth", "Steven",
    "Sharon", "Edward", "Laura", "Brian", "Emily", "Ronald", "Dorothy", "Anthony",
];
const LAST_NAMES: [&str; 32] = [
    "Boylston",
    "Moreno",
    "Nguyen",
    "Whitfield",
    "Okafor",
    "Lindqvist",
    "Hargrove",
    "Castillo",
    "Brennan",
    "Yamada",
    "Kowalski",
    "Ashby",
    "Delgado",
    "Fairweather",
    "Gunderson",
    "Holloway",
    "Iverson",
    "Jablonski",
    "Kincaid",
    "Lachance",
    "McAllister",
    "Northcott",
    "Oyelaran",
    "Pemberton",
    "Quintero",
    "Rasmussen",
    "Sorensen",
    "Thibodeaux",
    "Underhill",
    "Vasquez",
    "Winslow",
    "Zielinski",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    /// Total hospital records, planted ones included.
    pub n_hospital_records: usize,
    /// Total externals; those beyond the planted counts are unplanned.
    pub n_externals: usize,
    pub n_planted_unique: usize,
    pub n_planted_ambiguous: usize,
    pub n_planted_nomatch: usize,
    pub zip_pool: Vec<String>,
    pub hospital_pool: Vec<String>,
    /// Incident type → relative weight. Types the incident map knows add a code from
    /// one of their families; others add none.
    pub incident_mix: BTreeMap<String, f64>,
    /// Probability that a hospital record carries a sensitive code. Planted unique
    /// records get exactly `round(sensitive_rate * n_planted_unique)` of them.
    pub sensitive_rate: f64,
    /// Discharge year of every record.
    pub year: i32,
    /// Matching settings the plantings are guaranteed under.
    pub matching: MatchConfig,
    /// Fields perturbed on planted unique externals, cycled in order.
    pub planted_drops: Vec<FieldSet>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let zip_pool = [
            "980", "981", "983", "985", "988", "989", "990", "991", "992", "993", "994",
        ]
        .iter()
        .flat_map(|p| (1..=10).map(move |i| format!("{p}{i:02}")))
        .collect();
        SynthConfig {
            seed: 1,
            n_hospital_records: 10_000,
            n_externals: 90,
            n_planted_unique: 40,
            n_planted_ambiguous: 10,
            n_planted_nomatch: 25,
            zip_pool,
            hospital_pool: (101..=220).map(|h| h.to_string()).collect(),
            incident_mix: BTreeMap::from([
                ("motor_vehicle".to_string(), 0.008),
                ("assault".to_string(), 0.002),
                ("other".to_string(), 0.99),
            ]),
            sensitive_rate: 10.0 / 35.0,
            year: 2011,
            matching: MatchConfig::default(),
            planted_drops: default_planted_drops(),
        }
    }
}

fn default_planted_drops() -> Vec<FieldSet> {
    use Field::*;
    vec![
        FieldSet::EMPTY,
        FieldSet::of([Zip]),
        FieldSet::of([Age]),
        FieldSet::of([Hospital]),
        FieldSet::of([Age, Hospital]),
        FieldSet::of([Zip, Age]),
        FieldSet::of([Zip, Hospital]),
    ]
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let planted = self.n_planted_unique + self.n_planted_ambiguous + self.n_planted_nomatch;
        if planted > self.n_externals {
            return bad(format!(
                "planted externals ({planted}) exceed n_externals ({})",
                self.n_externals
            ));
        }
        if self.zip_pool.is_empty() || self.hospital_pool.is_empty() {
            return bad("zip_pool and hospital_pool must be non-empty".into());
        }
        if self.incident_mix.is_empty() || self.incident_mix.values().any(|w| !(w.is_finite() && *w > 0.0)) {
            return bad("incident_mix needs at least one entry and every weight must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sensitive_rate) {
            return bad(format!("sensitive_rate {} outside [0, 1]", self.sensitive_rate));
        }
        if days_in_month(self.year, 1).is_none() {
            return bad(format!("year {} out of range", self.year));
        }
        self.matching.validate()?;
        if self.n_planted_unique > 0 && self.planted_drops.is_empty() {
            return bad("planted_drops must be non-empty when uniques are planted".into());
        }
        for d in &self.planted_drops {
            if !d.is_subset(self.matching.droppable) || d.len() > self.matching.max_drop as usize {
                return bad(format!(
                    "planted drop {{{d}}} must be a subset of the droppable fields {{{}}} with at most {} fields",
                    self.matching.droppable, self.matching.max_drop
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Unique,
    Ambiguous,
    Nomatch,
    /// Random external with no promised outcome.
    Unplanned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub expected: Expected,
    /// The planted record for uniques.
    pub record_id: Option<String>,
    /// Records the external is consistent with: the ambiguous group, or the unique record.
    pub candidate_ids: Vec<String>,
    /// Relaxation level the audit should report (planted externals only).
    pub relaxation_level: Option<u8>,
    pub planted_drop: FieldSet,
    /// Whether the uniquely matched record carries a sensitive code.
    pub sensitive: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthManifest {
    pub seed: u64,
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl GroundTruthManifest {
    pub fn count(&self, expected: Expected) -> usize {
        self.entries.values().filter(|e| e.expected == expected).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub hospital: Vec<HospitalRecord>,
    pub externals: Vec<ExternalRecord>,
    pub public_records: PublicRecordsTable,
    pub population: ZipPopulationTable,
    pub manifest: GroundTruthManifest,
}

pub const CORPUS_FILES: [&str; 5] = [
    "hospital.csv",
    "external.csv",
    "public_records.csv",
    "population.csv",
    "manifest.json",
];

impl SynthCorpus {
    /// Writes the five corpus files into `dir`, returning their paths in
    /// [`CORPUS_FILES`] order.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let paths: Vec<PathBuf> = CORPUS_FILES.iter().map(|f| dir.join(f)).collect();
        write_hospital_dataset(&self.hospital, fs::File::create(&paths[0])?)?;
        write_external_dataset(&self.externals, fs::File::create(&paths[1])?)?;
        self.public_records.write_csv(fs::File::create(&paths[2])?)?;
        self.population.write_csv(fs::File::create(&paths[3])?)?;
        fs::write(&paths[4], self.manifest.to_json()?)?;
        Ok(paths)
    }
}

/// A planted external and the records it is allowed to match.
struct Constraint {
    /// The external as the audit will see it, after enrichment.
    effective: ExternalRecord,
    expected: Expected,
    targets: Vec<usize>,
}

struct Planting {
    external: ExternalRecord,
    public_rows: Vec<PublicRecord>,
    records: Vec<HospitalRecord>,
    expected: Expected,
    drop: FieldSet,
    sensitive: bool,
}

struct Generator<'c> {
    cfg: &'c SynthConfig,
    rng: ChaCha8Rng,
    zips: Vec<Zip>,
    hospitals: Vec<HospitalCode>,
    incident_types: Vec<(Option<Vec<String>>, f64)>,
    incident_dist: WeightedIndex<f64>,
    /// Index into `incident_types` restricted to types with families, for plantings.
    mapped_dist: Option<(Vec<usize>, WeightedIndex<f64>)>,
    records: Vec<HospitalRecord>,
    constraints: Vec<Constraint>,
    used_names: BTreeSet<String>,
    public_rows: Vec<PublicRecord>,
}

const MAX_ATTEMPTS: usize = 500;

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl<'c> Generator<'c> {
    fn new(cfg: &'c SynthConfig) -> Result<Self> {
        let zips = cfg.zip_pool.iter().map(|z| Zip::parse(z)).collect::<Result<Vec<_>>>()?;
        let hospitals = cfg
            .hospital_pool
            .iter()
            .map(|h| HospitalCode::parse(h))
            .collect::<Result<Vec<_>>>()?;
        let map = IncidentMap::default();
        let incident_types: Vec<(Option<Vec<String>>, f64)> = cfg
            .incident_mix
            .iter()
            .map(|(kind, w)| {
                let fams: Vec<String> = map.prefixes(kind).iter().map(|c| c.as_str().to_string()).collect();
                ((!fams.is_empty()).then_some(fams), *w)
            })
            .collect();
        let incident_dist = WeightedIndex::new(incident_types.iter().map(|t| t.1))
            .map_err(|e| Error::Config(format!("incident_mix: {e}")))?;
        let mapped: Vec<usize> = (0..incident_types.len())
            .filter(|&i| incident_types[i].0.is_some())
            .collect();
        let mapped_dist = if mapped.is_empty() {
            None
        } else {
            let dist = WeightedIndex::new(mapped.iter().map(|&i| incident_types[i].1))
                .map_err(|e| Error::Config(format!("incident_mix: {e}")))?;
            Some((mapped, dist))
        };
        Ok(Generator {
            cfg,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            zips,
            hospitals,
            incident_types,
            incident_dist,
            mapped_dist,
            records: Vec::new(),
            constraints: Vec::new(),
            used_names: BTreeSet::new(),
            public_rows: Vec::new(),
        })
    }

    fn pick<T: Clone>(&mut self, items: &[T]) -> T {
        items.choose(&mut self.rng).expect("non-empty pool").clone()
    }

    fn other_than<T: Clone + PartialEq>(&mut self, items: &[T], not: &T, what: &str) -> Result<T> {
        let rest: Vec<T> = items.iter().filter(|x| *x != not).cloned().collect();
        if rest.is_empty() {
            return Err(Error::Infeasible(format!(
                "{what} pool needs at least two entries to perturb {what}"
            )));
        }
        Ok(self.pick(&rest))
    }

    fn fresh_name(&mut self) -> String {
        for _ in 0..64 {
            let name = format!("{} {}", self.pick(&FIRST_NAMES), self.pick(&LAST_NAMES));
            if self.used_names.insert(name.clone()) {
                return name;
            }
        }
        let name = format!(
            "{} {}. {} {}",
            self.pick(&FIRST_NAMES),
            (b'A' + self.rng.random_range(0..26u8)) as char,
            self.pick(&LAST_NAMES),
            self.used_names.len()
        );
        self.used_names.insert(name.clone());
        name
    }

    fn code_in_family(&mut self, family: &str) -> Icd9Code {
        let mut code = format!("{family}{}", self.rng.random_range(0..10));
        if self.rng.random_bool(0.5) {
            code.push(char::from(b'0' + self.rng.random_range(0..10u8)));
        }
        Icd9Code::parse(&code).expect("generated code is well formed")
    }

    /// Diagnoses for a record of incident type `kind`; the incident code comes first.
    fn diagnoses(&mut self, kind: usize, sensitive: bool) -> (Vec<Icd9Code>, BTreeSet<Icd9Code>) {
        let mut codes = Vec::new();
        let mut families = BTreeSet::new();
        if let Some(fams) = self.incident_types[kind].0.clone() {
            let fam = self.pick(&fams);
            codes.push(self.code_in_family(&fam));
            families = fams.iter().map(|f| Icd9Code::parse(f).expect("family")).collect();
        }
        for _ in 0..self.rng.random_range(1..=5) {
            let c = Icd9Code::parse(self.pick(&FILLER_CODES)).expect("filler");
            if !codes.contains(&c) {
                codes.push(c);
            }
        }
        if sensitive {
            codes.push(Icd9Code::parse(self.pick(&SENSITIVE_CODES)).expect("sensitive"));
        }
        (codes, families)
    }

    fn length_of_stay(&mut self) -> u32 {
        let u: f64 = self.rng.random();
        1 + (u * u * 29.0) as u32
    }

    /// Discharge date uniform over the configured year, admission `los` days earlier.
    fn stay(&mut self) -> (NaiveDate, u32, u32) {
        let year = self.cfg.year;
        let month = self.rng.random_range(1..=12);
        let day = self
            .rng
            .random_range(1..=days_in_month(year, month).expect("valid month"));
        let los = self.length_of_stay();
        let admit = ymd(year, month, day) - Days::new(los as u64);
        (admit, month, los)
    }

    fn base_record(
        &mut self,
        month: u32,
        los: u32,
        age_months: u32,
        kind: usize,
        sensitive: bool,
    ) -> (HospitalRecord, BTreeSet<Icd9Code>) {
        let (diagnoses, families) = self.diagnoses(kind, sensitive);
        let hospital = self.pick(&self.hospitals.clone());
        let zip = self.pick(&self.zips.clone());
        let procedures = (0..self.rng.random_range(0..3))
            .map(|_| self.pick(&PROCEDURE_CODES).to_string())
            .collect();
        let rec = HospitalRecord {
            record_id: String::new(),
            hospital,
            admit_type: self.rng.random_range(1..=3).to_string(),
            length_of_stay: los,
            discharge_year: self.cfg.year,
            discharge_month: month,
            age_years: age_months / 12,
            age_months,
            gender: if self.rng.random_bool(0.5) {
                Gender::M
            } else {
                Gender::F
            },
            zip,
            diagnoses,
            procedures,
            payers: vec![self.pick(&PAYERS).to_string()],
            charges: Some(Charges(self.rng.random_range(50_000..20_000_000))),
        };
        (rec, families)
    }

    fn background_record(&mut self) -> HospitalRecord {
        let (_, month, los) = self.stay();
        let age_months = self.rng.random_range(0..95 * 12);
        let kind = self.incident_dist.sample(&mut self.rng);
        let sensitive = self.rng.random_bool(self.cfg.sensitive_rate);
        self.base_record(month, los, age_months, kind, sensitive).0
    }

    /// Whether adding `rec` could change the promised outcome of `c`.
    fn interferes(&self, c: &Constraint, rec: &HospitalRecord) -> bool {
        let failed = evaluate_predicates(&c.effective, rec, self.cfg.matching.slack_days).with(Verdict::Fail);
        match c.expected {
            Expected::Ambiguous => failed.is_empty(),
            _ => failed.is_subset(self.cfg.matching.droppable) && failed.len() <= self.cfg.matching.max_drop as usize,
        }
    }

    fn effective(&self, ext: &ExternalRecord, rows: &[PublicRecord]) -> Result<ExternalRecord> {
        Ok(enrich(ext, &PublicRecordsTable::new(rows.to_vec())?).0)
    }

    /// Tries to add a planting; false if it would clash with what is already there.
    fn commit(&mut self, p: Planting) -> Result<Option<(ExternalRecord, ManifestDraft)>> {
        let effective = self.effective(&p.external, &p.public_rows)?;
        let first = self.records.len();
        let targets: Vec<usize> = match p.expected {
            Expected::Nomatch => Vec::new(),
            _ => (first..first + p.records.len()).collect(),
        };
        let candidate = Constraint {
            effective,
            expected: p.expected,
            targets,
        };
        if self.records.iter().any(|r| self.interferes(&candidate, r)) {
            return Ok(None);
        }
        if p.records
            .iter()
            .any(|r| self.constraints.iter().any(|c| self.interferes(c, r)))
        {
            return Ok(None);
        }
        // The planting itself must behave as promised.
        let slack = self.cfg.matching.slack_days;
        for r in &p.records {
            let failed = evaluate_predicates(&candidate.effective, r, slack).with(Verdict::Fail);
            let want = if p.expected == Expected::Unique {
                p.drop
            } else {
                FieldSet::EMPTY
            };
            if failed != want {
                return Ok(None);
            }
        }
        self.records.extend(p.records);
        self.public_rows.extend(p.public_rows);
        let draft = ManifestDraft {
            expected: p.expected,
            targets: candidate.targets.clone(),
            relaxation_level: match p.expected {
                Expected::Unique => Some(p.drop.len() as u8),
                Expected::Ambiguous | Expected::Nomatch => Some(0),
                Expected::Unplanned => None,
            },
            drop: p.drop,
            sensitive: p.sensitive,
        };
        self.constraints.push(candidate);
        Ok(Some((p.external, draft)))
    }

    fn planted_kind(&mut self) -> usize {
        match &self.mapped_dist {
            Some((idx, dist)) => idx[dist.sample(&mut self.rng)],
            None => self.incident_dist.sample(&mut self.rng),
        }
    }

    /// A record with a known admission date and date of birth, and the external that
    /// describes it faithfully.
    fn planted_pair(&mut self, sensitive: bool) -> (HospitalRecord, ExternalRecord, PublicRecord, bool) {
        let (admit, month, los) = self.stay();
        let years = self.rng.random_range(18..=90u32);
        let mut dob = admit - Months::new(years * 12) - Days::new(self.rng.random_range(0..365));
        if dob.day() > 28 {
            dob = dob.with_day(28).expect("day 28 exists");
        }
        let age_months = age_months_at(dob, admit).expect("dob precedes admission");
        let kind = self.planted_kind();
        let (rec, families) = self.base_record(month, los, age_months, kind, sensitive);

        let mut ext = ExternalRecord::new("");
        ext.gender = Some(rec.gender);
        ext.age_years = Some(rec.age_years);
        ext.incident_date = Some(admit);
        ext.diagnosis_prefixes = families;
        ext.source = "synthetic".into();
        if self.rng.random_bool(0.9) {
            ext.hospital_candidates.insert(rec.hospital.clone());
        }
        let named = self.rng.random_bool(0.9);
        let name = self.fresh_name();
        if named {
            ext.name = Some(name.clone());
        } else {
            ext.zip_candidates.insert(rec.zip);
        }
        let row = PublicRecord {
            name,
            dob,
            zip_history: BTreeSet::from([rec.zip]),
            age_hint: None,
        };
        (rec, ext, row, named)
    }

    fn plant_unique(&mut self, drop: FieldSet, sensitive: bool) -> Result<Planting> {
        let (rec, mut ext, mut row, named) = self.planted_pair(sensitive);
        for f in drop.iter() {
            match f {
                Field::Zip => {
                    let other = self.other_than(&self.zips.clone(), &rec.zip, "zip")?;
                    if named {
                        row.zip_history = BTreeSet::from([other]);
                    } else {
                        ext.zip_candidates = BTreeSet::from([other]);
                    }
                }
                Field::Age => {
                    if named {
                        row.dob = row.dob - Months::new(12);
                    } else {
                        ext.age_years = Some(rec.age_years + 1);
                    }
                }
                Field::Hospital => {
                    let other = self.other_than(&self.hospitals.clone(), &rec.hospital, "hospital")?;
                    ext.hospital_candidates = BTreeSet::from([other]);
                }
                Field::AdmitWindow => {
                    let w = rec.discharge_period().admit_window(rec.length_of_stay).expect("window");
                    ext.incident_date = Some(w.end + Days::new(40));
                }
                Field::Diagnosis => {
                    ext.diagnosis_prefixes = BTreeSet::from([Icd9Code::parse(PERTURB_FAMILY)?]);
                }
                Field::Gender => {
                    ext.gender = Some(if rec.gender == Gender::M { Gender::F } else { Gender::M });
                }
            }
        }
        let mut public_rows = Vec::new();
        if named {
            public_rows.push(row.clone());
            if self.rng.random_bool(0.2) {
                // Same name, a generation apart: filtered out by the age check.
                public_rows.push(PublicRecord {
                    dob: row.dob - Months::new(12 * 30),
                    zip_history: BTreeSet::from([self.pick(&self.zips.clone())]),
                    ..row
                });
            }
        }
        Ok(Planting {
            external: ext,
            public_rows,
            records: vec![rec],
            expected: Expected::Unique,
            drop,
            sensitive,
        })
    }

    fn plant_ambiguous(&mut self, size: usize) -> Planting {
        let sensitive = self.rng.random_bool(self.cfg.sensitive_rate);
        let (rec, ext, row, named) = self.planted_pair(sensitive);
        let mut records = vec![rec.clone()];
        for _ in 1..size {
            // Same on every matched field, different elsewhere.
            let mut twin = rec.clone();
            twin.charges = Some(Charges(self.rng.random_range(50_000..20_000_000)));
            twin.admit_type = self.rng.random_range(1..=3).to_string();
            let extra = Icd9Code::parse(self.pick(&FILLER_CODES)).expect("filler");
            if !twin.diagnoses.contains(&extra) {
                twin.diagnoses.push(extra);
            }
            records.push(twin);
        }
        Planting {
            external: ext,
            public_rows: if named { vec![row] } else { Vec::new() },
            records,
            expected: Expected::Ambiguous,
            drop: FieldSet::EMPTY,
            sensitive: false,
        }
    }

    /// Fails on ZIP, hospital and diagnosis at once, so no two suppressions can rescue it.
    fn plant_nomatch(&mut self) -> Result<Planting> {
        let zip = (0..1000)
            .map(|i| Zip::parse(&format!("97{:03}", (i * 7 + 13) % 1000)).expect("zip"))
            .find(|z| !self.zips.contains(z))
            .ok_or_else(|| Error::Infeasible("no ZIP outside the pool".into()))?;
        let hospital = (900..1000)
            .map(|h| HospitalCode::parse(&h.to_string()).expect("code"))
            .find(|h| !self.hospitals.contains(h))
            .ok_or_else(|| Error::Infeasible("no hospital code outside the pool".into()))?;
        let (admit, _, _) = self.stay();
        let mut ext = ExternalRecord::new("");
        ext.gender = Some(if self.rng.random_bool(0.5) {
            Gender::M
        } else {
            Gender::F
        });
        ext.age_years = Some(self.rng.random_range(18..=90));
        ext.incident_date = Some(admit);
        ext.zip_candidates.insert(zip);
        ext.hospital_candidates.insert(hospital);
        ext.diagnosis_prefixes.insert(Icd9Code::parse(NOMATCH_FAMILY)?);
        ext.source = "synthetic".into();
        if self.rng.random_bool(0.5) {
            ext.name = Some(self.fresh_name());
        }
        Ok(Planting {
            external: ext,
            public_rows: Vec::new(),
            records: Vec::new(),
            expected: Expected::Nomatch,
            drop: FieldSet::EMPTY,
            sensitive: false,
        })
    }

    /// An external loosely based on a random record, with up to two fields scrambled.
    fn unplanned(&mut self) -> ExternalRecord {
        let rec = self.records[self.rng.random_range(0..self.records.len())].clone();
        let w = rec.discharge_period().admit_window(rec.length_of_stay).expect("window");
        let mut ext = ExternalRecord::new("");
        ext.gender = Some(rec.gender);
        ext.age_years = Some(rec.age_years);
        ext.incident_date = Some(w.begin + Days::new(self.rng.random_range(0..=w.len_days() as u64 - 1)));
        ext.zip_candidates.insert(rec.zip);
        ext.hospital_candidates.insert(rec.hospital.clone());
        ext.diagnosis_prefixes
            .insert(Icd9Code::parse(rec.diagnoses[0].family()).expect("family"));
        ext.source = "synthetic".into();
        for _ in 0..self.rng.random_range(0..=2) {
            match self.rng.random_range(0..4) {
                0 => ext.zip_candidates = BTreeSet::from([self.pick(&self.zips.clone())]),
                1 => ext.age_years = Some(rec.age_years + self.rng.random_range(0..3)),
                2 => ext.hospital_candidates = BTreeSet::from([self.pick(&self.hospitals.clone())]),
                _ => {
                    ext.gender = Some(if self.rng.random_bool(0.5) {
                        Gender::M
                    } else {
                        Gender::F
                    })
                }
            }
        }
        ext
    }
}

struct ManifestDraft {
    expected: Expected,
    targets: Vec<usize>,
    relaxation_level: Option<u8>,
    drop: FieldSet,
    sensitive: bool,
}

/// Builds a corpus. Fails with [`Error::Config`] on an invalid config and with
/// [`Error::Infeasible`] when the pools cannot keep the plantings apart.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut g = Generator::new(cfg)?;
    let planted_records = cfg.n_planted_unique + (0..cfg.n_planted_ambiguous).map(group_size).sum::<usize>();
    if planted_records > cfg.n_hospital_records {
        return Err(Error::Infeasible(format!(
            "plantings need {planted_records} hospital records but n_hospital_records is {}",
            cfg.n_hospital_records
        )));
    }

    let n_sensitive = (cfg.sensitive_rate * cfg.n_planted_unique as f64).round() as usize;
    let mut planted: Vec<(ExternalRecord, ManifestDraft)> = Vec::new();
    let tasks = (0..cfg.n_planted_unique)
        .map(|i| Task::Unique(cfg.planted_drops[i % cfg.planted_drops.len()], i < n_sensitive))
        .chain((0..cfg.n_planted_ambiguous).map(|i| Task::Ambiguous(group_size(i))))
        .chain((0..cfg.n_planted_nomatch).map(|_| Task::Nomatch));
    for task in tasks {
        let mut done = false;
        for _ in 0..MAX_ATTEMPTS {
            let p = match task {
                Task::Unique(drop, sensitive) => g.plant_unique(drop, sensitive)?,
                Task::Ambiguous(size) => g.plant_ambiguous(size),
                Task::Nomatch => g.plant_nomatch()?,
            };
            if let Some(entry) = g.commit(p)? {
                planted.push(entry);
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Infeasible(format!(
                "could not keep a planted {task:?} apart from the {} records already generated; enlarge the pools",
                g.records.len()
            )));
        }
    }

    while g.records.len() < cfg.n_hospital_records {
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let r = g.background_record();
            if !g.constraints.iter().any(|c| g.interferes(c, &r)) {
                accepted = Some(r);
                break;
            }
        }
        let rec =
            accepted.ok_or_else(|| Error::Infeasible("background records keep colliding with plantings".into()))?;
        g.records.push(rec);
    }

    let mut externals = planted;
    let n_unplanned = cfg.n_externals - externals.len();
    if n_unplanned > 0 && g.records.is_empty() {
        return Err(Error::Infeasible(
            "unplanned externals need at least one hospital record".into(),
        ));
    }
    for _ in 0..n_unplanned {
        let mut ext = g.unplanned();
        let rec_age = ext.age_years.expect("set");
        if g.rng.random_bool(0.5) {
            let name = g.fresh_name();
            let at = ext.incident_date.expect("set");
            g.public_rows.push(PublicRecord {
                name: name.clone(),
                dob: at - Months::new(rec_age * 12 + g.rng.random_range(0..12)),
                zip_history: ext.zip_candidates.clone(),
                age_hint: Some(rec_age),
            });
            ext.name = Some(name);
        }
        externals.push((
            ext,
            ManifestDraft {
                expected: Expected::Unplanned,
                targets: Vec::new(),
                relaxation_level: None,
                drop: FieldSet::EMPTY,
                sensitive: false,
            },
        ));
    }

    // Shuffle, then hand out ids in position order.
    let mut order: Vec<usize> = (0..g.records.len()).collect();
    order.shuffle(&mut g.rng);
    let mut position = vec![0; order.len()];
    for (pos, &old) in order.iter().enumerate() {
        position[old] = pos;
    }
    let record_id = |old: usize| format!("H{:07}", position[old] + 1);
    let mut hospital: Vec<HospitalRecord> = order.iter().map(|&old| g.records[old].clone()).collect();
    for (pos, rec) in hospital.iter_mut().enumerate() {
        rec.record_id = format!("H{:07}", pos + 1);
    }

    externals.shuffle(&mut g.rng);
    let mut manifest = GroundTruthManifest {
        seed: cfg.seed,
        entries: BTreeMap::new(),
    };
    let mut out_externals = Vec::with_capacity(externals.len());
    for (i, (mut ext, draft)) in externals.into_iter().enumerate() {
        ext.ext_id = format!("N{:05}", i + 1);
        let mut candidate_ids: Vec<String> = draft.targets.iter().map(|&t| record_id(t)).collect();
        candidate_ids.sort();
        manifest.entries.insert(
            ext.ext_id.clone(),
            ManifestEntry {
                expected: draft.expected,
                record_id: (draft.expected == Expected::Unique).then(|| candidate_ids[0].clone()),
                candidate_ids,
                relaxation_level: draft.relaxation_level,
                planted_drop: draft.drop,
                sensitive: draft.sensitive,
            },
        );
        out_externals.push(ext);
    }

    let mut population = ZipPopulationTable::new();
    let zip3s: BTreeSet<&str> = g.zips.iter().map(|z| z.zip3()).collect();
    for zip3 in zip3s {
        population.insert(zip3, g.rng.random_range(2_000..80_000))?;
    }

    let mut public_rows = g.public_rows;
    public_rows.sort_by(|a, b| (&a.name, a.dob).cmp(&(&b.name, b.dob)));

    Ok(SynthCorpus {
        hospital,
        externals: out_externals,
        public_records: PublicRecordsTable::new(public_rows)?,
        population,
        manifest,
    })
}

#[derive(Debug, Clone, Copy)]
enum Task {
    Unique(FieldSet, bool),
    Ambiguous(usize),
    Nomatch,
}

/// Ambiguous groups alternate between two and three records.
fn group_size(i: usize) -> usize {
    2 + i % 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{match_with_relaxation, Classification, Dataset};
    use crate::model::{parse_external_dataset, parse_hospital_dataset, Schema};

    fn small() -> SynthConfig {
        SynthConfig {
            seed: 7,
            n_hospital_records: 2_000,
            n_externals: 30,
            n_planted_unique: 14,
            n_planted_ambiguous: 4,
            n_planted_nomatch: 6,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.hospital, b.hospital);
        assert_eq!(a.externals, b.externals);
        assert_eq!(a.manifest, b.manifest);
        let c = generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.hospital, c.hospital);
    }

    #[test]
    fn manifest_covers_every_external_once() {
        let corpus = generate(&small()).unwrap();
        assert_eq!(corpus.manifest.entries.len(), corpus.externals.len());
        for ext in &corpus.externals {
            assert!(corpus.manifest.entries.contains_key(&ext.ext_id));
        }
        assert_eq!(corpus.manifest.count(Expected::Unique), 14);
        assert_eq!(corpus.manifest.count(Expected::Ambiguous), 4);
        assert_eq!(corpus.manifest.count(Expected::Nomatch), 6);
        assert_eq!(corpus.manifest.count(Expected::Unplanned), 6);
    }

    #[test]
    fn records_satisfy_model_invariants_and_round_trip() {
        let corpus = generate(&small()).unwrap();
        for r in &corpus.hospital {
            assert_eq!(r.validate(), Ok(()), "{}", r.record_id);
        }
        for e in &corpus.externals {
            assert_eq!(e.validate(), Ok(()), "{}", e.ext_id);
        }
        let mut buf = Vec::new();
        write_hospital_dataset(&corpus.hospital, &mut buf).unwrap();
        let (back, report) = parse_hospital_dataset(buf.as_slice(), &Schema::hospital()).unwrap();
        assert!(report.is_clean(), "{:?}", report.errors);
        assert_eq!(back, corpus.hospital);

        let mut buf = Vec::new();
        write_external_dataset(&corpus.externals, &mut buf).unwrap();
        let (back, report) = parse_external_dataset(buf.as_slice(), &Schema::external()).unwrap();
        assert!(report.is_clean(), "{:?}", report.errors);
        assert_eq!(back, corpus.externals);
    }

    #[test]
    fn plantings_hold_under_the_matcher() {
        let cfg = small();
        let corpus = generate(&cfg).unwrap();
        let data = Dataset::new(corpus.hospital.clone()).unwrap();
        for ext in &corpus.externals {
            let entry = &corpus.manifest.entries[&ext.ext_id];
            let (ext, _) = enrich(ext, &corpus.public_records);
            let out = match_with_relaxation(&ext, &data, &cfg.matching);
            match entry.expected {
                Expected::Unique => {
                    assert_eq!(out.matched_record(), entry.record_id.as_deref(), "{}", ext.ext_id);
                    assert_eq!(out.dropped, entry.planted_drop);
                    assert_eq!(Some(out.relaxation_level), entry.relaxation_level);
                }
                Expected::Ambiguous => {
                    assert_eq!(
                        out.classification,
                        Classification::Ambiguous {
                            count: entry.candidate_ids.len()
                        }
                    );
                    assert_eq!(out.candidate_ids, entry.candidate_ids);
                }
                Expected::Nomatch => assert_eq!(out.classification, Classification::NoMatch),
                Expected::Unplanned => {}
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let over = SynthConfig {
            n_externals: 3,
            ..small()
        };
        assert!(matches!(generate(&over), Err(Error::Config(_))));
        let no_pool = SynthConfig {
            zip_pool: vec![],
            ..small()
        };
        assert!(matches!(generate(&no_pool), Err(Error::Config(_))));
        let weight = SynthConfig {
            incident_mix: BTreeMap::from([("assault".into(), 0.0)]),
            ..small()
        };
        assert!(matches!(generate(&weight), Err(Error::Config(_))));
        let gender_drop = SynthConfig {
            planted_drops: vec![FieldSet::of([Field::Gender])],
            ..small()
        };
        assert!(matches!(generate(&gender_drop), Err(Error::Config(_))));
        let tiny = SynthConfig {
            n_hospital_records: 5,
            ..small()
        };
        assert!(matches!(generate(&tiny), Err(Error::Infeasible(_))));
        let one_zip = SynthConfig {
            zip_pool: vec!["98851".into()],
            planted_drops: vec![FieldSet::of([Field::Zip])],
            ..small()
        };
        assert!(matches!(generate(&one_zip), Err(Error::Infeasible(_))));
    }

    /// Records whose diagnoses fall in the motor-vehicle families must follow a
    /// binomial(n, p) count; accept anything within three standard deviations.
    #[test]
    fn incident_mix_matches_binomial() {
        let cfg = SynthConfig {
            seed: 2011,
            n_hospital_records: 100_000,
            n_externals: 0,
            n_planted_unique: 0,
            n_planted_ambiguous: 0,
            n_planted_nomatch: 0,
            ..SynthConfig::default()
        };
        let corpus = generate(&cfg).unwrap();
        let total: f64 = cfg.incident_mix.values().sum();
        for (kind, families) in [("motor_vehicle", &["E81", "E82"][..]), ("assault", &["E96"][..])] {
            let p = cfg.incident_mix[kind] / total;
            let n = corpus.hospital.len() as f64;
            let hits = corpus
                .hospital
                .iter()
                .filter(|r| r.diagnoses.iter().any(|c| families.contains(&c.family())))
                .count() as f64;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((hits - n * p).abs() <= 3.0 * sigma, "{kind}: {hits} vs {}", n * p);
        }
    }
}
