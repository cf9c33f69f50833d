use std::collections::BTreeSet;

use chrono::NaiveDate;
use proptest::prelude::*;

use super::*;
use crate::model::{Gender, HospitalCode, HospitalRecord, Icd9Code, Zip};

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn codes(list: &[&str]) -> Vec<Icd9Code> {
    list.iter().map(|c| Icd9Code::parse(c).unwrap()).collect()
}

/// The Sacred Heart discharge record from the news-story walkthrough.
fn sacred_heart(id: &str) -> HospitalRecord {
    HospitalRecord {
        record_id: id.into(),
        hospital: HospitalCode::parse("162").unwrap(),
        admit_type: "1".into(),
        length_of_stay: 6,
        discharge_year: 2011,
        discharge_month: 10,
        age_years: 60,
        age_months: 725,
        gender: Gender::M,
        zip: Zip::parse("98851").unwrap(),
        diagnoses: codes(&[
            "E8162", "80843", "51851", "86500", "80705", "5849", "8052", "2761", "78057", "2851",
        ]),
        procedures: vec![],
        payers: vec![],
        charges: None,
    }
}

/// The motorcycle-crash news subject, after public records supplied his ZIP.
fn boylston() -> ExternalRecord {
    let mut ext = ExternalRecord::new("n1");
    ext.name = Some("Raymond Boylston".into());
    ext.gender = Some(Gender::M);
    ext.age_years = Some(61);
    ext.incident_date = Some(ymd(2011, 10, 18));
    ext.zip_candidates.insert(Zip::parse("98851").unwrap());
    ext.hospital_candidates.insert(HospitalCode::parse("137").unwrap());
    ext.diagnosis_prefixes = codes(&["E81", "E82"]).into_iter().collect();
    ext
}

#[test]
fn boylston_predicates() {
    let v = evaluate_predicates(&boylston(), &sacred_heart("r"), 0);
    assert_eq!(v.get(Field::Hospital), Verdict::Fail);
    assert_eq!(v.get(Field::Age), Verdict::Fail);
    for f in [Field::Gender, Field::Zip, Field::AdmitWindow, Field::Diagnosis] {
        assert_eq!(v.get(f), Verdict::Pass, "{f}");
    }
}

#[test]
fn blank_fields_are_absent() {
    let mut ext = ExternalRecord::new("n");
    ext.gender = Some(Gender::M);
    let v = evaluate_predicates(&ext, &sacred_heart("r"), 0);
    assert_eq!(v.with(Verdict::Pass), FieldSet::of([Field::Gender]));
    assert_eq!(v.with(Verdict::Absent), FieldSet::ALL.without(Field::Gender));
}

#[test]
fn age_uses_months_range_when_dob_known() {
    let mut ext = boylston();
    // Born 1950-05-10: 736 or 737 months over the window, not 725.
    ext.dob = Some(ymd(1950, 5, 10));
    assert_eq!(
        evaluate_predicates(&ext, &sacred_heart("r"), 0).get(Field::Age),
        Verdict::Fail
    );
    // Born 1951-05-10: 724 months on 2011-09-25, 725 from 2011-10-10.
    ext.dob = Some(ymd(1951, 5, 10));
    assert_eq!(
        evaluate_predicates(&ext, &sacred_heart("r"), 0).get(Field::Age),
        Verdict::Pass
    );
}

#[test]
fn slack_widens_the_window() {
    let mut ext = boylston();
    ext.incident_date = Some(ymd(2011, 10, 27));
    assert_eq!(
        evaluate_predicates(&ext, &sacred_heart("r"), 0).get(Field::AdmitWindow),
        Verdict::Fail
    );
    assert_eq!(
        evaluate_predicates(&ext, &sacred_heart("r"), 2).get(Field::AdmitWindow),
        Verdict::Pass
    );
}

#[test]
fn generalized_records_compare_coarsely() {
    let mut rec = sacred_heart("g");
    rec.zip = Zip::parse("98800").unwrap();
    rec.discharge_month = 0;
    rec.age_months = 720;
    let mut ext = boylston();
    ext.age_years = Some(60);
    ext.hospital_candidates = BTreeSet::from([rec.hospital.clone()]);
    ext.incident_date = Some(ymd(2011, 3, 2));
    let v = evaluate_predicates(&ext, &rec, 0);
    assert_eq!(v.with(Verdict::Fail), FieldSet::EMPTY, "{v:?}");
    ext.zip_candidates = BTreeSet::from([Zip::parse("99301").unwrap()]);
    assert_eq!(evaluate_predicates(&ext, &rec, 0).get(Field::Zip), Verdict::Fail);
    rec.zip = Zip::SUPPRESSED;
    assert_eq!(evaluate_predicates(&ext, &rec, 0).get(Field::Zip), Verdict::Pass);
}

#[test]
fn match_exact_examples() {
    let one = Dataset::new(vec![sacred_heart("r1")]).unwrap();
    let mut ext = boylston();
    ext.hospital_candidates = BTreeSet::from([HospitalCode::parse("162").unwrap()]);
    ext.age_years = Some(60);
    assert_eq!(match_exact(&ext, &one, FieldSet::ALL, 0), ["r1"]);

    let two = Dataset::new(vec![sacred_heart("r2"), sacred_heart("r1")]).unwrap();
    assert_eq!(match_exact(&ext, &two, FieldSet::ALL, 0), ["r1", "r2"]);

    assert!(match_exact(&ExternalRecord::new("blank"), &two, FieldSet::ALL, 0).is_empty());
    // Only absent fields selected: vacuous, so nothing.
    let mut only_gender = ExternalRecord::new("g");
    only_gender.gender = Some(Gender::M);
    assert!(match_exact(&only_gender, &two, FieldSet::of([Field::Zip]), 0).is_empty());
}

#[test]
fn boylston_relaxes_to_age_and_hospital() {
    let mut records = vec![sacred_heart("H0000162")];
    // Same profile at the hospital the story named, but another ZIP and gender.
    let mut near = sacred_heart("H0000137");
    near.hospital = HospitalCode::parse("137").unwrap();
    near.zip = Zip::parse("98857").unwrap();
    near.gender = Gender::F;
    records.push(near);
    let data = Dataset::new(records).unwrap();
    let out = match_with_relaxation(&boylston(), &data, &MatchConfig::default());
    assert_eq!(
        out.classification,
        Classification::Unique {
            record_id: "H0000162".into()
        }
    );
    assert_eq!(out.relaxation_level, 2);
    assert_eq!(out.dropped, FieldSet::of([Field::Age, Field::Hospital]));
    assert_eq!(
        out.fields_used,
        FieldSet::of([Field::Gender, Field::Zip, Field::AdmitWindow, Field::Diagnosis])
    );
    assert_eq!(out.candidate_ids, ["H0000162"]);
}

#[test]
fn level_zero_singleton() {
    let data = Dataset::new(vec![sacred_heart("r1")]).unwrap();
    let mut ext = boylston();
    ext.hospital_candidates = BTreeSet::from([HospitalCode::parse("162").unwrap()]);
    ext.age_years = Some(60);
    let out = match_with_relaxation(&ext, &data, &MatchConfig::default());
    assert_eq!(out.matched_record(), Some("r1"));
    assert_eq!((out.relaxation_level, out.dropped), (0, FieldSet::EMPTY));
}

#[test]
fn different_singletons_conflict() {
    // Each record fails exactly one droppable field; dropping either isolates it.
    let mut a = sacred_heart("a");
    a.zip = Zip::parse("98857").unwrap();
    let mut b = sacred_heart("b");
    b.age_years = 59;
    b.age_months = 713;
    let data = Dataset::new(vec![a, b]).unwrap();
    let mut ext = boylston();
    ext.hospital_candidates = BTreeSet::from([HospitalCode::parse("162").unwrap()]);
    ext.age_years = Some(60);
    let cfg = MatchConfig::default();
    let out = match_with_relaxation(&ext, &data, &cfg);
    assert_eq!(out.classification, Classification::Conflict);
    assert_eq!(out.relaxation_level, 1);
    assert_eq!(out.dropped, FieldSet::of([Field::Zip]));
    assert_eq!(out.candidate_ids, ["a", "b"]);

    // Oracle: enumerate level-1 configurations directly.
    let singles: BTreeSet<Vec<String>> = cfg
        .droppable
        .combinations(1)
        .into_iter()
        .map(|d| match_exact(&ext, &data, FieldSet::ALL.difference(d), 0))
        .filter(|ids| ids.len() == 1)
        .collect();
    assert_eq!(singles.len(), 2);
}

#[test]
fn three_way_ambiguity_is_terminal() {
    let data = Dataset::new(vec![sacred_heart("a"), sacred_heart("b"), sacred_heart("c")]).unwrap();
    let mut ext = boylston();
    ext.hospital_candidates = BTreeSet::from([HospitalCode::parse("162").unwrap()]);
    ext.age_years = Some(60);
    let out = match_with_relaxation(&ext, &data, &MatchConfig::default());
    assert_eq!(out.classification, Classification::Ambiguous { count: 3 });
    assert_eq!(out.relaxation_level, 0);
    assert_eq!(out.candidate_ids, match_exact(&ext, &data, FieldSet::ALL, 0));
}

#[test]
fn relaxation_respects_max_drop() {
    let data = Dataset::new(vec![sacred_heart("r")]).unwrap();
    for (max_drop, expect) in [(0, Classification::NoMatch), (1, Classification::NoMatch)] {
        let cfg = MatchConfig {
            max_drop,
            ..MatchConfig::default()
        };
        let out = match_with_relaxation(&boylston(), &data, &cfg);
        assert_eq!(out.classification, expect);
        assert_eq!((out.relaxation_level, out.dropped), (0, FieldSet::EMPTY));
    }
    assert!(MatchConfig {
        max_drop: 3,
        ..MatchConfig::default()
    }
    .validate()
    .is_err());
}

#[test]
fn field_set_text_forms() {
    let s: FieldSet = "age;hospital".parse().unwrap();
    assert_eq!(s, FieldSet::of([Field::Hospital, Field::Age]));
    assert_eq!(s.to_string(), "age;hospital");
    assert_eq!(
        "zip,admit_month".parse::<FieldSet>().unwrap(),
        FieldSet::of([Field::Zip, Field::AdmitWindow])
    );
    assert!("zip;shoe".parse::<FieldSet>().is_err());
    assert_eq!(
        FieldSet::default_droppable().combinations(2),
        [
            FieldSet::of([Field::Zip, Field::Age]),
            FieldSet::of([Field::Zip, Field::Hospital]),
            FieldSet::of([Field::Age, Field::Hospital]),
        ]
    );
}

#[test]
fn audit_tallies_partition_and_flag_sensitive() {
    let mut sensitive = sacred_heart("H0000162");
    sensitive.diagnoses.push(Icd9Code::parse("3051").unwrap());
    let data = Dataset::new(vec![sensitive, sacred_heart("x1"), sacred_heart("x2")]).unwrap();
    let mut hit = boylston();
    hit.ext_id = "n2".into();
    hit.zip_candidates.clear();
    hit.diagnosis_prefixes.clear();
    let mut blank = ExternalRecord::new("n0");
    blank.name = Some("Nobody".into());
    let report = run_audit(&[hit, blank], &data, None, &AuditConfig::default());
    assert_eq!(report.total, 2);
    assert_eq!(report.tallies.total(), 2);
    assert_eq!(report.tallies.nomatch, 1);
    assert_eq!(report.cases[0].ext_id, "n0");

    let empty = run_audit(&[], &data, None, &AuditConfig::default());
    assert_eq!(empty.tallies, Tallies::default());
    assert!(empty.summary_json().unwrap().contains("\"unique\": 0"));
}

#[test]
fn audit_sensitive_flag_on_unique() {
    let mut rec = sacred_heart("H0000162");
    rec.diagnoses.push(Icd9Code::parse("3051").unwrap());
    let data = Dataset::new(vec![rec]).unwrap();
    let report = run_audit(&[boylston()], &data, None, &AuditConfig::default());
    assert_eq!(report.tallies.unique, 1);
    assert_eq!(report.sensitive_unique, 1);
    assert_eq!(report.relaxation.unique_by_level.get(&2), Some(&1));
    assert_eq!(report.relaxation.unique_by_dropped.get("age;hospital"), Some(&1));
    let mut csv = Vec::new();
    report.write_cases_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(
        text,
        "ext_id,classification,relaxation_level,dropped_fields,matched_record_id,candidate_count,sensitive_flag\n\
         n1,unique,2,age;hospital,H0000162,1,true\n"
    );
}

// ---- property tests over a deliberately tiny value domain, so collisions are common ----

const ZIPS: [&str; 3] = ["98851", "98857", "99301"];
const HOSPITALS: [&str; 3] = ["137", "162", "201"];
const FAMILIES: [&str; 4] = ["E81", "E96", "808", "518"];

fn arb_record() -> impl Strategy<Value = HospitalRecord> {
    (
        0..2usize,
        0..3usize,
        0..3usize,
        0..=3u32,
        0..6u32,
        700..730u32,
        proptest::collection::vec((0..4usize, 0..100u32), 1..3),
        prop::bool::weighted(0.15),
    )
        .prop_map(|(g, z, h, month, los, age, diags, generalized)| {
            let zip = Zip::parse(ZIPS[z]).unwrap();
            let diagnoses = diags
                .into_iter()
                .map(|(f, tail)| Icd9Code::parse(&format!("{}{tail}", FAMILIES[f])).unwrap())
                .collect();
            HospitalRecord {
                record_id: String::new(),
                hospital: HospitalCode::parse(HOSPITALS[h]).unwrap(),
                admit_type: "1".into(),
                length_of_stay: los,
                discharge_year: 2011,
                discharge_month: if generalized { 0 } else { 9 + month },
                age_years: age / 12,
                age_months: if generalized { age / 12 * 12 } else { age },
                gender: [Gender::M, Gender::F][g],
                zip: if generalized { zip.generalized() } else { zip },
                diagnoses,
                procedures: vec![],
                payers: vec![],
                charges: None,
            }
        })
}

fn arb_dataset(max: usize) -> impl Strategy<Value = Dataset> {
    proptest::collection::vec(arb_record(), 0..max).prop_map(|mut recs| {
        for (i, r) in recs.iter_mut().enumerate() {
            r.record_id = format!("r{i:04}");
        }
        Dataset::new(recs).unwrap()
    })
}

fn arb_external() -> impl Strategy<Value = ExternalRecord> {
    (
        proptest::option::of(0..2usize),
        proptest::option::of(58..62u32),
        proptest::option::of(0..75i64),
        proptest::collection::btree_set(0..3usize, 0..3),
        proptest::collection::btree_set(0..3usize, 0..3),
        proptest::collection::btree_set(0..4usize, 0..3),
        proptest::option::of(0..900i64),
    )
        .prop_map(|(g, age, day, zips, hosps, fams, dob)| {
            let mut ext = ExternalRecord::new("q");
            ext.gender = g.map(|g| [Gender::M, Gender::F][g]);
            ext.age_years = age;
            ext.incident_date = day.map(|d| ymd(2011, 8, 20) + chrono::Days::new(d as u64));
            ext.zip_candidates = zips.into_iter().map(|z| Zip::parse(ZIPS[z]).unwrap()).collect();
            ext.hospital_candidates = hosps
                .into_iter()
                .map(|h| HospitalCode::parse(HOSPITALS[h]).unwrap())
                .collect();
            ext.diagnosis_prefixes = fams
                .into_iter()
                .map(|f| Icd9Code::parse(FAMILIES[f]).unwrap())
                .collect();
            ext.dob = dob.map(|d| ymd(1950, 6, 1) + chrono::Days::new(d as u64));
            ext
        })
}

fn arb_fields() -> impl Strategy<Value = FieldSet> {
    (0u8..64).prop_map(|bits| FieldSet::of(Field::ALL.into_iter().filter(|f| bits & (1 << *f as u8) != 0)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn index_agrees_with_scan(data in arb_dataset(60), ext in arb_external(), fields in arb_fields(), slack in 0..3u32) {
        let index = MatchIndex::build(&data);
        prop_assert_eq!(index.candidates(&ext, fields, slack), data.candidates(&ext, fields, slack));
        let cfg = MatchConfig { slack_days: slack, ..MatchConfig::default() };
        prop_assert_eq!(match_with_relaxation(&ext, &index, &cfg), match_with_relaxation(&ext, &data, &cfg));
    }

    #[test]
    fn dropping_a_field_never_shrinks_candidates(data in arb_dataset(60), ext in arb_external(), fields in arb_fields()) {
        let present = present_fields(&ext);
        let with: BTreeSet<String> = match_exact(&ext, &data, fields, 0).into_iter().collect();
        for f in fields.iter() {
            let reduced = fields.without(f);
            // Dropping the last usable field makes the query vacuous, which is defined as empty.
            if reduced.intersection(present).is_empty() {
                continue;
            }
            let without: BTreeSet<String> = match_exact(&ext, &data, reduced, 0).into_iter().collect();
            prop_assert!(without.is_superset(&with), "dropping {f}");
        }
    }

    #[test]
    fn blank_external_never_matches(data in arb_dataset(30)) {
        let out = match_with_relaxation(&ExternalRecord::new("blank"), &data, &MatchConfig::default());
        prop_assert_eq!(out.classification, Classification::NoMatch);
    }

    #[test]
    fn outcome_invariants(data in arb_dataset(60), ext in arb_external(), max_drop in 0..=2u8) {
        let cfg = MatchConfig { max_drop, ..MatchConfig::default() };
        let out = match_with_relaxation(&ext, &data, &cfg);
        prop_assert_eq!(out.relaxation_level as usize, out.dropped.len());
        prop_assert!(out.relaxation_level <= max_drop);
        prop_assert!(out.dropped.is_subset(cfg.droppable));
        match &out.classification {
            Classification::Unique { record_id } => {
                prop_assert_eq!(&out.candidate_ids, &vec![record_id.clone()]);
                // The match passes every field it was judged on.
                let rec = data.find(record_id).unwrap();
                let v = evaluate_predicates(&ext, rec, 0);
                prop_assert!(v.with(Verdict::Fail).is_subset(out.dropped));
                // Soundness: every configuration at every lower level was empty.
                let droppable = cfg.droppable.intersection(present_fields(&ext));
                for level in 0..out.relaxation_level {
                    for d in droppable.combinations(level as usize) {
                        prop_assert!(match_exact(&ext, &data, FieldSet::ALL.difference(d), 0).is_empty());
                    }
                }
            }
            Classification::Ambiguous { count } => {
                prop_assert!(*count >= 2);
                prop_assert_eq!(*count, out.candidate_ids.len());
                prop_assert_eq!(&out.candidate_ids, &match_exact(&ext, &data, FieldSet::ALL.difference(out.dropped), 0));
            }
            Classification::Conflict => prop_assert!(out.candidate_ids.len() >= 2),
            Classification::NoMatch => prop_assert!(out.candidate_ids.is_empty()),
        }
    }
}
