//! End-to-end audits over generated corpora with planted outcomes.

use reident_core::synth::{generate, Expected, SynthConfig};
use reident_core::{run_audit, AuditConfig, Classification, Dataset, Field, FieldSet, MatchIndex};

fn only_unique(n: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        seed,
        n_hospital_records: 5_000,
        n_externals: n,
        n_planted_unique: n,
        n_planted_ambiguous: 0,
        n_planted_nomatch: 0,
        ..SynthConfig::default()
    }
}

#[test]
fn ten_of_thirty_five_unique_matches_are_sensitive() {
    let cfg = SynthConfig {
        sensitive_rate: 10.0 / 35.0,
        ..only_unique(35, 3)
    };
    let corpus = generate(&cfg).unwrap();
    assert_eq!(corpus.manifest.entries.values().filter(|e| e.sensitive).count(), 10);

    let data = Dataset::new(corpus.hospital).unwrap();
    let index = MatchIndex::build(&data);
    let audit = AuditConfig {
        matching: cfg.matching,
        ..AuditConfig::default()
    };
    let report = run_audit(&corpus.externals, &index, Some(&corpus.public_records), &audit);
    assert_eq!(report.tallies.unique, 35);
    assert_eq!(report.sensitive_unique, 10);
    for case in &report.cases {
        assert_eq!(
            case.sensitive, corpus.manifest.entries[&case.ext_id].sensitive,
            "{}",
            case.ext_id
        );
    }
}

#[test]
fn single_planting_with_age_and_hospital_dropped() {
    let age_hospital = FieldSet::of([Field::Age, Field::Hospital]);
    let cfg = SynthConfig {
        planted_drops: vec![age_hospital],
        ..only_unique(1, 11)
    };
    let corpus = generate(&cfg).unwrap();
    let entry = corpus.manifest.entries.values().next().unwrap();
    assert_eq!((entry.expected, entry.planted_drop), (Expected::Unique, age_hospital));

    let data = Dataset::new(corpus.hospital).unwrap();
    let index = MatchIndex::build(&data);
    let audit = AuditConfig {
        matching: cfg.matching,
        ..AuditConfig::default()
    };
    let report = run_audit(&corpus.externals, &index, Some(&corpus.public_records), &audit);
    let outcome = &report.cases[0].outcome;
    assert_eq!(
        outcome.classification,
        Classification::Unique {
            record_id: entry.record_id.clone().unwrap()
        }
    );
    assert_eq!(outcome.relaxation_level, 2);
    assert_eq!(outcome.dropped, age_hospital);
}

#[test]
fn index_and_scan_audits_agree() {
    let cfg = SynthConfig {
        seed: 5,
        n_hospital_records: 4_000,
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg).unwrap();
    let data = Dataset::new(corpus.hospital).unwrap();
    let index = MatchIndex::build(&data);
    let audit = AuditConfig {
        matching: cfg.matching,
        ..AuditConfig::default()
    };
    let by_index = run_audit(&corpus.externals, &index, Some(&corpus.public_records), &audit);
    let by_scan = run_audit(&corpus.externals, &data, Some(&corpus.public_records), &audit);
    assert_eq!(by_index.summary_json().unwrap(), by_scan.summary_json().unwrap());
    let csv = |r: &reident_core::AuditReport| {
        let mut buf = Vec::new();
        r.write_cases_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(csv(&by_index), csv(&by_scan));
}
