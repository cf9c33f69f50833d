//! Workloads shared by the matching benchmarks.

use chrono::Days;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reident_core::synth::{generate, SynthConfig};
use reident_core::{Dataset, ExternalRecord, FieldSet, Gender, HospitalCode, Icd9Code, Zip};

/// A background-only corpus of `n` hospital records.
pub fn corpus(n: usize, seed: u64) -> (Dataset, SynthConfig) {
    let cfg = SynthConfig {
        seed,
        n_hospital_records: n,
        n_externals: 0,
        n_planted_unique: 0,
        n_planted_ambiguous: 0,
        n_planted_nomatch: 0,
        ..SynthConfig::default()
    };
    let records = generate(&cfg).expect("default pools are feasible").hospital;
    (Dataset::new(records).expect("generated ids are unique"), cfg)
}

/// Externals derived from random records of `data`, with some fields blanked or
/// perturbed the way outside reports differ from the stay they describe.
pub fn queries(data: &Dataset, cfg: &SynthConfig, n: usize, seed: u64) -> Vec<ExternalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zips: Vec<Zip> = cfg.zip_pool.iter().filter_map(|z| Zip::parse(z).ok()).collect();
    let hospitals: Vec<HospitalCode> = cfg
        .hospital_pool
        .iter()
        .filter_map(|h| HospitalCode::parse(h).ok())
        .collect();
    (0..n)
        .map(|q| {
            let rec = data.get(rng.random_range(0..data.len() as u32));
            let mut ext = ExternalRecord::new(format!("q{q}"));
            if rng.random_bool(0.95) {
                ext.gender = Some(if rng.random_bool(0.9) { rec.gender } else { Gender::F });
            }
            if rng.random_bool(0.9) {
                ext.age_years = Some(rec.age_years + rng.random_range(0..=1));
            }
            if let Some(w) = rec.discharge_period().admit_window(rec.length_of_stay) {
                ext.incident_date = Some(w.begin + Days::new(rng.random_range(0..w.len_days() as u64)));
            }
            if rng.random_bool(0.85) {
                ext.zip_candidates.insert(if rng.random_bool(0.8) {
                    rec.zip
                } else {
                    *zips.choose(&mut rng).unwrap()
                });
            }
            if rng.random_bool(0.85) {
                let h = if rng.random_bool(0.8) {
                    &rec.hospital
                } else {
                    hospitals.choose(&mut rng).unwrap()
                };
                ext.hospital_candidates.insert(h.clone());
            }
            if let Ok(fam) = Icd9Code::parse(rec.diagnoses[0].family()) {
                ext.diagnosis_prefixes.insert(fam);
            }
            ext
        })
        .collect()
}

/// Every field set relaxation queries with the default droppable fields.
pub fn relaxation_shapes() -> Vec<FieldSet> {
    (0..=2)
        .flat_map(|k| FieldSet::default_droppable().combinations(k))
        .map(|dropped| FieldSet::ALL.difference(dropped))
        .collect()
}
