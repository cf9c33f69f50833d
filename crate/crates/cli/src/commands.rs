use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use reident_core::matcher::{present_fields, AuditReport};
use reident_core::model::{
    parse_external_dataset_in, parse_hospital_dataset, write_hospital_dataset, ExternalContext, ParseReport, Schema,
};
use reident_core::privacy::{k_anonymity_histogram, safe_harbor, uniqueness_fraction, PersonRecord, QiSubject};
use reident_core::synth::{generate, CORPUS_FILES};
use reident_core::{
    enrich, evaluate_predicates, match_with_relaxation, run_audit, AuditConfig, CodeDictionary, Dataset,
    EnrichmentStatus, ExternalRecord, Field, HospitalGroups, HospitalRecord, IncidentMap, MatchIndex,
    PublicRecordsTable, QuasiIdentifier, SensitivePrefixes, Verdict, ZipPopulationTable,
};

use crate::config::{self, input_path, required_input, usage, FileConfig, Format};
use crate::{Inputs, Matching};

pub struct Ctx {
    pub file: FileConfig,
    pub format: Format,
}

fn print_machine(value: &serde_json::Value) -> Result<()> {
    // serde_json's map is ordered, so keys come out sorted.
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

struct Loaded {
    path: PathBuf,
    report: ParseReport,
}

fn load_hospital(path: &Path) -> Result<(Vec<HospitalRecord>, Loaded)> {
    let (records, report) = parse_hospital_dataset(config::read(path)?, &Schema::hospital())
        .with_context(|| format!("reading {}", path.display()))?;
    Ok((
        records,
        Loaded {
            path: path.to_path_buf(),
            report,
        },
    ))
}

/// Lookup tables named by the inputs; the incident map always includes the defaults.
struct Tables {
    incidents: IncidentMap,
    dictionary: Option<CodeDictionary>,
    groups: Option<HospitalGroups>,
    public: Option<PublicRecordsTable>,
}

fn load_tables(ctx: &Ctx, inputs: &mut Inputs) -> Result<Tables> {
    let f = &ctx.file;
    let incidents = match input_path(inputs.incident_map.take(), &f.incident_map, "incident map")? {
        Some(p) => IncidentMap::from_csv(config::read(&p)?).with_context(|| format!("reading {}", p.display()))?,
        None => IncidentMap::default(),
    };
    let dictionary = input_path(
        inputs.hospital_dictionary.take(),
        &f.hospital_dictionary,
        "hospital dictionary",
    )?
    .map(|p| CodeDictionary::from_csv(config::read(&p)?).with_context(|| format!("reading {}", p.display())))
    .transpose()?;
    let groups = input_path(inputs.hospital_groups.take(), &f.hospital_groups, "hospital groups")?
        .map(|p| HospitalGroups::from_csv(config::read(&p)?).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let public = input_path(inputs.public_records.take(), &f.public_records, "public records")?
        .map(|p| PublicRecordsTable::from_csv(config::read(&p)?).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    Ok(Tables {
        incidents,
        dictionary,
        groups,
        public,
    })
}

fn load_external(path: &Path, tables: &Tables) -> Result<(Vec<ExternalRecord>, Loaded)> {
    let ctx = ExternalContext {
        incidents: Some(&tables.incidents),
        dictionary: tables.dictionary.as_ref(),
        groups: tables.groups.as_ref(),
    };
    let (records, report) = parse_external_dataset_in(config::read(path)?, &Schema::external(), &ctx)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok((
        records,
        Loaded {
            path: path.to_path_buf(),
            report,
        },
    ))
}

/// Row errors outside `ingest` are reported and the rows skipped.
fn warn_rows(loaded: &Loaded) {
    for e in &loaded.report.errors {
        eprintln!(
            "warning: {}:{}: {} (row skipped)",
            loaded.path.display(),
            e.row,
            e.reason
        );
    }
}

fn load_sensitive(ctx: &Ctx, flag: Option<PathBuf>) -> Result<SensitivePrefixes> {
    match input_path(flag, &ctx.file.sensitive, "sensitive-prefix")? {
        Some(p) => {
            SensitivePrefixes::from_reader(config::read(&p)?).with_context(|| format!("reading {}", p.display()))
        }
        None => Ok(SensitivePrefixes::default()),
    }
}

pub fn ingest(ctx: &Ctx, mut inputs: Inputs, verbose: bool) -> Result<ExitCode> {
    let f = &ctx.file;
    let hospital = input_path(inputs.hospital.take(), &f.hospital, "hospital")?;
    let external = input_path(inputs.external.take(), &f.external, "external")?;
    if hospital.is_none() && external.is_none() {
        return Err(usage("nothing to ingest; pass --hospital and/or --external"));
    }
    let tables = load_tables(ctx, &mut inputs)?;
    let mut loaded = Vec::new();
    let mut out = io::stdout().lock();
    if let Some(p) = &hospital {
        let (records, l) = load_hospital(p)?;
        if verbose {
            for r in &records {
                writeln!(out, "{}", serde_json::to_string(r)?)?;
            }
        }
        loaded.push(l);
    }
    if let Some(p) = &external {
        let (records, l) = load_external(p, &tables)?;
        if verbose {
            for r in &records {
                writeln!(out, "{}", serde_json::to_string(r)?)?;
            }
        }
        loaded.push(l);
    }
    let total: usize = loaded.iter().map(|l| l.report.errors.len()).sum();
    match ctx.format {
        Format::Table => {
            for l in &loaded {
                let r = &l.report;
                writeln!(
                    out,
                    "{}: {} rows, {} accepted, {} errors",
                    l.path.display(),
                    r.rows_read,
                    r.accepted,
                    r.errors.len()
                )?;
                for e in &r.errors {
                    writeln!(out, "  {}:{}: {}", l.path.display(), e.row, e.reason)?;
                }
            }
            writeln!(out, "{total} errors")?;
        }
        Format::Machine => {
            let files: Vec<_> = loaded
                .iter()
                .map(|l| {
                    json!({
                        "path": l.path.display().to_string(),
                        "rows_read": l.report.rows_read,
                        "accepted": l.report.accepted,
                        "errors": l.report.errors.iter().map(|e| json!({"row": e.row, "reason": e.reason})).collect::<Vec<_>>(),
                    })
                })
                .collect();
            drop(out);
            print_machine(&json!({ "files": files, "total_errors": total }))?;
        }
    }
    Ok(if total == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn audit_table(report: &AuditReport) -> String {
    let t = &report.tallies;
    let pct = t.percentages();
    let mut s = String::new();
    s.push_str(&format!("externals        {:>6}\n", report.total));
    for (label, n) in [
        ("unique", t.unique),
        ("ambiguous_2", t.ambiguous_2),
        ("ambiguous_3plus", t.ambiguous_3plus),
        ("nomatch", t.nomatch),
        ("conflict", t.conflict),
    ] {
        s.push_str(&format!("{label:<16} {n:>6}  {:>5.1}%\n", pct[label]));
    }
    for (level, n) in &report.relaxation.unique_by_level {
        s.push_str(&format!("unique at level {level} {n:>6}\n"));
    }
    for (dropped, n) in &report.relaxation.unique_by_dropped {
        s.push_str(&format!("  dropped {dropped:<16} {n:>6}\n"));
    }
    s.push_str(&format!("sensitive unique {:>6}\n", report.sensitive_unique));
    s
}

pub fn audit(ctx: &Ctx, mut inputs: Inputs, matching: Matching, out: Option<PathBuf>) -> Result<ExitCode> {
    let f = &ctx.file;
    let hospital = required_input(inputs.hospital.take(), &f.hospital, "hospital", "--hospital")?;
    let external = required_input(inputs.external.take(), &f.external, "external", "--external")?;
    let out = config::pick(out, &f.out).ok_or_else(|| usage("no output directory; pass --out"))?;
    let match_cfg = config::matching(matching.droppable, matching.max_drop, matching.slack_days, f)?;
    let sensitive = load_sensitive(ctx, matching.sensitive)?;
    let tables = load_tables(ctx, &mut inputs)?;

    let (records, hl) = load_hospital(&hospital)?;
    warn_rows(&hl);
    let (externals, el) = load_external(&external, &tables)?;
    warn_rows(&el);

    let dataset = Dataset::new(records)?;
    let index = MatchIndex::build(&dataset);
    let cfg = AuditConfig {
        matching: match_cfg,
        sensitive,
        parallel: true,
    };
    let report = run_audit(&externals, &index, tables.public.as_ref(), &cfg);

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let summary = report.summary_json()?;
    fs::write(out.join("summary.json"), &summary)?;
    let cases = fs::File::create(out.join("cases.csv"))?;
    report.write_cases_csv(io::BufWriter::new(cases))?;

    match ctx.format {
        Format::Table => print!("{}", audit_table(&report)),
        Format::Machine => print!("{summary}"),
    }
    Ok(ExitCode::SUCCESS)
}

pub fn transform(
    ctx: &Ctx,
    hospital: Option<PathBuf>,
    population: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<ExitCode> {
    let f = &ctx.file;
    let hospital = required_input(hospital, &f.hospital, "hospital", "--hospital")?;
    let population = required_input(population, &f.population, "population table", "--population")?;
    let out = config::pick(out, &f.out).ok_or_else(|| usage("no output file; pass --out"))?;
    let table = ZipPopulationTable::from_csv(config::read(&population)?)
        .with_context(|| format!("reading {}", population.display()))?;
    let (records, loaded) = load_hospital(&hospital)?;
    warn_rows(&loaded);
    let generalized: Vec<HospitalRecord> = records.iter().map(|r| safe_harbor(r, &table)).collect();
    let file = fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    write_hospital_dataset(&generalized, io::BufWriter::new(file))?;
    match ctx.format {
        Format::Table => println!("{} records generalized -> {}", generalized.len(), out.display()),
        Format::Machine => print_machine(&json!({ "records": generalized.len(), "out": out.display().to_string() }))?,
    }
    Ok(ExitCode::SUCCESS)
}

fn stats_of<T: QiSubject>(records: &[T], qi: &QuasiIdentifier, format: Format) -> Result<()> {
    let hist = k_anonymity_histogram(records, qi)?;
    let stats = uniqueness_fraction(records, qi)?;
    if let Some(w) = &stats.warning {
        eprintln!("warning: {w}");
    }
    match format {
        Format::Table => {
            println!("quasi-identifier {qi}");
            println!("{:>8} {:>10} {:>10}", "k", "classes", "records");
            for (k, n) in &hist {
                println!("{k:>8} {:>10} {n:>10}", n / k);
            }
            println!("records          {}", stats.records);
            println!("unique records   {}", stats.unique_records);
            println!("uniqueness       {:.6}", stats.fraction);
        }
        Format::Machine => {
            let rows: Vec<_> = hist
                .iter()
                .map(|(k, n)| json!({ "k": k, "classes": n / k, "records": n }))
                .collect();
            print_machine(&json!({
                "qi": qi.to_string(),
                "histogram": rows,
                "records": stats.records,
                "unique_records": stats.unique_records,
                "uniqueness": stats.fraction,
                "warning": stats.warning,
            }))?;
        }
    }
    Ok(())
}

pub fn stats(ctx: &Ctx, input: Option<PathBuf>, qi: Option<String>) -> Result<ExitCode> {
    let f = &ctx.file;
    let input = required_input(input, &f.hospital, "stats input", "--input")?;
    let qi_text = config::pick(qi, &f.qi).ok_or_else(|| usage("no quasi-identifier; pass --qi"))?;
    let qi: QuasiIdentifier = qi_text.parse()?;
    let mut header = String::new();
    BufReader::new(config::read(&input)?).read_line(&mut header)?;
    let is_hospital = header.split(',').any(|h| h.trim() == "record_id");
    if is_hospital {
        let (records, loaded) = load_hospital(&input)?;
        warn_rows(&loaded);
        stats_of(&records, &qi, ctx.format)?;
    } else {
        let people =
            PersonRecord::read_csv(config::read(&input)?).with_context(|| format!("reading {}", input.display()))?;
        stats_of(&people, &qi, ctx.format)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default)]
pub struct SynthOverrides {
    pub seed: Option<u64>,
    pub n_hospital_records: Option<usize>,
    pub n_externals: Option<usize>,
    pub n_planted_unique: Option<usize>,
    pub n_planted_ambiguous: Option<usize>,
    pub n_planted_nomatch: Option<usize>,
}

pub fn synth(ctx: &Ctx, out: Option<PathBuf>, o: SynthOverrides) -> Result<ExitCode> {
    let out = config::pick(out, &ctx.file.out).ok_or_else(|| usage("no output directory; pass --out"))?;
    let mut cfg = ctx.file.synth.clone().unwrap_or_default();
    cfg.seed = o.seed.unwrap_or(cfg.seed);
    cfg.n_hospital_records = o.n_hospital_records.unwrap_or(cfg.n_hospital_records);
    cfg.n_externals = o.n_externals.unwrap_or(cfg.n_externals);
    cfg.n_planted_unique = o.n_planted_unique.unwrap_or(cfg.n_planted_unique);
    cfg.n_planted_ambiguous = o.n_planted_ambiguous.unwrap_or(cfg.n_planted_ambiguous);
    cfg.n_planted_nomatch = o.n_planted_nomatch.unwrap_or(cfg.n_planted_nomatch);
    let corpus = generate(&cfg)?;
    let paths = corpus.write_to_dir(&out)?;
    let mut digests = BTreeMap::new();
    for (name, path) in CORPUS_FILES.iter().zip(&paths) {
        let bytes = fs::read(path)?;
        digests.insert(*name, hex::encode(Sha256::digest(&bytes)));
    }
    match ctx.format {
        Format::Table => {
            for name in CORPUS_FILES {
                println!("{}  {name}", digests[name]);
            }
        }
        Format::Machine => print_machine(&json!({ "out": out.display().to_string(), "sha256": digests }))?,
    }
    Ok(ExitCode::SUCCESS)
}

/// At most this many candidate records get a verdict row.
const MAX_VERDICT_ROWS: usize = 20;

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "FAIL",
        Verdict::Absent => "-",
    }
}

pub fn match_one(
    ctx: &Ctx,
    mut inputs: Inputs,
    matching: Matching,
    ext_id: &str,
    record_ids: &[String],
) -> Result<ExitCode> {
    let f = &ctx.file;
    let hospital = required_input(inputs.hospital.take(), &f.hospital, "hospital", "--hospital")?;
    let external = required_input(inputs.external.take(), &f.external, "external", "--external")?;
    let match_cfg = config::matching(matching.droppable, matching.max_drop, matching.slack_days, f)?;
    let tables = load_tables(ctx, &mut inputs)?;
    let (records, hl) = load_hospital(&hospital)?;
    warn_rows(&hl);
    let (externals, el) = load_external(&external, &tables)?;
    warn_rows(&el);
    let ext = externals.iter().find(|e| e.ext_id == ext_id).ok_or_else(|| {
        usage(format!(
            "no external record with ext_id `{ext_id}` in {}",
            external.display()
        ))
    })?;
    let (ext, enrichment) = match &tables.public {
        Some(t) => enrich(ext, t),
        None => (ext.clone(), EnrichmentStatus::None),
    };
    let dataset = Dataset::new(records)?;
    let index = MatchIndex::build(&dataset);
    let outcome = match_with_relaxation(&ext, &index, &match_cfg);

    let mut shown: Vec<String> = outcome.candidate_ids.iter().take(MAX_VERDICT_ROWS).cloned().collect();
    for id in record_ids {
        if dataset.find(id).is_none() {
            return Err(usage(format!("no hospital record with record_id `{id}`")));
        }
        if !shown.contains(id) {
            shown.push(id.clone());
        }
    }
    let rows: Vec<(String, Vec<(Field, Verdict)>)> = shown
        .iter()
        .map(|id| {
            let rec = dataset.find(id).expect("checked above");
            (
                id.clone(),
                evaluate_predicates(&ext, rec, match_cfg.slack_days).iter().collect(),
            )
        })
        .collect();

    match ctx.format {
        Format::Table => {
            println!("external {} (enrichment: {})", ext.ext_id, enrichment.label());
            println!("present fields: {}", present_fields(&ext));
            let detail = match outcome.matched_record() {
                Some(id) => format!(" {id}"),
                None if outcome.candidate_ids.is_empty() => String::new(),
                None => format!(" ({} candidates)", outcome.candidate_ids.len()),
            };
            println!(
                "outcome: {}{detail} at level {}, dropped {{{}}}",
                outcome.classification.label(),
                outcome.relaxation_level,
                outcome.dropped
            );
            if !rows.is_empty() {
                print!("{:<12}", "record");
                for f in Field::ALL {
                    print!(" {:>12}", f.name());
                }
                println!();
                for (id, verdicts) in &rows {
                    print!("{id:<12}");
                    for (_, v) in verdicts {
                        print!(" {:>12}", verdict_label(*v));
                    }
                    println!();
                }
            }
        }
        Format::Machine => {
            let verdicts: BTreeMap<&str, BTreeMap<&str, Verdict>> = rows
                .iter()
                .map(|(id, vs)| (id.as_str(), vs.iter().map(|(f, v)| (f.name(), *v)).collect()))
                .collect();
            print_machine(&json!({
                "ext_id": ext.ext_id,
                "enrichment": enrichment,
                "outcome": outcome,
                "verdicts": verdicts,
            }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
