//! End-to-end acceptance checks for the whole pipeline. Each test prints a
//! single `ACCEPTANCE n: PASS` line on success (run with `--nocapture` to
//! see them); a failing criterion fails its test.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use legilm::citation::Citation;
use legilm::dataset::{
    balance, make_contrastive, read_jsonl, split, template_pair, validate_pair, write_jsonl,
    Answer, DatasetError, InstructionExample, Provenance, BALANCE_TOLERANCE,
    MIRROR_OVERLAP_THRESHOLD,
};
use legilm::eval::{
    compute_metrics, load_benchmark, run_eval, BenchmarkItem, EvalReport, ExtractedAnswer, Grade,
    ItemKind, Prediction,
};
use legilm::gateway::{ChatBackend, ChatMessage, FixtureBackend, FnBackend, RecordingBackend};
use legilm::ingest::{
    parse_regulation, read_clauses, write_clauses, DocumentKind, LegalClause, Regulation,
    SourceDocument,
};
use legilm::lexer::{tokenize, PhraseLexicon, TokenKind};
use legilm::retriever::{build_index, explain_score, search, DEFAULT_B, DEFAULT_K1};
use legilm::stopwords::is_stopword;

fn workspace_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn load_gdpr() -> Regulation {
    let raw = std::fs::read_to_string(workspace_path("fixtures/gdpr.txt")).unwrap();
    let doc = SourceDocument::new("gdpr", DocumentKind::Regulation, &raw);
    parse_regulation(&doc, "GDPR").unwrap()
}

const SCENARIO_QUERY: &str = "The agreement between DataCorp Ltd. and HealthAnalytics Inc. \
     involves sharing anonymized health data for research purposes. The data is stored on \
     encrypted IPFS, accessible only to GDPR-trained personnel. Is this agreement valid?";

#[test]
fn acceptance_01_regulation_parse_and_round_trip() {
    let start = Instant::now();
    let regulation = load_gdpr();
    let articles: Vec<&LegalClause> = regulation.articles().collect();
    assert_eq!(articles.len(), 99, "expected 99 article-level clauses");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clauses.jsonl");
    write_clauses(&regulation.clauses, &path).unwrap();
    let read_back = read_clauses(&path).unwrap();
    assert_eq!(read_back, regulation.clauses, "clause round trip changed data");

    let reparsed = load_gdpr();
    assert_eq!(reparsed.clauses, regulation.clauses, "reparse is not deterministic");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5s");
    println!("ACCEPTANCE 1: PASS — 99 articles parsed, round trip exact, {elapsed:?}");
}

#[test]
fn acceptance_02_scenario_query_hits_article_32() {
    let regulation = load_gdpr();
    let index = build_index(&regulation.clauses, &PhraseLexicon::default_seed()).unwrap();
    // warm-up, then timed query
    search(&index, SCENARIO_QUERY, 3).unwrap();
    let start = Instant::now();
    let hits = search(&index, SCENARIO_QUERY, 3).unwrap();
    let elapsed = start.elapsed();
    assert!(
        hits[0].clause_citation.starts_with("GDPR Art. 32"),
        "rank 1 was {}",
        hits[0].clause_citation
    );
    assert!(elapsed.as_millis() < 50, "query took {elapsed:?}, budget 50ms");
    println!(
        "ACCEPTANCE 2: PASS — scenario query ranks {} first in {elapsed:?}",
        hits[0].clause_citation
    );
}

/// Indexed terms of one clause: tokenizer output minus stopword words.
fn oracle_terms(text: &str, lexicon: &PhraseLexicon) -> Vec<String> {
    tokenize(text, lexicon)
        .into_iter()
        .filter(|t| t.kind != TokenKind::Word || !is_stopword(&t.surface))
        .map(|t| t.surface)
        .collect()
}

#[test]
fn acceptance_03_bm25_matches_formula_oracle() {
    let lexicon = PhraseLexicon::default_seed();
    let texts = [
        "the data subject gave explicit consent for marketing",
        "the controller notified the supervisory authority of the breach",
        "encryption of personal data protects the data subject",
        "records of processing activities must list every recipient",
        "consent may be withdrawn by the data subject at any time",
        "the breach exposed unencrypted records of many users",
        "profiling decisions require human review and explicit consent",
        "transfers to third countries need appropriate safeguards",
    ];
    let clauses: Vec<LegalClause> = texts
        .iter()
        .enumerate()
        .map(|(i, text)| LegalClause {
            citation: Citation::article("GDPR", (i + 1) as u32),
            regulation_id: "GDPR".to_string(),
            article_number: (i + 1) as u32,
            paragraph: None,
            point: None,
            title: None,
            text: text.to_string(),
        })
        .collect();
    let index = build_index(&clauses, &lexicon).unwrap();

    // independent oracle over the same term streams
    let docs: Vec<Vec<String>> = texts.iter().map(|t| oracle_terms(t, &lexicon)).collect();
    let n = docs.len() as f64;
    let avg_len: f64 = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let oracle = |query: &str, doc: usize| -> f64 {
        let q_terms: std::collections::BTreeSet<String> =
            oracle_terms(query, &lexicon).into_iter().collect();
        let mut score = 0.0;
        for term in &q_terms {
            let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
            if df == 0.0 {
                continue;
            }
            let tf = docs[doc].iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            let len = docs[doc].len() as f64;
            score += idf * tf * (DEFAULT_K1 + 1.0)
                / (tf + DEFAULT_K1 * (1.0 - DEFAULT_B + DEFAULT_B * len / avg_len));
        }
        score
    };

    let queries = [
        "explicit consent of the data subject",
        "breach notification to the supervisory authority",
        "encryption safeguards for transfers",
        "profiling profiling consent",
        "records of processing",
    ];
    let mut checked = 0;
    for query in queries {
        let hits = search(&index, query, clauses.len()).unwrap();
        let by_citation: HashMap<&str, f64> =
            hits.iter().map(|h| (h.clause_citation.as_str(), h.score)).collect();
        for (i, clause) in clauses.iter().enumerate() {
            let expected = oracle(query, i);
            let citation = clause.citation.to_string();
            let got = by_citation.get(citation.as_str()).copied().unwrap_or(0.0);
            assert!(
                (got - expected).abs() < 1e-9,
                "query {query:?}, doc {citation}: got {got}, oracle {expected}"
            );
            if expected > 0.0 {
                let contributions = explain_score(&index, query, &citation).unwrap();
                let sum: f64 = contributions.iter().map(|(_, s)| s).sum();
                assert!((sum - expected).abs() < 1e-9, "explain sum mismatch for {citation}");
            }
            checked += 1;
        }
    }
    println!("ACCEPTANCE 3: PASS — {checked} scores match the BM25 oracle within 1e-9");
}

#[test]
fn acceptance_04_title_self_retrieval() {
    let regulation = load_gdpr();
    let index = build_index(&regulation.clauses, &PhraseLexicon::default_seed()).unwrap();
    let articles: Vec<&LegalClause> = regulation.articles().collect();
    let mut found = 0;
    let mut misses = Vec::new();
    for article in &articles {
        let title = article.title.as_deref().expect("fixture articles are titled");
        let citation = article.citation.to_string();
        let hits = search(&index, title, 3).unwrap();
        if hits.iter().any(|h| h.clause_citation == citation) {
            found += 1;
        } else {
            misses.push(citation);
        }
    }
    let rate = found as f64 / articles.len() as f64;
    assert!(rate >= 0.90, "self-retrieval rate {rate:.3}, misses: {misses:?}");
    println!(
        "ACCEPTANCE 4: PASS — {found}/{} titles retrieve their article in the top 3",
        articles.len()
    );
}

#[test]
fn acceptance_05_template_records_serialize_exactly() {
    let (original, contrastive) = template_pair();
    let original_json = serde_json::to_string(&original).unwrap();
    let contrastive_json = serde_json::to_string(&contrastive).unwrap();

    // exact field names, in writing order
    for (json, has_pair) in [(&original_json, false), (&contrastive_json, true)] {
        let mut expected = vec![
            "\"instruction\":",
            "\"answer\":",
            "\"output\":",
            "\"example_id\":",
            "\"gold_articles\":",
            "\"provenance\":",
        ];
        if has_pair {
            expected.push("\"pair_id\":");
        }
        let mut last = 0;
        for field in expected {
            let at = json.find(field).unwrap_or_else(|| panic!("missing {field} in {json}"));
            assert!(at > last || last == 0, "{field} out of order in {json}");
            last = at;
        }
    }
    assert!(original_json.contains("\"answer\":\"No\""));
    assert!(original_json.contains("\"gold_articles\":[\"GDPR Art. 6\"]"));
    assert!(original_json.contains("\"provenance\":\"case_derived\""));
    assert!(!original_json.contains("pair_id"), "absent pair_id must be skipped");
    assert!(contrastive_json.contains("\"answer\":\"Yes\""));
    assert!(contrastive_json.contains("\"provenance\":\"contrastive\""));
    assert!(contrastive_json.contains("\"pair_id\":\"ingenieria\""));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.jsonl");
    write_jsonl(&[original.clone(), contrastive.clone()], &path).unwrap();
    let read_back = read_jsonl(&path).unwrap();
    assert_eq!(read_back, vec![original, contrastive], "round trip changed records");
    println!("ACCEPTANCE 5: PASS — template records round-trip with exact field layout");
}

#[test]
fn acceptance_06_contrastive_integrity() {
    let (original, contrastive) = template_pair();

    let verdict = validate_pair(&original, &contrastive);
    assert!(verdict.accepted, "template pair rejected: {:?}", verdict.failures);
    assert!(verdict.overlap >= MIRROR_OVERLAP_THRESHOLD);

    let self_verdict = validate_pair(&original, &original);
    assert!(!self_verdict.accepted, "a record must not pair with itself");

    // a generator that emits the template counterexample
    let candidate = serde_json::json!({
        "instruction": contrastive.instruction,
        "answer": "Yes",
        "output": contrastive.output,
    })
    .to_string();
    let mut generator = |_prompt: &str| Ok::<String, DatasetError>(candidate.clone());
    let produced = make_contrastive(&original, &mut generator, 3).unwrap();
    assert_eq!(produced.pair_id.as_deref(), Some("ingenieria"));
    assert_eq!(produced.example_id, "ingenieria-contrast");
    assert_eq!(produced.answer, Answer::Yes);
    assert_eq!(produced.gold_articles, vec![Citation::article("GDPR", 6)]);

    // a lazy generator that merely flips the answer must be rejected
    let lazy = serde_json::json!({
        "instruction": original.instruction,
        "answer": "Yes",
        "output": original.output,
    })
    .to_string();
    let mut lazy_generator = |_prompt: &str| Ok::<String, DatasetError>(lazy.clone());
    assert!(matches!(
        make_contrastive(&original, &mut lazy_generator, 2),
        Err(DatasetError::GenerationRejected { attempts: 2, .. })
    ));
    println!("ACCEPTANCE 6: PASS — pair validation accepts the template and rejects self-pairs");
}

fn synthetic_example(id: &str, answer: Answer, pair_id: Option<&str>) -> InstructionExample {
    InstructionExample {
        instruction: format!("Case {id}: the controller processed records. Compliant with GDPR?"),
        answer,
        output: format!("Verdict for case {id}, citing GDPR Article 6."),
        example_id: id.to_string(),
        gold_articles: vec![Citation::article("GDPR", 6)],
        provenance: if pair_id.is_some() {
            Provenance::Contrastive
        } else {
            Provenance::CaseDerived
        },
        pair_id: pair_id.map(str::to_string),
    }
}

#[test]
fn acceptance_07_balance_and_split_are_deterministic() {
    // 4 yes/no pairs plus 12 lone No records: skew 12/20 = 0.6
    let mut examples = Vec::new();
    for i in 0..4 {
        examples.push(synthetic_example(&format!("pair-{i}"), Answer::No, None));
        examples.push(synthetic_example(
            &format!("pair-{i}-contrast"),
            Answer::Yes,
            Some(&format!("pair-{i}")),
        ));
    }
    for i in 0..12 {
        examples.push(synthetic_example(&format!("lone-{i}"), Answer::No, None));
    }

    let balanced = balance(&examples, 17).unwrap();
    let yes = balanced.iter().filter(|e| e.answer == Answer::Yes).count();
    let no = balanced.len() - yes;
    let skew = (yes as f64 - no as f64).abs() / balanced.len() as f64;
    assert!(skew <= BALANCE_TOLERANCE, "skew {skew} after balancing");
    // pairs stay intact
    for ex in &balanced {
        if let Some(pair) = &ex.pair_id {
            assert!(balanced.iter().any(|o| &o.example_id == pair), "orphaned {pair}");
        }
    }

    let (train, validation) = split(&balanced, 0.75, 0.25, 17).unwrap();
    assert_eq!(train.len() + validation.len(), balanced.len());
    for ex in train.iter().chain(&validation) {
        if let Some(pair) = &ex.pair_id {
            let in_train = train.iter().any(|o| &o.example_id == pair);
            let here_train = train.iter().any(|o| o.example_id == ex.example_id);
            assert_eq!(in_train, here_train, "pair {pair} split across sets");
        }
    }

    // byte-for-byte determinism under a fixed seed
    let dir = tempfile::tempdir().unwrap();
    let write_all = |tag: &str| -> Vec<u8> {
        let balanced = balance(&examples, 17).unwrap();
        let (train, validation) = split(&balanced, 0.75, 0.25, 17).unwrap();
        let mut bytes = Vec::new();
        for (name, set) in [("balanced", &balanced), ("train", &train), ("val", &validation)] {
            let path = dir.path().join(format!("{tag}-{name}.jsonl"));
            write_jsonl(set, &path).unwrap();
            bytes.extend(std::fs::read(&path).unwrap());
        }
        bytes
    };
    assert_eq!(write_all("a"), write_all("b"), "same seed produced different bytes");
    println!(
        "ACCEPTANCE 7: PASS — balanced to skew {skew:.3}, split keeps pairs, output bytes stable"
    );
}

#[test]
fn acceptance_08_metrics_match_bruteforce_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);

    let run = |gold: &[&str], predicted: &[&str]| -> EvalReport {
        let items: Vec<BenchmarkItem> = gold
            .iter()
            .enumerate()
            .map(|(i, g)| BenchmarkItem {
                item_id: format!("i{i}"),
                kind: ItemKind::OpenEnded,
                prompt: format!("question {i}"),
                choices: None,
                gold_answer: g.to_string(),
                gold_articles: vec![],
                gold_actions: None,
            })
            .collect();
        let preds: Vec<Prediction> = predicted
            .iter()
            .enumerate()
            .map(|(i, p)| Prediction {
                item_id: format!("i{i}"),
                raw_text: p.to_string(),
                extracted_answer: match *p {
                    "Yes" => ExtractedAnswer::Yes,
                    "No" => ExtractedAnswer::No,
                    _ => ExtractedAnswer::Abstain,
                },
                cited_articles: vec![],
            })
            .collect();
        compute_metrics(&preds, &items, "oracle-check").unwrap()
    };

    // brute-force recount
    let oracle = |gold: &[&str], predicted: &[&str]| -> (f64, f64) {
        let n = gold.len() as f64;
        let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count() as f64;
        let mut f1s = [0.0f64; 2];
        for (slot, class) in ["Yes", "No"].iter().enumerate() {
            let tp = gold
                .iter()
                .zip(predicted)
                .filter(|(g, p)| *g == class && *p == class)
                .count() as f64;
            let fp = gold
                .iter()
                .zip(predicted)
                .filter(|(g, p)| *g != class && *p == class)
                .count() as f64;
            let fn_ = gold
                .iter()
                .zip(predicted)
                .filter(|(g, p)| *g == class && *p != class)
                .count() as f64;
            let denom = 2.0 * tp + fp + fn_;
            f1s[slot] = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        }
        (correct / n, (f1s[0] + f1s[1]) / 2.0)
    };

    for trial in 0..1000 {
        let n = rng.gen_range(1..=40);
        let gold: Vec<&str> = (0..n).map(|_| if rng.gen_bool(0.5) { "Yes" } else { "No" }).collect();
        let predicted: Vec<&str> = (0..n)
            .map(|_| match rng.gen_range(0..3) {
                0 => "Yes",
                1 => "No",
                _ => "Abstain",
            })
            .collect();
        let report = run(&gold, &predicted);
        let (acc, f1) = oracle(&gold, &predicted);
        assert!((report.accuracy - acc).abs() < 1e-9, "trial {trial}: accuracy");
        assert!((report.macro_f1 - f1).abs() < 1e-9, "trial {trial}: macro-F1");
    }

    // hand-verified cases
    let report = run(&["Yes", "No", "No", "Yes"], &["Yes", "Yes", "No", "No"]);
    assert!((report.accuracy - 0.5).abs() < 1e-9);
    assert!((report.macro_f1 - 0.5).abs() < 1e-9);
    let report = run(&["Yes", "No", "Yes", "No"], &["Yes", "Yes", "Yes", "Yes"]);
    assert!((report.accuracy - 0.5).abs() < 1e-9);
    assert!((report.macro_f1 - 1.0 / 3.0).abs() < 1e-9);
    println!("ACCEPTANCE 8: PASS — metrics match the brute-force oracle on 1000 random runs");
}

/// Backend that answers every benchmark item with its gold answer and gold
/// citations.
fn rigged_backend(items: Vec<BenchmarkItem>) -> impl ChatBackend {
    FnBackend(move |messages: &[ChatMessage]| {
        let question = &messages.last().expect("user message").content;
        let item = items
            .iter()
            .find(|i| question.contains(&i.prompt))
            .expect("question matches a benchmark item");
        let citations: Vec<String> = item
            .gold_articles
            .iter()
            .map(|c| format!("Article {} of GDPR", c.article))
            .collect();
        Ok(format!(
            "{}. This follows from {}.",
            item.gold_answer,
            if citations.is_empty() {
                "general principles".to_string()
            } else {
                citations.join(" and ")
            }
        ))
    })
}

#[test]
fn acceptance_09_stub_runs_and_fixture_replay() {
    let benchmark = load_benchmark(&workspace_path("fixtures/benchmark.jsonl")).unwrap();

    // rigged to gold: perfect accuracy, High justification
    let rigged = rigged_backend(benchmark.clone());
    let report = run_eval(&rigged, None, &benchmark, 3, 1).unwrap();
    assert!((report.accuracy - 1.0).abs() < 1e-12, "accuracy {}", report.accuracy);
    assert_eq!(report.justification_quality, Some(Grade::High));

    // constant Yes: accuracy is exactly the gold-Yes fraction
    let yes_fraction = benchmark
        .iter()
        .filter(|i| i.kind != ItemKind::MultipleChoice && i.gold_answer == "Yes")
        .count() as f64
        / benchmark.len() as f64;
    let constant = legilm::gateway::ConstantStub("Yes.".to_string());
    let constant_report = run_eval(&constant, None, &benchmark, 3, 1).unwrap();
    assert!(
        (constant_report.accuracy - yes_fraction).abs() < 1e-12,
        "accuracy {} vs yes fraction {yes_fraction}",
        constant_report.accuracy
    );

    // record a run, replay it bit-for-bit from the transcript
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    let recorder = RecordingBackend::new(rigged_backend(benchmark.clone()));
    let mut recorded = run_eval(&recorder, None, &benchmark, 3, 1).unwrap();
    recorder.save(&transcript).unwrap();

    let replay = FixtureBackend::from_file(&transcript).unwrap();
    let mut replayed = run_eval(&replay, None, &benchmark, 3, 2).unwrap();
    recorded.model_name = "replay".to_string();
    replayed.model_name = "replay".to_string();
    assert_eq!(
        serde_json::to_string(&recorded).unwrap(),
        serde_json::to_string(&replayed).unwrap(),
        "replayed report differs from the recorded run"
    );
    println!("ACCEPTANCE 9: PASS — rigged 1.00/High, constant-Yes {yes_fraction:.2}, replay exact");
}

#[test]
fn acceptance_10_comparison_table() {
    let rows: [(&str, f64, f64, Grade); 8] = [
        ("LegiLM-Advanced", 0.6805, 0.6821, Grade::High),
        ("Saul-7B", 0.6210, 0.6315, Grade::High),
        ("InternLM-Law-7B", 0.4671, 0.4867, Grade::Medium),
        ("Lawyer-LLaMA-13B", 0.4532, 0.2302, Grade::Medium),
        ("ChatLaw-13B", 0.4276, 0.4263, Grade::Medium),
        ("GPT-4", 0.4235, 0.4385, Grade::Medium),
        ("DISC-Law-7B", 0.4160, 0.4399, Grade::Medium),
        ("Qwen-1.5-72B", 0.3141, 0.3387, Grade::Medium),
    ];
    // feed the reports shuffled; rendering must sort by accuracy
    let mut reports: Vec<EvalReport> = rows
        .iter()
        .map(|(name, acc, f1, grade)| EvalReport {
            model_name: name.to_string(),
            n_items: BTreeMap::new(),
            accuracy: *acc,
            macro_f1: *f1,
            justification_quality: Some(*grade),
            per_item: vec![],
        })
        .collect();
    reports.reverse();
    reports.swap(1, 5);
    let table = legilm::eval::render_report(&reports);

    assert!(table.contains("LegiLM-Advanced"), "table:\n{table}");
    assert!(table.contains("68.05% | 68.21 | High"), "table:\n{table}");
    let mut last = 0;
    for (name, acc, f1, grade) in rows {
        let row_start = table.find(name).unwrap_or_else(|| panic!("missing {name}"));
        assert!(row_start > last || last == 0, "{name} out of order:\n{table}");
        last = row_start;
        let line = table[row_start..].lines().next().unwrap();
        let expected = format!("{:.2}% | {:.2} | {}", acc * 100.0, f1 * 100.0, grade);
        assert!(line.contains(&expected), "row {line:?} lacks {expected:?}");
    }
    println!("ACCEPTANCE 10: PASS — comparison table renders all rows in accuracy order");
}

#[test]
fn acceptance_11_reported_numbers_disclaimer() {
    let readme = std::fs::read_to_string(workspace_path("README.md")).unwrap();
    assert!(
        readme.contains("not reproducible from this repository alone"),
        "README must state that published model scores are not reproducible here"
    );
    println!("ACCEPTANCE 11: PASS — README states the reported-score reproducibility caveat");
}
