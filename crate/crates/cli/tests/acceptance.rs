//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use radlabel_cli::RunConfig;
use radlabel_core::backend::{Client, GenerationParams, InFlightProbe, MockBackend, DEFAULT_MAX_IN_FLIGHT};
use radlabel_core::corpus::{AnnotatedReport, Code, Labels, Language, MentionClass, Report, TaxonomySpec};
use radlabel_core::extractor::{parse_text, Repair};
use radlabel_core::metrics::{count_mismatches, evaluate, meteor, PredictionRecord};
use radlabel_core::promptgen::{build_instruction, build_prompt, clauses, serialize_answer};
use radlabel_core::splitter::{label_shares, stratified_split, subsample, Subset};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

const CASIA_PROMPT: &str = "You are a helpful radiology assistant. Given a radiology report, classify each abnormality into a class. Output a valid JSON with each abnormality as key, and the class as value. The keys must be ['cardiomegaly', 'mass', 'pleural effusion', 'pneumonia', 'pneumothorax']. The values can be one of [-1, 1]. The values have the following interpretation: (1) the abnormality was mentioned, even with uncertainty, in the report e.g. 'A large pleural effusion', 'The cardiac contours are stable.', 'The cardiac size cannot be evaluated.';  (-1) the abnormality was not mentioned in the report, or the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'.";

const POS: MentionClass = MentionClass::Positive;
const NEG: MentionClass = MentionClass::Negative;
const UNC: MentionClass = MentionClass::Uncertain;

fn tax(findings: &[&str], classes: &[MentionClass]) -> TaxonomySpec {
    TaxonomySpec::new("acceptance", findings.iter().copied(), classes.iter().copied()).unwrap()
}

fn report(id: String, labels: Labels) -> AnnotatedReport {
    AnnotatedReport {
        report: Report {
            text: format!("report {id}"),
            id,
            language: Language::English,
            source: "acceptance".into(),
        },
        labels,
    }
}

fn prompt_fidelity() -> Check {
    let casia = tax(
        &["cardiomegaly", "mass", "pleural effusion", "pneumonia", "pneumothorax"],
        &[POS],
    );
    let got = build_instruction(&casia);
    ensure!(got == CASIA_PROMPT, "prompt differs:\n{got}");
    Ok(format!("{} characters identical", got.chars().count()))
}

fn grammar_matrix() -> Check {
    let pos_strict = "(1) the abnormality was positively mentioned in the report";
    let pos_lenient = "(1) the abnormality was mentioned, even with uncertainty, in the report";
    let neg = "(2) the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'";
    let unc =
        "(0) the abnormality was either: mentioned with uncertainty in the report,or mentioned with ambiguous language";
    let absent_lenient = "(-1) the abnormality was not mentioned in the report, or the abnormality was negatively mentioned in the report; e.g. 'No pneumothorax.'";
    let absent_strict = "(-1) the abnormality was not mentioned in the report";

    // (classes, value list, clause prefixes in order)
    let matrix: [(&[MentionClass], &str, Vec<&str>); 4] = [
        (&[POS], "[-1, 1]", vec![pos_lenient, absent_lenient]),
        (&[POS, NEG], "[-1, 1, 2]", vec![pos_lenient, neg, absent_strict]),
        (&[POS, UNC], "[-1, 0, 1]", vec![pos_strict, unc, absent_lenient]),
        (
            &[POS, NEG, UNC],
            "[-1, 0, 1, 2]",
            vec![pos_strict, neg, unc, absent_strict],
        ),
    ];
    for (classes, values, expected) in matrix {
        let t = tax(&["effusion"], classes);
        let got = clauses(&t);
        ensure!(got.len() == expected.len(), "{classes:?}: {} clauses", got.len());
        for (c, e) in got.iter().zip(&expected) {
            ensure!(c.starts_with(e), "{classes:?}: clause `{c}` does not start with `{e}`");
        }
        let prompt = build_instruction(&t);
        ensure!(
            prompt.contains(&format!("The values can be one of {values}.")),
            "{classes:?}: value list missing"
        );
        ensure!(
            prompt.contains(absent_lenient) == !classes.contains(&NEG),
            "{classes:?}: wrong (-1) clause"
        );
        ensure!(
            prompt.contains(pos_strict) == classes.contains(&UNC),
            "{classes:?}: wrong (1) clause"
        );
        ensure!(
            prompt.ends_with('.') && !prompt.ends_with(".."),
            "{classes:?}: bad ending"
        );
    }
    Ok("4 class combinations".into())
}

/// F1 through precision and recall; `None` when the cell has no positives at all.
fn oracle_f1(pairs: &[(Code, Code)], code: Code) -> (Option<f64>, usize) {
    let tp = pairs.iter().filter(|(p, g)| *p == code && *g == code).count() as f64;
    let fp = pairs.iter().filter(|(p, g)| *p == code && *g != code).count() as f64;
    let fnn = pairs.iter().filter(|(p, g)| *p != code && *g == code).count() as f64;
    if tp + fp + fnn == 0.0 {
        return (None, 0);
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (Some(f1), (tp + fnn) as usize)
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    }
}

fn metric_oracle() -> Check {
    let shapes: [&[MentionClass]; 4] = [&[POS], &[POS, NEG], &[POS, UNC], &[POS, NEG, UNC]];
    let names = ["a", "b", "c", "d", "e"];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let classes = shapes[i % 4];
        let t = tax(&names[..rng.gen_range(1..=5)], classes);
        let codes = t.allowed_codes();
        let n = rng.gen_range(1..=10);
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for r in 0..n {
            let mut draw = || -> Labels {
                t.findings()
                    .iter()
                    .map(|f| (f.clone(), codes[rng.gen_range(0..codes.len())]))
                    .collect()
            };
            let g = draw();
            let p = draw();
            golds.push(report(format!("r{r}"), g));
            preds.push(PredictionRecord {
                id: format!("r{r}"),
                labels: p,
                valid: true,
                repairs: Vec::new(),
                failure: None,
            });
        }
        let got = evaluate(&preds, &golds, &t).map_err(|e| format!("instance {i}: {e}"))?;

        let mut macro_cells: HashMap<Code, Vec<f64>> = HashMap::new();
        let (mut wsum, mut wtot) = (0.0, 0usize);
        for f in t.findings() {
            let pairs: Vec<(Code, Code)> = preds
                .iter()
                .zip(&golds)
                .map(|(p, g)| (p.labels[f], g.labels[f]))
                .collect();
            for class in t.mention_classes() {
                let (f1, support) = oracle_f1(&pairs, class.code());
                if let Some(v) = f1 {
                    macro_cells.entry(class.code()).or_default().push(v);
                    wsum += v * support as f64;
                }
                wtot += support;
            }
        }
        let mean = |code: Code| {
            macro_cells
                .get(&code)
                .filter(|v| !v.is_empty())
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        let expected_w = (wtot > 0).then(|| wsum / wtot as f64);
        ensure!(
            same(got.macro_pos_f1, mean(1)),
            "instance {i}: (+)F1 {:?} vs {:?}",
            got.macro_pos_f1,
            mean(1)
        );
        if classes.contains(&NEG) {
            ensure!(
                same(got.macro_neg_f1, mean(2)),
                "instance {i}: (-)F1 {:?} vs {:?}",
                got.macro_neg_f1,
                mean(2)
            );
        }
        ensure!(
            same(got.weighted_f1, expected_w),
            "instance {i}: (w)F1 {:?} vs {:?}",
            got.weighted_f1,
            expected_w
        );
        for (a, b) in [(got.macro_pos_f1, mean(1)), (got.weighted_f1, expected_w)] {
            if let (Some(a), Some(b)) = (a, b) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(format!("1000 instances, max |diff| {worst:.1e}"))
}

fn mismatch_rate() -> Check {
    let findings: Vec<String> = (0..14).map(|i| format!("finding {i}")).collect();
    let refs: Vec<&str> = findings.iter().map(String::as_str).collect();
    let t = tax(&refs, &[POS, NEG]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let golds: Vec<AnnotatedReport> = (0..750)
        .map(|r| {
            let labels = findings
                .iter()
                .map(|f| (f.clone(), [-1, 1, 2][rng.gen_range(0..3)]))
                .collect();
            report(format!("r{r}"), labels)
        })
        .collect();
    let mut out = Vec::new();
    for (target, expected) in [(684usize, 0.0651), (580, 0.0552)] {
        let flip: Vec<usize> = index::sample(&mut rng, 750 * 14, target).into_vec();
        let mut preds: Vec<PredictionRecord> = golds
            .iter()
            .map(|g| PredictionRecord {
                id: g.id().to_string(),
                labels: g.labels.clone(),
                valid: true,
                repairs: Vec::new(),
                failure: None,
            })
            .collect();
        for cell in flip {
            let (r, f) = (cell / 14, &findings[cell % 14]);
            let code = preds[r].labels[f];
            preds[r].labels[f] = if code == 1 { 2 } else { 1 };
        }
        let (n, rate) = count_mismatches(&preds, &golds, &t).map_err(|e| e.to_string())?;
        ensure!(n == target, "counted {n} mismatches, injected {target}");
        ensure!((rate - expected).abs() <= 1e-4, "rate {rate} for {target}");
        out.push(format!("{n} -> {rate:.4}"));
    }
    Ok(out.join(", "))
}

fn decorate(canonical: &str, rng: &mut ChaCha8Rng) -> String {
    let prefixes = [
        "",
        "Here is the JSON:\n",
        "Sure! ",
        "Output:",
        "\n\n  ",
        "Findings (see below):\n",
    ];
    let suffixes = ["", "\n", " Let me know if you need anything else.", "\n[end]"];
    let mut body = canonical.to_string();
    if rng.gen_bool(0.5) {
        body = body.replace('"', "'");
    }
    if rng.gen_bool(0.3) {
        body = body.replace(": ", ":").replace(", ", ",");
    }
    if rng.gen_bool(0.5) {
        body = format!("```json\n{body}\n```");
    }
    format!(
        "{}{body}{}",
        prefixes[rng.gen_range(0..prefixes.len())],
        suffixes[rng.gen_range(0..suffixes.len())]
    )
}

fn parser_robustness() -> Check {
    let shapes: [&[MentionClass]; 4] = [&[POS], &[POS, NEG], &[POS, UNC], &[POS, NEG, UNC]];
    let pool = [
        "atelectasis",
        "cardiomegaly",
        "pleural effusion",
        "lung nodule",
        "pneumothorax",
        "fracture",
        "edema",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..1000 {
        let k = rng.gen_range(1..=pool.len());
        let picked: Vec<&str> = index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|j| pool[j])
            .collect();
        let t = tax(&picked, shapes[i % 4]);
        let codes = t.allowed_codes();
        let labels: Labels = t
            .findings()
            .iter()
            .map(|f| (f.clone(), codes[rng.gen_range(0..codes.len())]))
            .collect();
        let text = decorate(&serialize_answer(&labels, &t), &mut rng);
        let parsed = parse_text(&text, &t);
        ensure!(
            parsed.valid && parsed.labels == labels,
            "case {i} not recovered: {text}"
        );
    }

    let t = tax(&["effusion", "mass", "pneumonia"], &[POS, NEG]);
    let missing = parse_text(r#"{"effusion": 1}"#, &t);
    ensure!(missing.valid, "missing keys made the answer invalid");
    ensure!(
        missing.labels["mass"] == -1 && missing.labels["pneumonia"] == -1,
        "missing keys not filled"
    );
    ensure!(
        missing
            .repairs
            .iter()
            .filter(|r| matches!(r, Repair::MissingKeyFilled { .. }))
            .count()
            == 2,
        "fills not recorded"
    );
    let out_of_range = parse_text(r#"{"effusion": 1, "mass": 0, "pneumonia": 2}"#, &t);
    ensure!(!out_of_range.valid, "code 0 accepted without an uncertain class");
    ensure!(
        out_of_range.labels["mass"] == -1 && out_of_range.labels["effusion"] == 1,
        "bad value handling"
    );
    let garbage = parse_text("no json here", &t);
    ensure!(
        !garbage.valid && garbage.labels == t.default_labels(),
        "unparseable answer accepted"
    );
    Ok("1000/1000 recovered, fill and flag cases hold".into())
}

fn synthetic_split_set() -> (TaxonomySpec, Vec<AnnotatedReport>) {
    let names: Vec<String> = (0..8).map(|l| format!("label {l}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let t = tax(&refs, &[POS]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rows: Vec<Labels> = (0..200).map(|_| t.default_labels()).collect();
    for (l, name) in names.iter().enumerate() {
        let support = 10 + (90 * l + 3) / 7;
        for r in index::sample(&mut rng, 200, support) {
            rows[r][name] = 1;
        }
    }
    let data = rows
        .into_iter()
        .enumerate()
        .map(|(i, labels)| report(format!("s{i:03}"), labels))
        .collect();
    (t, data)
}

fn split_quality() -> Check {
    let (t, data) = synthetic_split_set();
    let supports = radlabel_core::corpus::finding_supports(&data, &t);
    ensure!(supports[0] == 10 && supports[7] == 100, "fixture supports {supports:?}");
    let split = stratified_split(&data, &t, [0.7, 0.1, 0.2], 42).map_err(|e| e.to_string())?;
    let shares = label_shares(&data, &t, &split, Subset::Train);
    let mut worst = 0.0f64;
    for f in t.findings() {
        let d = (shares[f] - 0.7).abs();
        ensure!(d <= 0.05 + 1e-9, "{f}: train share {:.3}", shares[f]);
        worst = worst.max(d);
    }
    let bytes = |s: &radlabel_core::SplitAssignment| {
        let mut v = Vec::new();
        s.write_manifest(&mut v).unwrap();
        v
    };
    let again = stratified_split(&data, &t, [0.7, 0.1, 0.2], 42).map_err(|e| e.to_string())?;
    ensure!(bytes(&split) == bytes(&again), "rerun differs");
    Ok(format!(
        "supports {supports:?}, worst deviation {:.1} points, rerun identical",
        worst * 100.0
    ))
}

fn subsample_anchors() -> Check {
    let t = tax(&["a", "b", "c"], &[POS, NEG]);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let data: Vec<AnnotatedReport> = (0..1600)
        .map(|i| {
            let labels = t
                .findings()
                .iter()
                .map(|f| (f.clone(), [-1, 1, 2][rng.gen_range(0..3)]))
                .collect();
            report(format!("p{i}"), labels)
        })
        .collect();
    let a = subsample(&data, &t, 0.05, 42).map_err(|e| e.to_string())?.len();
    let b = subsample(&data, &t, 0.30, 42).map_err(|e| e.to_string())?.len();
    ensure!(a == 80 && b == 480, "got {a} and {b}");
    Ok("0.05 -> 80, 0.30 -> 480".into())
}

fn mock_run() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::write_fixture(dir.path());
    for args in [
        vec!["split", "--dataset", "fixture"],
        vec!["classify", "--dataset", "fixture", "--subset", "test"],
    ] {
        let out = common::radlabel(&config, &args);
        ensure!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let preds_path = dir.path().join("out/fixture.test.0shot.predictions.jsonl");
    let out = common::radlabel(
        &config,
        &[
            "eval",
            "--dataset",
            "fixture",
            "--predictions",
            preds_path.to_str().unwrap(),
        ],
    );
    ensure!(out.status.success(), "eval: {}", String::from_utf8_lossy(&out.stderr));

    let preds = common::read_lines(&preds_path);
    ensure!(preds.len() == 6, "{} predictions", preds.len());
    let invalid: Vec<&str> = preds
        .iter()
        .filter(|p| p["valid"] == false)
        .map(|p| p["id"].as_str().unwrap())
        .collect();
    ensure!(invalid == ["r6"], "invalid predictions {invalid:?}");
    let invalid_rate = invalid.len() as f64 / preds.len() as f64;

    let lines = common::read_lines(&dir.path().join("out/fixture.test.0shot.eval.jsonl"));
    let summary = lines.iter().find(|l| l["kind"] == "summary").ok_or("no summary line")?;
    let num = |v: &serde_json::Value| v.as_f64().unwrap_or(f64::NAN);
    let near = |a: f64, b: f64| (a - b).abs() <= 1e-12;

    // hand-computed: effusion +: tp2 fp1 fn1; effusion -: tp1; pneumonia +: tp1 fn2; pneumonia -: fn1
    let cells = [
        ("effusion", "positive", 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 3),
        ("effusion", "negative", 1.0, 1.0, 1.0, 1),
        ("pneumonia", "positive", 1.0, 1.0 / 3.0, 0.5, 3),
        ("pneumonia", "negative", 0.0, 0.0, 0.0, 1),
    ];
    for (finding, class, p, r, f1, support) in cells {
        let cell = lines
            .iter()
            .find(|l| l["kind"] == "cell" && l["finding"] == finding && l["class"] == class)
            .ok_or(format!("no cell {finding}/{class}"))?;
        ensure!(
            near(num(&cell["precision"]), p) && near(num(&cell["recall"]), r) && near(num(&cell["f1"]), f1),
            "{finding}/{class}: {cell}"
        );
        ensure!(
            cell["support"] == support,
            "{finding}/{class} support {}",
            cell["support"]
        );
    }
    ensure!(
        near(num(&summary["macro_pos_f1"]), 7.0 / 12.0),
        "(+)F1 {}",
        summary["macro_pos_f1"]
    );
    ensure!(
        near(num(&summary["macro_neg_f1"]), 0.5),
        "(-)F1 {}",
        summary["macro_neg_f1"]
    );
    ensure!(
        near(num(&summary["weighted_f1"]), 9.0 / 16.0),
        "(w)F1 {}",
        summary["weighted_f1"]
    );
    ensure!(
        near(num(&summary["invalid_rate"]), 1.0 / 6.0),
        "invalid rate {}",
        summary["invalid_rate"]
    );
    ensure!(summary["mismatches"] == 5, "mismatches {}", summary["mismatches"]);
    ensure!(
        near(num(&summary["mismatch_rate"]), 5.0 / 12.0),
        "mismatch rate {}",
        summary["mismatch_rate"]
    );
    ensure!(summary["n_reports"] == 6, "n_reports {}", summary["n_reports"]);
    Ok(format!(
        "invalid rate {:.2}%, eval report matches hand values",
        100.0 * invalid_rate
    ))
}

fn meteor_anchors() -> Check {
    let four = meteor("the heart is enlarged", "the heart is enlarged");
    let one = meteor("effusion", "effusion");
    let empty = meteor("", "the heart is enlarged");
    ensure!(four == 0.9921875, "4 tokens: {four}");
    ensure!(one == 0.5, "1 token: {one}");
    ensure!(empty == 0.0, "empty: {empty}");
    Ok(format!("{four}, {one}, {empty}"))
}

fn generation_contract() -> Check {
    let p = GenerationParams::default();
    ensure!(
        p.temperature == 0.5 && p.min_p == 0.1 && p.seed == 42,
        "sampling defaults {p:?}"
    );
    ensure!(p.stop.as_deref() == Some("}"), "stop {:?}", p.stop);
    ensure!(
        p.max_tokens_for(0) == 2048 && p.max_tokens_for(3) == 4096,
        "token budget"
    );
    let cfg = RunConfig::parse(common::FIXTURE_CONFIG, std::path::Path::new(".")).map_err(|e| e.to_string())?;
    ensure!(cfg.generation == p, "config defaults differ");
    ensure!(
        cfg.classify.max_in_flight == DEFAULT_MAX_IN_FLIGHT && DEFAULT_MAX_IN_FLIGHT == 64,
        "in-flight default"
    );

    let probe = InFlightProbe::new(MockBackend::echo(), Duration::from_millis(10));
    let client = Client::new(probe);
    ensure!(
        client.max_in_flight() == 64,
        "client default {}",
        client.max_in_flight()
    );
    let bundles: Vec<_> = (0..500)
        .map(|i| build_prompt("i", &[], &format!("report {i}")))
        .collect();
    let answers = client.complete_batch(&bundles, &p);
    ensure!(
        answers.len() == 500 && answers.iter().all(|a| !a.is_error()),
        "batch failed"
    );
    let peak = client.backend().peak();
    ensure!(peak <= 64, "peak in flight {peak}");
    Ok(format!("defaults hold, peak in flight {peak}/64"))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, u64, fn() -> Check);
    let criteria: [Criterion; 10] = [
        ("prompt fidelity", 1, prompt_fidelity),
        ("grammar matrix", 1, grammar_matrix),
        ("metric oracle equivalence", 10, metric_oracle),
        ("mismatch-rate consistency", 1, mismatch_rate),
        ("parser robustness", 5, parser_robustness),
        ("stratified split quality", 5, split_quality),
        ("subsample anchors", 1, subsample_anchors),
        ("end-to-end mock run", 5, mock_run),
        ("METEOR anchors", 1, meteor_anchors),
        ("generation contract", 5, generation_contract),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(detail) if took > Duration::from_secs(budget) => {
                Err(format!("{detail}; took {took:.2?}, budget {budget}s"))
            }
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({took:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({took:.2?}): {why}", i + 1);
            }
        }
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
