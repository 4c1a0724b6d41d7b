//! `hunkfix`: command-line driver for corpus handling, training,
//! localization, repair and evaluation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use hunkfix_core::config::Config;
use hunkfix_core::corpus::{mine_corpus, read_corpus, write_corpus, BugCase};
use hunkfix_core::embed::EmbeddingTable;
use hunkfix_core::expansion::StatementClassifier;
use hunkfix_core::hunkdetect::MlpPairScorer;
use hunkfix_core::lang::{check, coverage, execute, parse, TestCase};
use hunkfix_core::pipeline::{
    desk_corpus, evaluate, fix_case, localize, summarizer_for, train_embeddings, train_repair, train_scorer,
    train_statement_classifier, Models,
};
use serde_json::json;
use similar::TextDiff;

#[derive(Parser, Debug)]
#[command(name = "hunkfix", version, about = "Multi-hunk, multi-statement program repair for the mini language")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides one configuration key, e.g. `--set repair.beam_width=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Directory for the files a command writes.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parses and type-checks a program; writes ast.json.
    Parse { file: PathBuf },
    /// Runs a program against a directory of `*.test.json` files; writes coverage.json.
    Run {
        file: PathBuf,
        #[arg(long)]
        tests: PathBuf,
    },
    /// Extracts training pairs, hunk sets and classifier windows from a corpus.
    Mine {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Generates a corpus of seeded bugs.
    Seed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 60)]
        count: usize,
        #[arg(long, default_value = "bug")]
        prefix: String,
    },
    /// Trains token embeddings.
    TrainEmbed(Train),
    /// Trains the fixed-together pair scorer (needs embeddings).
    TrainPairscorer(Train),
    /// Trains the buggy-statement classifier (needs embeddings).
    TrainClassifier(Train),
    /// Trains the tree-to-tree repair models (needs embeddings).
    TrainRepair(Train),
    /// Ranks suspicious statements and groups the hunks of one bug.
    Localize(BugArgs),
    /// Repairs one bug; writes patches.json, report.json and patch.diff.
    Fix {
        #[command(flatten)]
        bug: BugArgs,
        /// Candidates validated per hunk group.
        #[arg(long)]
        topk: Option<usize>,
    },
    /// Repairs every bug of a corpus and tabulates the results by bug type.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args, Debug)]
struct Train {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    models: PathBuf,
}

#[derive(Args, Debug)]
struct BugArgs {
    #[arg(long)]
    bug: PathBuf,
    #[arg(long)]
    models: PathBuf,
}

enum Failure {
    Usage(String),
    Data(String),
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

type Outcome = Result<(), Failure>;

fn config(g: &Global) -> Result<Config, Failure> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).map_err(data)?,
        None => Config::default(),
    };
    for o in &g.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(0, k.trim(), v.trim()).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.derive_seeds();
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    let p = dir.join(name);
    fs::write(&p, text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
}

fn write_json(dir: &Path, name: &str, v: &impl serde::Serialize) -> Outcome {
    write(dir, name, &serde_json::to_string_pretty(v).map_err(data)?)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_tests(dir: &Path) -> Result<Vec<TestCase>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".test.json"))
        .collect();
    files.sort();
    files.iter().map(|f| serde_json::from_str(&read(f)?).map_err(|e| Failure::Data(format!("{}: {e}", f.display())))).collect()
}

fn corpus(dir: &Path) -> Result<Vec<BugCase>, Failure> {
    let (cases, errors) = read_corpus(dir).map_err(data)?;
    for e in errors {
        eprintln!("skipped: {e}");
    }
    Ok(cases)
}

fn history(name: &str, h: &[f64]) {
    match (h.first(), h.last()) {
        (Some(a), Some(b)) => println!("{name}: {} epochs, loss {a:.4} -> {b:.4}", h.len()),
        _ => println!("{name}: no epochs"),
    }
}

fn load_table(models: &Path) -> Result<Arc<EmbeddingTable>, Failure> {
    EmbeddingTable::load(&models.join("embeddings.txt")).map(Arc::new).map_err(|e| Failure::Data(format!("{e} (run train-embed first)")))
}

fn run(cli: Cli) -> Outcome {
    let cfg = config(&cli.global)?;
    let out = &cli.global.out;
    match cli.command {
        Command::Parse { file } => {
            let program = parse(&read(&file)?).map_err(|e| Failure::Data(format!("{}: {e}", file.display())))?;
            check(&program).map_err(|e| Failure::Data(format!("{}: {e}", file.display())))?;
            write_json(out, "ast.json", &program)?;
            println!("{} methods, {} statements", program.methods().len(), program.statement_ids().len());
        }
        Command::Run { file, tests } => {
            let program = parse(&read(&file)?).map_err(|e| Failure::Data(format!("{}: {e}", file.display())))?;
            let tests = read_tests(&tests)?;
            for t in &tests {
                let o = execute(&program, t, false);
                let verdict = if o.passed { "PASS" } else { "FAIL" };
                match &o.error {
                    Some(e) => println!("{verdict} {}: {e}", t.name),
                    None => println!("{verdict} {}", t.name),
                }
            }
            write_json(out, "coverage.json", &coverage(&program, &tests))?;
        }
        Command::Mine { corpus: dir } => {
            let cases = corpus(&dir)?;
            let (mined, errors) = mine_corpus(&cases, cfg.expansion_window);
            for e in &errors {
                eprintln!("skipped: {e}");
            }
            let pairs: Vec<String> = mined.pairs.iter().map(|p| serde_json::to_string(p).map_err(data)).collect::<Result<_, _>>()?;
            write(out, "pairs.jsonl", &(pairs.join("\n") + "\n"))?;
            write_json(out, "hunk_sets.json", &mined.hunk_sets)?;
            write_json(out, "windows.json", &mined.windows)?;
            write_json(out, "shapes.json", &mined.shapes)?;
            println!("{} bugs, {} pairs, {} hunk sets, {} windows", cases.len() - errors.len(), mined.pairs.len(), mined.hunk_sets.len(), mined.windows.len());
        }
        Command::Seed { corpus: dir, count, prefix } => {
            let cases = desk_corpus(cfg.seed, count, &prefix);
            write_corpus(&dir, &cases).map_err(data)?;
            println!("{} bugs written to {}", cases.len(), dir.display());
        }
        Command::TrainEmbed(t) => {
            let (mined, _) = mine_corpus(&corpus(&t.corpus)?, cfg.expansion_window);
            let (table, h) = train_embeddings(&mined, &cfg).map_err(data)?;
            fs::create_dir_all(&t.models).map_err(data)?;
            table.save(&t.models.join("embeddings.txt")).map_err(data)?;
            history("embeddings", &h);
        }
        Command::TrainPairscorer(t) => {
            let table = load_table(&t.models)?;
            let (mined, _) = mine_corpus(&corpus(&t.corpus)?, cfg.expansion_window);
            let (scorer, h): (MlpPairScorer, _) = train_scorer(&mined, table, &cfg).map_err(data)?;
            scorer.save(&t.models, "pairscorer").map_err(data)?;
            history("pair scorer", &h);
        }
        Command::TrainClassifier(t) => {
            let table = load_table(&t.models)?;
            let (mined, _) = mine_corpus(&corpus(&t.corpus)?, cfg.expansion_window);
            let (classifier, h): (StatementClassifier<f32>, _) = train_statement_classifier(&mined, &table, &cfg).map_err(data)?;
            classifier.save(&t.models, "classifier").map_err(data)?;
            history("classifier", &h);
        }
        Command::TrainRepair(t) => {
            let table = load_table(&t.models)?;
            let summarizer = summarizer_for(table.dims, &cfg);
            let (models, h) = train_repair(&corpus(&t.corpus)?, &table, &summarizer, &cfg).map_err(data)?;
            models.save(&t.models.join("repair")).map_err(data)?;
            history("repair CTL", &h.ctl);
            history("repair TTL", &h.ttl);
        }
        Command::Localize(b) => {
            let case = BugCase::read(&b.bug).map_err(data)?;
            let models = Models::load(&b.models).map_err(data)?;
            let program = case.parse_before().map_err(data)?;
            let loc = localize(&program, &case.tests, &models, &cfg).map_err(data)?;
            write_json(out, "localization.json", &loc)?;
            for g in &loc.groups {
                let stmts: Vec<usize> = g.statements().into_iter().collect();
                println!("group {} (max suspiciousness {:.3}): statements {stmts:?}", g.rank, g.max_suspiciousness);
            }
        }
        Command::Fix { bug, topk } => {
            let mut cfg = cfg;
            if let Some(k) = topk {
                cfg.validate_top = k;
            }
            let case = BugCase::read(&bug.bug).map_err(data)?;
            let models = Models::load(&bug.models).map_err(data)?;
            let outcome = fix_case(&case, &models, &cfg).map_err(data)?;
            let patches: Vec<serde_json::Value> = outcome.validated.iter().map(|p| p.to_json()).collect();
            write_json(out, "patches.json", &json!({ "bugId": case.id, "patches": patches }))?;
            write_json(out, "report.json", &outcome.report)?;
            match &outcome.plausible {
                Some(c) => {
                    let diff = TextDiff::from_lines(case.before.as_str(), c.source.as_str())
                        .unified_diff()
                        .header("a/before/main.mini", "b/before/main.mini")
                        .to_string();
                    write(out, "patch.diff", &diff)?;
                    print!("{diff}");
                    println!("plausible patch at rank {} after {} candidates", outcome.report.plausible_rank.unwrap_or(0), outcome.report.tried);
                }
                None => println!("no plausible patch after {} candidates", outcome.report.tried),
            }
        }
        Command::Evaluate { corpus: dir, models, jobs } => {
            let cases = corpus(&dir)?;
            let models = Models::load(&models).map_err(data)?;
            let eval = evaluate(&cases, &models, &cfg, jobs.max(1));
            for r in &eval.results {
                if let Some(e) = &r.error {
                    eprintln!("{}: {e}", r.bug_id);
                }
            }
            let table = eval.table();
            write_json(out, "evaluation.json", &eval)?;
            write(out, "table.txt", &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
