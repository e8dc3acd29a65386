use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use phonostudio::evolution::{evolve, write_log_jsonl, EsConfig};
use phonostudio::lexicon::{
    apply_filters, build_vocabularies, load_cmudict, load_wiktionary_tsv, split_train_test,
    LanguageSpec, Lexicon,
};
use phonostudio::models::{
    AnyGenome, Architecture, CnnGenome, Genome, Seq2SeqModel, TransformerGenome,
};
use phonostudio::training::{evaluate, train, TrainConfig};
use serde_json::{json, Value};
use studio::config::DEFAULT_STRIP_CHARS;
use studio::{load_prompts, AppState, Session, SessionConfig, Transcriber};

use crate::{
    Cli, Command, EvalArgs, EvolveArgs, LexiconCommand, PrepareArgs, ServeArgs, SplitArgs,
    TrainArgs, TranscribeArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T = ()> = Result<T, CliError>;

fn runtime(context: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", context.display()))
}

fn write_json(path: &Path, value: &Value) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| runtime(path, e))
}

fn load_lexicon(path: &Path) -> CliResult<Lexicon> {
    Lexicon::load_json(path).map_err(|e| runtime(path, e))
}

fn load_model(path: &Path) -> CliResult<Seq2SeqModel> {
    Seq2SeqModel::load(path).map_err(|e| runtime(path, e))
}

fn log_config(cli: &Cli, command: &str, settings: Value) {
    let effective = json!({
        "command": command,
        "seed": cli.seed,
        "no_timestamps": cli.no_timestamps,
        "settings": settings,
    });
    log::info!("effective configuration: {effective}");
}

fn timestamp(cli: &Cli, out: &mut Value, started: Instant, words: usize) {
    if cli.no_timestamps {
        return;
    }
    let elapsed = started.elapsed().as_secs_f64();
    out["generated_at"] = json!(chrono::Utc::now().to_rfc3339());
    out["elapsed_s"] = json!(elapsed);
    out["words_per_second"] = json!(words as f64 / elapsed.max(1e-9));
}

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Lexicon(LexiconCommand::Prepare(a)) => prepare(cli, a),
        Command::Lexicon(LexiconCommand::Split(a)) => split(cli, a),
        Command::Train(a) => train_cmd(cli, a),
        Command::Evolve(a) => evolve_cmd(cli, a),
        Command::Eval(a) => eval_cmd(cli, a),
        Command::Transcribe(a) => transcribe_cmd(cli, a),
        Command::Serve(a) => serve_cmd(cli, a),
    }
}

fn prepare(cli: &Cli, a: &PrepareArgs) -> CliResult {
    let report_path = a
        .report
        .clone()
        .unwrap_or_else(|| a.out.with_extension("report.json"));
    log_config(
        cli,
        "lexicon prepare",
        json!({ "spec": a.spec, "in": a.input, "cmudict": a.cmudict, "out": a.out, "report": report_path }),
    );
    let spec = a
        .spec
        .as_deref()
        .map(|p| LanguageSpec::from_json_file(p).map_err(|e| runtime(p, e)))
        .transpose()?;
    let lex = match (&a.input, &a.cmudict) {
        (Some(tsv), _) => {
            let spec = spec.ok_or_else(|| CliError::Usage("--in needs --spec".into()))?;
            load_wiktionary_tsv(tsv, &spec).map_err(|e| runtime(tsv, e))?
        }
        (None, Some(dict)) => {
            let mut lex = load_cmudict(dict).map_err(|e| runtime(dict, e))?;
            if let Some(spec) = spec {
                lex.spec = spec;
            }
            lex
        }
        (None, None) => {
            return Err(CliError::Usage(
                "one of --in or --cmudict is required".into(),
            ))
        }
    };
    let discarded = lex.ingest_stats().discarded_at_ingest;
    let (filtered, report) = apply_filters(lex);
    fs::write(&a.out, filtered.to_json().map_err(|e| runtime(&a.out, e))?)
        .map_err(|e| runtime(&a.out, e))?;
    let mut out = serde_json::to_value(report).expect("report serializes");
    out["discarded_at_ingest"] = json!(discarded);
    out["language_code"] = json!(filtered.spec.language_code);
    write_json(&report_path, &out)?;
    println!(
        "{}: {} words, {} pronunciations kept of {} records",
        a.out.display(),
        report.surviving_words,
        report.surviving_entries,
        report.input_records
    );
    println!(
        "removed: {} bad grapheme, {} length ratio, {} rare phoneme; {} duplicates collapsed; {} stress marks stripped",
        report.removed_bad_grapheme,
        report.removed_length_ratio,
        report.removed_rare_phoneme,
        report.collapsed_duplicates,
        report.stress_symbols_stripped
    );
    Ok(())
}

fn split(cli: &Cli, a: &SplitArgs) -> CliResult {
    log_config(
        cli,
        "lexicon split",
        json!({ "lexicon": a.lexicon, "test_fraction": a.test_fraction }),
    );
    let lex = load_lexicon(&a.lexicon)?;
    let (tr, te) = split_train_test(&lex, a.test_fraction, cli.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    for (lex, path) in [(&tr, &a.train_out), (&te, &a.test_out)] {
        fs::write(path, lex.to_json().map_err(|e| runtime(path, e))?)
            .map_err(|e| runtime(path, e))?;
    }
    println!("train: {} words, test: {} words", tr.len(), te.len());
    Ok(())
}

/// A genome JSON file, or comma-separated gene indices for `arch`.
pub fn parse_genome(spec: &str, arch: Architecture) -> CliResult<AnyGenome> {
    let path = PathBuf::from(spec);
    let genome = if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| runtime(&path, e))?;
        serde_json::from_str::<AnyGenome>(&text)
            .map_err(|e| CliError::Usage(format!("{spec}: {e}")))?
    } else {
        let indices = spec
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| {
                CliError::Usage(format!(
                    "--genome {spec:?} is neither a file nor a list of gene indices"
                ))
            })?;
        match arch {
            Architecture::Cnn => CnnGenome::from_gene_indices(&indices).map(Genome::into_any),
            Architecture::Transformer => {
                TransformerGenome::from_gene_indices(&indices).map(Genome::into_any)
            }
        }
        .map_err(|e| CliError::Usage(e.to_string()))?
    };
    if genome.architecture() != arch {
        return Err(CliError::Usage(format!(
            "genome is a {} genome but --arch is {arch}",
            genome.architecture()
        )));
    }
    Ok(genome)
}

fn train_cmd(cli: &Cli, a: &TrainArgs) -> CliResult {
    let genome = parse_genome(&a.genome, a.arch)?;
    let cfg = TrainConfig {
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: cli.seed,
        early_stopping: !a.no_early_stop,
        early_stop_window: a.early_stop_window,
        early_stop_threshold: a.early_stop_threshold,
        ..TrainConfig::default()
    };
    log_config(
        cli,
        "train",
        json!({ "lexicon": a.lexicon, "genome": genome, "max_len": a.max_len, "train": cfg, "out": a.out }),
    );
    let lex = load_lexicon(&a.lexicon)?;
    let (g, p) = build_vocabularies(&lex).map_err(|e| runtime(&a.lexicon, e))?;
    let mut model = Seq2SeqModel::new(genome, g, p, a.max_len, cli.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    model.set_language(Some(lex.spec.language_code.clone()));
    let history = train(&mut model, &lex, &cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    model.save(&a.out).map_err(|e| runtime(&a.out, e))?;
    if let Some(h) = &a.history {
        fs::write(h, history.to_csv()).map_err(|e| runtime(h, e))?;
    }
    println!(
        "{}: {} parameters, {} steps over {} epochs, final loss {:.4}{}",
        a.out.display(),
        model.param_count(),
        history.steps_run,
        history.epoch_losses.len(),
        history.step_losses.last().copied().unwrap_or(f64::NAN),
        if history.stopped_early {
            " (stopped early)"
        } else {
            ""
        }
    );
    Ok(())
}

fn evolve_cmd(cli: &Cli, a: &EvolveArgs) -> CliResult {
    let cfg = EsConfig {
        population_size: a.population,
        generations: a.generations,
        elite_fraction: a.elite_fraction,
        lessfit_parent_prob: a.lessfit_parent_prob,
        mutation_prob_per_gene: a.mutation_prob,
        fitness_epochs: a.fitness_epochs,
        fitness_holdout: a.holdout,
        train_cap: a.train_cap,
        seed: cli.seed,
        learning_rate: a.lr,
        max_len: a.max_len,
        early_stopping: !a.no_early_stop,
    };
    log_config(
        cli,
        "evolve",
        json!({ "lexicon": a.lexicon, "arch": a.arch, "jobs": a.jobs, "es": cfg }),
    );
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let lex = load_lexicon(&a.lexicon)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let outcome = pool
        .install(|| evolve(&lex, a.arch, &cfg))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    write_json(
        &a.out,
        &serde_json::to_value(outcome.best.genome).expect("genome serializes"),
    )?;
    let file = fs::File::create(&a.log).map_err(|e| runtime(&a.log, e))?;
    write_log_jsonl(BufWriter::new(file), &outcome.log).map_err(|e| runtime(&a.log, e))?;
    println!(
        "best genome {:?}: WER {:.2}%, PER {:.2}%, {} parameters (born in generation {})",
        outcome.best.genome,
        outcome.best.fitness_wer,
        outcome.best.fitness_per,
        outcome.best.param_count,
        outcome.best.generation_born
    );
    println!("best WER by generation: {:?}", outcome.best_so_far);
    Ok(())
}

fn eval_cmd(cli: &Cli, a: &EvalArgs) -> CliResult {
    log_config(
        cli,
        "eval",
        json!({ "ckpt": a.ckpt, "lexicon": a.lexicon, "report": a.report }),
    );
    let model = load_model(&a.ckpt)?;
    let lex = load_lexicon(&a.lexicon)?;
    let started = Instant::now();
    let report = evaluate(&model, &lex).map_err(|e| CliError::Runtime(e.to_string()))?;
    let elapsed = started.elapsed().as_secs_f64();
    let mut out = json!({
        "checkpoint": a.ckpt,
        "lexicon": a.lexicon,
        "architecture": model.architecture(),
        "param_count": model.param_count(),
        "wer": report.wer,
        "per": report.per,
        "n_words": report.n_words,
        "per_word": report.per_word,
    });
    timestamp(cli, &mut out, started, report.n_words);
    write_json(&a.report, &out)?;
    print!("{}", report.to_table(&a.lexicon.display().to_string()));
    println!(
        "{} words in {:.2} s ({:.1} words/s)",
        report.n_words,
        elapsed,
        report.n_words as f64 / elapsed.max(1e-9)
    );
    Ok(())
}

fn build_transcriber(
    ckpt: &Path,
    lexicon: Option<&Path>,
    language: Option<&str>,
    strip: &str,
) -> CliResult<(Transcriber, String)> {
    let model = load_model(ckpt)?;
    let lex = lexicon.map(load_lexicon).transpose()?;
    let language = language
        .map(str::to_string)
        .or_else(|| model.language().map(str::to_string))
        .or_else(|| lex.as_ref().map(|l| l.spec.language_code.clone()))
        .unwrap_or_else(|| "und".to_string());
    let mut t = Transcriber::new(strip);
    t.add_language(&language, model, lex.as_ref());
    Ok((t, language))
}

fn transcribe_cmd(cli: &Cli, a: &TranscribeArgs) -> CliResult {
    let strip = a
        .strip_chars
        .clone()
        .unwrap_or_else(|| DEFAULT_STRIP_CHARS.to_string());
    log_config(
        cli,
        "transcribe",
        json!({ "ckpt": a.ckpt, "lexicon": a.lexicon, "file": a.file, "out": a.out, "strip_chars": strip }),
    );
    let (t, language) = build_transcriber(&a.ckpt, a.lexicon.as_deref(), None, &strip)?;
    let lines: Vec<String> = match (&a.text, &a.file) {
        (Some(text), _) => vec![text.clone()],
        (None, Some(f)) => fs::read_to_string(f)
            .map_err(|e| runtime(f, e))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
        (None, None) => {
            return Err(CliError::Usage(
                "one of --text or --file is required".into(),
            ))
        }
    };
    let started = Instant::now();
    let mut results = Vec::with_capacity(lines.len());
    let mut words = 0;
    for line in &lines {
        let out = t
            .transcribe(line, &language)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        words += out.len();
        let phonetic: Vec<Vec<String>> = out.iter().map(|w| w.phonemes.clone()).collect();
        println!("{}", studio::prompts::sidecar_line(&phonetic));
        results.push(json!({ "text": line, "words": out }));
    }
    let elapsed = started.elapsed().as_secs_f64();
    if let Some(path) = &a.out {
        let mut out = json!({ "language": language, "lines": results });
        timestamp(cli, &mut out, started, words);
        write_json(path, &out)?;
    }
    // Keeps stdout usable as a phonetic sidecar file.
    eprintln!(
        "{words} words in {elapsed:.3} s ({:.1} words/s)",
        words as f64 / elapsed.max(1e-9)
    );
    Ok(())
}

fn serve_cmd(cli: &Cli, a: &ServeArgs) -> CliResult {
    let cfg = SessionConfig::load(&a.config).map_err(|e| CliError::Runtime(e.to_string()))?;
    log_config(
        cli,
        "serve",
        json!({ "session": cfg, "prompts": a.prompts, "phonetic": a.phonetic, "ckpt": a.ckpt, "lexicon": a.lexicon, "bind": a.bind }),
    );
    let prompts = load_prompts(&a.prompts, a.phonetic.as_deref())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let transcriber = match &a.ckpt {
        Some(ckpt) => {
            build_transcriber(
                ckpt,
                a.lexicon.as_deref(),
                a.language.as_deref(),
                &cfg.strip_chars,
            )?
            .0
        }
        None => Transcriber::new(&cfg.strip_chars),
    };
    let session = Session::open(cfg, prompts).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!(
        "session {} with {} prompts in {}",
        session.session_id,
        session.prompts.len(),
        session.storage_dir().display()
    );
    let state = AppState::new(session, transcriber);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.bind)
            .await
            .map_err(|e| CliError::Runtime(format!("{}: {e}", a.bind)))?;
        println!(
            "listening on http://{}",
            listener
                .local_addr()
                .map_err(|e| CliError::Runtime(e.to_string()))?
        );
        studio::serve(listener, state)
            .await
            .map_err(|e| CliError::Runtime(e.to_string()))
    })
}
