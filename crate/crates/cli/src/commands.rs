//! Subcommand definitions and their implementations.
//!
//! Every command first loads and checks all of its inputs (a failure there
//! is a validation error) and only then trains or decodes.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use nerxfer::adaptation::{
    assemble_target, transfer_train, tune_psi, TargetModel, TargetModelConfig, DEFAULT_PSI, DEFAULT_PSI_GRID,
    KIND_TARGET,
};
use nerxfer::autograd::Checkpoint;
use nerxfer::base_model::{train_source, SourceModel};
use nerxfer::baselines::{init_transfer, mult_init_train, mult_train, InitMode, MultConfig, MultOutcome};
use nerxfer::corpus_stats::{build_lexicon, read_corpus, FrequencyTable, LexiconConfig, PivotLexicon};
use nerxfer::embeddings::{
    learn_projection, solve_projection_closed_form, EmbeddingMatrix, ProjectionMatrix, ProjectionTrainConfig,
};
use nerxfer::pipeline::conll::write_conll;
use nerxfer::pipeline::data::{Dataset, SequenceExample};
use nerxfer::pipeline::eval::Metrics;
use nerxfer::pipeline::{ExperimentConfig, Report};
use nerxfer::synthetic::{bundled_config, SyntheticConfig, SyntheticTask};
use nerxfer::training::TrainReport;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "nerxfer", version, about = "Cross-domain transfer for BLSTM-CRF NER taggers")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` configuration file; command-line flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub max_epochs: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub dropout: Option<f64>,
    /// Also write the metrics report to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count word frequencies of a raw corpus (one sentence per line).
    Stats {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a pivot lexicon from two frequency tables.
    Lexicon {
        #[arg(long)]
        source_stats: PathBuf,
        #[arg(long)]
        target_stats: PathBuf,
        /// Extra word pairs, one `target source` pair per line.
        #[arg(long)]
        p2: Option<PathBuf>,
        #[arg(long)]
        top_k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn the target→source embedding projection.
    Project {
        #[arg(long)]
        source_emb: PathBuf,
        #[arg(long)]
        target_emb: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Solve the weighted least-squares problem exactly instead.
        #[arg(long)]
        closed_form: bool,
    },
    /// Train a source-domain tagger.
    TrainSource {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a source tagger to the target domain.
    Transfer {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_emb: PathBuf,
        #[arg(long)]
        projection: PathBuf,
        #[arg(long)]
        target_emb: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        /// Ratio of the base-layer to the adaptation-layer learning rate.
        #[arg(long, conflicts_with = "psi_grid")]
        psi: Option<f64>,
        /// Select ψ on dev F1; without a value uses 0.1, 0.2, …, 1.0.
        #[arg(long, num_args = 0..=1, default_missing_value = "", value_name = "LIST")]
        psi_grid: Option<String>,
    },
    /// Train one of the INIT / MULT baselines.
    Baseline {
        #[arg(long, value_enum)]
        method: Method,
        /// Pre-trained source model (INIT and MULT+INIT).
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long)]
        source_emb: PathBuf,
        /// Target embeddings; defaults to the source table.
        #[arg(long)]
        target_emb: Option<PathBuf>,
        /// Source training data (MULT variants).
        #[arg(long)]
        source_train: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Where MULT writes its source model.
        #[arg(long)]
        source_out: Option<PathBuf>,
    },
    /// Score a saved model on a CoNLL file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// The embedding table the model reads (the target table for adapted models).
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Tag raw text (one whitespace-tokenized sentence per line) as CoNLL.
    Tag {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic two-domain task to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// The small 20-sentence variant.
        #[arg(long)]
        small: bool,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    InitFrozen,
    InitFinetune,
    Mult,
    MultInit,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::InitFrozen => "init-frozen",
            Method::InitFinetune => "init-finetune",
            Method::Mult => "mult",
            Method::MultInit => "mult-init",
        }
    }
}

fn require_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{}: no such file", p.display())))
    }
}

fn require_parent(p: &Path) -> CliResult<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(invalid(format!("{}: directory does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

fn settings(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            require_file(p)?;
            ExperimentConfig::load(p).map_err(invalid)?
        }
        None => ExperimentConfig::default(),
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim());
    }
    let flags: [(&str, Option<String>); 4] = [
        ("seed", common.seed.map(|v| v.to_string())),
        ("max_epochs", common.max_epochs.map(|v| v.to_string())),
        ("learning_rate", common.learning_rate.map(|v| v.to_string())),
        ("dropout", common.dropout.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v);
        }
    }
    Ok(cfg)
}

fn emit(report: &Report, path: Option<&Path>) -> CliResult<()> {
    let text = report.render();
    print!("{text}");
    if let Some(p) = path {
        fs::write(p, text).map_err(|e| failed(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn load_embeddings(p: &Path) -> CliResult<Arc<EmbeddingMatrix>> {
    require_file(p)?;
    EmbeddingMatrix::load(p).map(Arc::new).map_err(invalid)
}

fn load_data(d: &DataArgs) -> CliResult<Dataset> {
    require_file(&d.train)?;
    for p in d.dev.iter().chain(&d.test) {
        require_file(p)?;
    }
    Dataset::load(&d.train, d.dev.as_deref(), d.test.as_deref()).map_err(invalid)
}

fn record_training(report: &mut Report, t: &TrainReport) {
    report.add_value("epochs_run", t.epochs_run());
    report.add_value("best_epoch", t.best_epoch);
    report.add_value("best_dev_f1", format!("{:.6}", t.best_dev_f1));
}

fn add_eval<F>(report: &mut Report, data: &Dataset, eval: F) -> CliResult<()>
where
    F: Fn(&[SequenceExample]) -> nerxfer::Result<Metrics>,
{
    if !data.dev.is_empty() {
        report.add_metrics("dev", eval(&data.dev).map_err(failed)?);
    }
    if !data.test.is_empty() {
        report.add_metrics("test", eval(&data.test).map_err(failed)?);
    }
    Ok(())
}

/// Either kind of saved tagger.
#[allow(clippy::large_enum_variant)]
enum Model {
    Base(SourceModel),
    Target(TargetModel),
}

impl Model {
    fn load(path: &Path, emb: Arc<EmbeddingMatrix>) -> CliResult<Self> {
        require_file(path)?;
        let bytes = fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let ck = Checkpoint::from_bytes(&bytes).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if ck.kind == KIND_TARGET {
            TargetModel::from_checkpoint(&ck, emb).map(Model::Target).map_err(invalid)
        } else {
            SourceModel::from_checkpoint(&ck, emb).map(Model::Base).map_err(invalid)
        }
    }

    fn predict(&self, tokens: &[String]) -> nerxfer::Result<Vec<String>> {
        match self {
            Model::Base(m) => m.predict(tokens),
            Model::Target(m) => m.predict(tokens),
        }
    }

    fn evaluate(&self, data: &[SequenceExample]) -> nerxfer::Result<Metrics> {
        match self {
            Model::Base(m) => m.evaluate(data),
            Model::Target(m) => m.evaluate(data),
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = settings(&cli.common)?;
    let report_path = cli.common.report.clone();
    if let Some(p) = &report_path {
        require_parent(p)?;
    }
    match cli.command {
        Command::Stats { corpus, out } => {
            require_file(&corpus)?;
            require_parent(&out)?;
            let table = read_corpus(&corpus).map_err(invalid)?;
            table.save(&out).map_err(failed)?;
            println!(
                "{} tokens, {} types, max count {}",
                table.total_tokens(),
                table.vocab_size(),
                table.max_count()
            );
            Ok(())
        }
        Command::Lexicon {
            source_stats,
            target_stats,
            p2,
            top_k,
            out,
        } => {
            require_file(&source_stats)?;
            require_file(&target_stats)?;
            if let Some(p) = &p2 {
                require_file(p)?;
            }
            require_parent(&out)?;
            let ft_s = FrequencyTable::load(&source_stats).map_err(invalid)?;
            let ft_t = FrequencyTable::load(&target_stats).map_err(invalid)?;
            let lc = LexiconConfig {
                top_k: match top_k {
                    Some(k) => k,
                    None => cfg.parse_or("top_k", LexiconConfig::default().top_k).map_err(invalid)?,
                },
                p2_path: p2,
            };
            let lex = build_lexicon(&ft_s, &ft_t, &lc).map_err(invalid)?;
            lex.save(&out).map_err(failed)?;
            println!(
                "{} pairs ({} identical, {} supplied)",
                lex.len(),
                lex.count(nerxfer::corpus_stats::Origin::P1),
                lex.count(nerxfer::corpus_stats::Origin::P2)
            );
            Ok(())
        }
        Command::Project {
            source_emb,
            target_emb,
            lexicon,
            out,
            closed_form,
        } => {
            let v_s = load_embeddings(&source_emb)?;
            let v_t = load_embeddings(&target_emb)?;
            require_file(&lexicon)?;
            require_parent(&out)?;
            let lex = PivotLexicon::load(&lexicon).map_err(invalid)?;
            let d = ProjectionTrainConfig::default();
            let pc = ProjectionTrainConfig {
                learning_rate: cfg.parse_or("projection_learning_rate", d.learning_rate).map_err(invalid)?,
                max_epochs: cfg.parse_or("projection_epochs", d.max_epochs).map_err(invalid)?,
                batch_size: cfg.parse_or("projection_batch_size", d.batch_size).map_err(invalid)?,
                rel_tol: cfg.parse_or("projection_rel_tol", d.rel_tol).map_err(invalid)?,
                seed: cfg.parse_or("seed", d.seed).map_err(invalid)?,
            };
            let mut report = Report::new("project", pc.seed, &cfg.hash());
            let (z, loss) = if closed_form {
                let fit = solve_projection_closed_form(&v_s, &v_t, &lex).map_err(failed)?;
                report.add_value("method", "closed-form");
                report.add_value("usable", fit.usable);
                report.add_value("skipped", fit.skipped);
                (fit.projection, fit.loss)
            } else {
                let fit = learn_projection(&v_s, &v_t, &lex, &pc).map_err(failed)?;
                report.add_value("method", "gradient-descent");
                report.add_value("usable", fit.usable);
                report.add_value("skipped", fit.skipped);
                report.add_value("epochs", fit.loss_history.len() - 1);
                report.add_value("lr_halvings", fit.lr_halvings);
                let loss = fit.final_loss();
                (fit.projection, loss)
            };
            report.add_value("loss", format!("{loss:.12e}"));
            z.save(&out).map_err(failed)?;
            emit(&report, report_path.as_deref())
        }
        Command::TrainSource { data, emb, out } => {
            let ds = load_data(&data)?;
            let v = load_embeddings(&emb)?;
            require_parent(&out)?;
            let tc = cfg.train_config().map_err(invalid)?;
            let bc = cfg.base_model_config(ds.label_set.clone(), v.dim()).map_err(invalid)?;
            let (model, t) = train_source(&ds, v, &bc, &tc).map_err(failed)?;
            model.save(&out).map_err(failed)?;
            let mut report = Report::new("train-source", tc.seed, &cfg.hash());
            record_training(&mut report, &t);
            add_eval(&mut report, &ds, |x| model.evaluate(x))?;
            emit(&report, report_path.as_deref())
        }
        Command::Transfer {
            source,
            source_emb,
            projection,
            target_emb,
            data,
            out,
            psi,
            psi_grid,
        } => {
            let v_s = load_embeddings(&source_emb)?;
            let v_t = load_embeddings(&target_emb)?;
            require_file(&source)?;
            require_file(&projection)?;
            let ds = load_data(&data)?;
            require_parent(&out)?;
            let src = SourceModel::load(&source, v_s).map_err(invalid)?;
            let z = ProjectionMatrix::load(&projection).map_err(invalid)?;
            let tc = cfg.train_config().map_err(invalid)?;
            let defaults = TargetModelConfig::for_source(&src.config, ds.label_set.clone());
            let psi = match psi {
                Some(p) => p,
                None => cfg.parse_or("psi", DEFAULT_PSI).map_err(invalid)?,
            };
            let tcfg = TargetModelConfig {
                sent_adapt_hidden: cfg.parse_or("sent_adapt_hidden", defaults.sent_adapt_hidden).map_err(invalid)?,
                out_adapt_hidden: cfg.parse_or("out_adapt_hidden", defaults.out_adapt_hidden).map_err(invalid)?,
                psi,
                alpha_adapt: cfg.parse_or("alpha_adapt", tc.learning_rate).map_err(invalid)?,
                seed: tc.seed,
                ..defaults
            };
            let grid = match psi_grid.as_deref() {
                None => cfg.list_f64("psi_grid").map_err(invalid)?,
                Some("") => Some(DEFAULT_PSI_GRID.to_vec()),
                Some(list) => {
                    let mut c = ExperimentConfig::default();
                    c.set("psi_grid", list);
                    c.list_f64("psi_grid").map_err(invalid)?
                }
            };
            for &p in grid.iter().flatten().chain([tcfg.psi].iter()) {
                TargetModelConfig { psi: p, ..tcfg.clone() }.validate().map_err(invalid)?;
            }
            // Dimension checks happen at assembly, before any training.
            let mut model = assemble_target(&src, z.clone(), v_t.clone(), tcfg.clone()).map_err(invalid)?;

            let mut report = Report::new("transfer", tc.seed, &cfg.hash());
            let train_report = match grid {
                Some(grid) => {
                    let search = tune_psi(&src, &z, v_t, &tcfg, &grid, &ds.train, ds.selection_set(), &tc)
                        .map_err(failed)?;
                    report.table.push(vec!["psi".into(), "dev F1".into(), "best epoch".into()]);
                    for t in &search.trials {
                        report.table.push(vec![
                            format!("{}", t.psi),
                            format!("{:.4}", t.dev_f1),
                            t.best_epoch.to_string(),
                        ]);
                    }
                    for t in &search.trials {
                        report.add_value(&format!("grid.{}", t.psi), format!("{:.6}", t.dev_f1));
                    }
                    model = search.best;
                    search.best_report
                }
                None => transfer_train(&mut model, &ds.train, ds.selection_set(), &tc).map_err(failed)?,
            };
            report.add_value("psi", model.config.psi);
            report.add_value("alpha_adapt", model.config.alpha_adapt);
            record_training(&mut report, &train_report);
            model.save(&out).map_err(failed)?;
            add_eval(&mut report, &ds, |x| model.evaluate(x))?;
            emit(&report, report_path.as_deref())
        }
        Command::Baseline {
            method,
            source,
            source_emb,
            target_emb,
            source_train,
            data,
            lambda,
            out,
            source_out,
        } => {
            let v_s = load_embeddings(&source_emb)?;
            let v_t = match &target_emb {
                Some(p) => load_embeddings(p)?,
                None => v_s.clone(),
            };
            let ds = load_data(&data)?;
            require_parent(&out)?;
            if let Some(p) = &source_out {
                require_parent(p)?;
            }
            let tc = cfg.train_config().map_err(invalid)?;
            let needs_source = matches!(method, Method::InitFrozen | Method::InitFinetune | Method::MultInit);
            let src = match (&source, needs_source) {
                (Some(p), true) => {
                    require_file(p)?;
                    Some(SourceModel::load(p, v_s.clone()).map_err(invalid)?)
                }
                (None, true) => return Err(invalid(format!("--source is required for {}", method.as_str()))),
                _ => None,
            };
            let src_data = match (&source_train, matches!(method, Method::Mult | Method::MultInit)) {
                (Some(p), true) => {
                    require_file(p)?;
                    Some(Dataset::load(p, None, None).map_err(invalid)?)
                }
                (None, true) => {
                    return Err(invalid(format!("--source-train is required for {}", method.as_str())))
                }
                _ => None,
            };
            let mult = MultConfig {
                lambda: match lambda {
                    Some(l) => l,
                    None => cfg.parse_or("lambda", 0.5).map_err(invalid)?,
                },
                seed: tc.seed,
            };
            mult.validate().map_err(invalid)?;

            let mut report = Report::new("baseline", tc.seed, &cfg.hash());
            report.add_value("method", method.as_str());
            let heterogeneous = v_s.fingerprint() != v_t.fingerprint();
            if heterogeneous {
                report.notes.push("warning: heterogeneous embeddings without projection".into());
            }
            report.add_value("heterogeneous", heterogeneous);
            let finish_mult = |out_m: MultOutcome, report: &mut Report| -> CliResult<SourceModel> {
                report.add_value("lambda", mult.lambda);
                report.add_value("source_draws", out_m.source_draws());
                report.add_value("steps", out_m.draws.len());
                record_training(report, &out_m.report);
                if let Some(p) = &source_out {
                    out_m.joint.source_model().map_err(failed)?.save(p).map_err(failed)?;
                }
                out_m.joint.target_model().map_err(failed)
            };
            let model = match method {
                Method::InitFrozen | Method::InitFinetune => {
                    let mode = if method == Method::InitFrozen { InitMode::Frozen } else { InitMode::FineTune };
                    let src = src.as_ref().expect("checked");
                    let o = init_transfer(src, v_t, &ds.label_set, &ds.train, ds.selection_set(), mode, &tc)
                        .map_err(failed)?;
                    record_training(&mut report, &o.report);
                    o.model
                }
                Method::Mult => {
                    let sd = src_data.as_ref().expect("checked");
                    let bc = cfg.base_model_config(sd.label_set.clone(), v_s.dim()).map_err(invalid)?;
                    let o = mult_train(&bc, &ds.label_set, v_s, v_t, &sd.train, &ds.train, ds.selection_set(), &mult, &tc)
                        .map_err(failed)?;
                    finish_mult(o, &mut report)?
                }
                Method::MultInit => {
                    let sd = src_data.as_ref().expect("checked");
                    let src = src.as_ref().expect("checked");
                    let o = mult_init_train(src, &ds.label_set, v_t, &sd.train, &ds.train, ds.selection_set(), &mult, &tc)
                        .map_err(failed)?;
                    finish_mult(o, &mut report)?
                }
            };
            model.save(&out).map_err(failed)?;
            add_eval(&mut report, &ds, |x| model.evaluate(x))?;
            emit(&report, report_path.as_deref())
        }
        Command::Evaluate { model, emb, data } => {
            let v = load_embeddings(&emb)?;
            require_file(&data)?;
            let m = Model::load(&model, v)?;
            let doc = nerxfer::pipeline::read_conll(&data).map_err(invalid)?;
            let examples = doc.examples;
            let seed = cfg.parse_or("seed", 0u64).map_err(invalid)?;
            let mut report = Report::new("evaluate", seed, &cfg.hash());
            report.add_value("sentences", examples.len());
            report.add_value("bio_repairs", doc.repairs);
            report.add_metrics("data", m.evaluate(&examples).map_err(failed)?);
            emit(&report, report_path.as_deref())
        }
        Command::Tag { model, emb, input, out } => {
            let v = load_embeddings(&emb)?;
            require_file(&input)?;
            if let Some(p) = &out {
                require_parent(p)?;
            }
            let m = Model::load(&model, v)?;
            let text = fs::read_to_string(&input).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
            let sentences: Vec<Vec<String>> = text
                .lines()
                .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .filter(|s| !s.is_empty())
                .collect();
            let mut tagged = Vec::with_capacity(sentences.len());
            for tokens in sentences {
                let labels = m.predict(&tokens).map_err(failed)?;
                tagged.push(SequenceExample { tokens, labels });
            }
            let mut buf = Vec::new();
            write_conll(&mut buf, &tagged).map_err(failed)?;
            match out {
                Some(p) => fs::write(&p, buf).map_err(|e| failed(format!("{}: {e}", p.display()))),
                None => {
                    print!("{}", String::from_utf8_lossy(&buf));
                    Ok(())
                }
            }
        }
        Command::Synth { out, small } => {
            let base = if small { bundled_config() } else { SyntheticConfig::default() };
            let seed = cfg.parse_or("seed", base.seed).map_err(invalid)?;
            let task = SyntheticTask::generate(&SyntheticConfig { seed, ..base }).map_err(invalid)?;
            task.write_to_dir(&out).map_err(failed)?;
            info!("wrote synthetic task to {}", out.display());
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}
