use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use mre::corpus::{compose_references, generate_tiered, read_records, read_references, write_records, ReportRecord, TierSpec};
use mre::eval::{apply_labels, read_labels, render_csv, render_table, EvalReport};
use mre::features::{load_external, FeatureSpec, Featurizer, Layout};
use mre::loss::LossTerms;
use mre::model::{score_report, Arch, RewardModel};
use mre::pairing::{make_pairs, normalize_all, read_pairs, write_pairs, PairLine};
use mre::pipeline::{ablate_lambda, ablate_terms, baseline_reports, evaluate_model, render_ablation, ExperimentConfig, LAMBDA_GRID, TERMS_GRID};
use mre::scoring::{ScoringSystem, PRESETS};
use mre::train::{prepare_pairs, Trainer};

use crate::manifest::Recorder;
use crate::{
    AblateArgs, AblateWhat, ArchArg, Cli, CliError, Command, CompareArgs, EvalArgs, Format, GenArgs, LayoutArg, PairArgs,
    ScoreArgs, TermsArg, TrainArgs, TrainOverrides,
};

type Res<T = ()> = Result<T, CliError>;

pub fn run(cli: &Cli) -> Res {
    let ctx = Ctx { format: cli.format, config_dir: cli.config_dir.clone() };
    match &cli.command {
        Command::Gen(a) => gen(&ctx, a),
        Command::Pair(a) => pair(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Ablate(a) => ablate(&ctx, a),
    }
}

struct Ctx {
    format: Format,
    config_dir: Option<PathBuf>,
}

impl Ctx {
    /// Preset, then an existing path, then `<config dir>/<name>[.toml]`.
    fn system(&self, name: &str) -> Res<(ScoringSystem, Option<PathBuf>)> {
        if PRESETS.contains(&name) {
            return Ok((ScoringSystem::preset(name)?, None));
        }
        let mut candidates = vec![PathBuf::from(name)];
        if let Some(dir) = &self.config_dir {
            candidates.push(dir.join(name));
            candidates.push(dir.join(format!("{name}.toml")));
        }
        for c in candidates {
            if c.is_file() {
                return Ok((ScoringSystem::from_file(&c)?, Some(c)));
            }
        }
        Err(CliError::Usage(format!(
            "unknown scoring system {name:?}: not a preset ({}), a file, or a definition in the config directory",
            PRESETS.join(", ")
        )))
    }

    /// `--config`, else `experiment.toml` in the config directory, else defaults.
    fn experiment(&self, explicit: Option<&Path>) -> Res<(ExperimentConfig, Option<PathBuf>)> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => self.config_dir.as_ref().map(|d| d.join("experiment.toml")).filter(|p| p.is_file()),
        };
        match path {
            Some(p) => Ok((ExperimentConfig::from_file(&p)?, Some(p))),
            None => Ok((ExperimentConfig::default(), None)),
        }
    }

    fn print(&self, text: &str) -> Res {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes()).map_err(|e| CliError::Io(PathBuf::from("<stdout>"), e))
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &TrainOverrides) -> Res {
    if let Some(v) = o.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = o.batch {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.train_seed {
        cfg.train.seed = v;
    }
    if let Some(v) = o.step_size {
        cfg.train.step_size = v;
    }
    if let Some(v) = o.lambda {
        cfg.train.loss.lambda = v;
    }
    if let Some(t) = o.terms {
        cfg.train.loss.terms = match t {
            TermsArg::Both => LossTerms::Both,
            TermsArg::IndividualOnly => LossTerms::IndividualOnly,
            TermsArg::TotalOnly => LossTerms::TotalOnly,
        };
    }
    if let Some(a) = o.arch {
        cfg.arch = match a {
            ArchArg::Linear => Arch::Linear,
            ArchArg::Mlp => Arch::Mlp { hidden: o.hidden },
        };
    }
    if let Some(d) = o.dim {
        cfg.features = match cfg.features.clone() {
            FeatureSpec::HashedNgrams { word_n, char_n, layout, .. } => FeatureSpec::HashedNgrams { dim: d, word_n, char_n, layout },
            FeatureSpec::External { .. } => FeatureSpec::External { dim: d },
        };
    }
    if let Some(l) = o.layout {
        cfg.features = cfg.features.clone().with_layout(match l {
            LayoutArg::Edit => Layout::Edit,
            LayoutArg::Stacked => Layout::Stacked,
        });
    }
    cfg.features.validate()?;
    cfg.train.validate()?;
    Ok(())
}

fn featurizer(spec: &FeatureSpec, external: Option<&Path>, rec: Option<&mut Recorder>) -> Res<Featurizer> {
    match (spec, external) {
        (FeatureSpec::External { dim }, Some(p)) => {
            if let Some(r) = rec {
                r.input(p);
            }
            Ok(Featurizer::with_external(spec.clone(), load_external(p, *dim)?)?)
        }
        (FeatureSpec::External { .. }, None) => {
            Err(CliError::Usage("the model uses external features; pass --external <file>".into()))
        }
        (_, Some(_)) => Err(CliError::Usage("--external only applies to external feature specs".into())),
        (_, None) => Ok(Featurizer::new(spec.clone())?),
    }
}

fn gen(ctx: &Ctx, a: &GenArgs) -> Res {
    let mut rec = Recorder::start("gen");
    let (system, sys_file) = ctx.system(&a.system)?;
    if let Some(p) = &sys_file {
        rec.input(p);
    }
    let refs = match &a.references {
        Some(p) => {
            rec.input(p);
            read_references(p)?
        }
        None => {
            if a.refs == 0 {
                return Err(CliError::Usage("--refs must be at least 1".into()));
            }
            compose_references(a.refs, a.seed)
        }
    };
    let tiers = TierSpec::default_for(&system)?;
    let records = generate_tiered(&refs, &system, &tiers, a.seed)?;
    write_records(&records, &a.out)?;
    rec.config(json!({"system": system.name(), "references": refs.len(), "seed": a.seed}));
    rec.seed(a.seed);
    rec.finish(&[&a.out])?;
    eprintln!("wrote {} records for {} references to {}", records.len(), refs.len(), a.out.display());
    Ok(())
}

fn pair(ctx: &Ctx, a: &PairArgs) -> Res {
    let mut rec = Recorder::start("pair");
    let (system, sys_file) = ctx.system(&a.system)?;
    if let Some(p) = &sys_file {
        rec.input(p);
    }
    rec.input(&a.input);
    let records = read_records(&a.input, &system)?;
    let pairs = make_pairs(&records, &system)?;
    let pairs = if a.no_normalize { pairs } else { normalize_all(&pairs, &system)? };
    let lines: Vec<PairLine> = pairs.iter().map(PairLine::from).collect();
    write_pairs(&lines, &a.out)?;
    rec.config(json!({"system": system.name(), "normalize": !a.no_normalize}));
    rec.finish(&[&a.out])?;
    eprintln!("wrote {} pairs from {} records to {}", lines.len(), records.len(), a.out.display());
    Ok(())
}

fn log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".log.jsonl");
    out.with_file_name(name)
}

fn train(ctx: &Ctx, a: &TrainArgs) -> Res {
    let mut rec = Recorder::start("train");
    let (system, sys_file) = ctx.system(&a.system)?;
    if let Some(p) = &sys_file {
        rec.input(p);
    }
    let (mut cfg, cfg_file) = ctx.experiment(a.overrides.config.as_deref())?;
    if let Some(p) = &cfg_file {
        rec.input(p);
    }
    apply_overrides(&mut cfg, &a.overrides)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    rec.input(&a.pairs);
    let lines = read_pairs(&a.pairs, system.len())?;
    let feats = featurizer(&cfg.features, a.external.as_deref(), Some(&mut rec))?;
    let pairs = prepare_pairs::<f64>(&feats, &lines)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            rec.input(p);
            let t = Trainer::<f64>::resume(p, cfg.train.clone())?;
            if t.model().system_name() != system.name() || t.model().spec() != &cfg.features {
                return Err(CliError::Usage("checkpoint was trained for another system or feature spec".into()));
            }
            t
        }
        None => {
            let model = RewardModel::init(cfg.features.clone(), cfg.arch, system.name(), system.len(), cfg.train.seed)?;
            Trainer::new(model, cfg.train.clone())?
        }
    };
    trainer.run(&pairs)?;

    let log = a.log.clone().unwrap_or_else(|| log_path(&a.out));
    let text: String = trainer
        .log()
        .iter()
        .map(|e| serde_json::to_string(e).expect("log serializes") + "\n")
        .collect();
    std::fs::write(&log, text).map_err(|e| CliError::Io(log.clone(), e))?;
    let mut outputs: Vec<&Path> = vec![&a.out, &log];
    if let Some(p) = &a.checkpoint {
        trainer.checkpoint(p)?;
        outputs.push(p);
    }
    trainer.output_model().save(&a.out)?;

    rec.config(json!({"system": system.name(), "features": cfg.features, "arch": cfg.arch, "train": cfg.train}));
    rec.seed(cfg.train.seed);
    rec.finish(&outputs)?;

    let mut table = String::new();
    match ctx.format {
        Format::Csv => table.push_str("epoch,l_ind,l_tot,l_total,pair_accuracy\n"),
        Format::Table => table.push_str(&format!("{:>5}  {:>10}  {:>10}  {:>10}  {:>8}\n", "epoch", "l_ind", "l_tot", "l_total", "pair_acc")),
    }
    for e in trainer.log() {
        table.push_str(&match ctx.format {
            Format::Csv => format!("{},{},{},{},{}\n", e.epoch, e.l_ind, e.l_tot, e.l_total, e.pair_accuracy),
            Format::Table => format!("{:>5}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8.4}\n", e.epoch, e.l_ind, e.l_tot, e.l_total, e.pair_accuracy),
        });
    }
    ctx.print(&table)?;
    eprintln!("trained on {} pairs; model written to {}", pairs.len(), a.out.display());
    Ok(())
}

fn read_text(p: &Path) -> Res<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::Io(p.to_path_buf(), e))
}

fn load_model(p: &Path, system: Option<&ScoringSystem>) -> Res<RewardModel<f64>> {
    let m = RewardModel::<f64>::load(p, system.map(|s| s.name()))?;
    if let Some(s) = system {
        if m.n_out() != s.len() {
            return Err(CliError::Usage(format!("model has {} outputs; system {:?} has {}", m.n_out(), s.name(), s.len())));
        }
    }
    Ok(m)
}

/// System named on the command line, else the one the model was trained for.
fn system_for(ctx: &Ctx, explicit: Option<&str>, model: &Path) -> Res<(ScoringSystem, Option<PathBuf>)> {
    match explicit {
        Some(name) => ctx.system(name),
        None => {
            let m = RewardModel::<f64>::load(model, None)?;
            ctx.system(m.system_name())
        }
    }
}

fn score(ctx: &Ctx, a: &ScoreArgs) -> Res {
    let (system, _) = system_for(ctx, a.system.as_deref(), &a.model)?;
    let model = load_model(&a.model, Some(&system))?;
    let feats = featurizer(model.spec(), a.external.as_deref(), None)?;
    let reference = read_text(&a.reference)?;
    let candidate = read_text(&a.cand)?;
    let r = score_report(&model, &feats, &a.id, reference.trim(), candidate.trim())?;
    let mut out = String::new();
    let width = system.criteria().iter().map(|c| c.id.len()).max().unwrap_or(5).max(5);
    if ctx.format == Format::Csv {
        out.push_str("criterion,reward\n");
    }
    for (c, v) in system.criteria().iter().zip(&r.values) {
        out.push_str(&match ctx.format {
            Format::Csv => format!("{},{v}\n", c.id),
            Format::Table => format!("{:<width$}  {v:>10.6}\n", c.id),
        });
    }
    out.push_str(&match ctx.format {
        Format::Csv => format!("total,{}\n", r.total),
        Format::Table => format!("{:<width$}  {:>10.6}\n", "total", r.total),
    });
    ctx.print(&out)
}

fn labelled(records: Vec<ReportRecord>, human: Option<&Path>, system: &ScoringSystem, rec: &mut Recorder) -> Res<Vec<ReportRecord>> {
    match human {
        Some(p) => {
            rec.input(p);
            Ok(apply_labels(&records, &read_labels(p, system)?, system)?)
        }
        None => Ok(records),
    }
}

fn emit_reports(ctx: &Ctx, reports: &[EvalReport], out: Option<&Path>, rec: Recorder) -> Res {
    if let Some(p) = out {
        let csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        let text = if csv { render_csv(reports) } else { render_table(reports) };
        std::fs::write(p, &text).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
        rec.finish(&[p])?;
        eprintln!("report written to {}", p.display());
    }
    let text = match ctx.format {
        Format::Csv => render_csv(reports),
        Format::Table => render_table(reports),
    };
    ctx.print(&text)
}

fn eval(ctx: &Ctx, a: &EvalArgs) -> Res {
    let mut rec = Recorder::start("eval");
    let (system, sys_file) = system_for(ctx, a.system.as_deref(), &a.model)?;
    if let Some(p) = &sys_file {
        rec.input(p);
    }
    rec.input(&a.model);
    let model = load_model(&a.model, Some(&system))?;
    let feats = featurizer(model.spec(), a.external.as_deref(), Some(&mut rec))?;
    rec.input(&a.test);
    let test = labelled(read_records(&a.test, &system)?, a.human.as_deref(), &system, &mut rec)?;
    let fit = match &a.fit {
        Some(p) => {
            rec.input(p);
            Some(read_records(p, &system)?)
        }
        None => None,
    };
    let name = a.model.file_stem().map_or("learned".into(), |s| s.to_string_lossy().into_owned());
    let report = evaluate_model(&name, &model, &feats, &system, &test, fit.as_deref())?;
    rec.config(json!({"system": system.name(), "labels": a.human.is_some(), "fitted_thresholds": fit.is_some()}));
    emit_reports(ctx, &[report], a.report.as_deref(), rec)
}

fn compare(ctx: &Ctx, a: &CompareArgs) -> Res {
    let mut rec = Recorder::start("compare");
    let named: Vec<(String, PathBuf)> = a
        .models
        .iter()
        .map(|m| match m.split_once('=') {
            Some((n, p)) if !n.is_empty() => (n.to_string(), PathBuf::from(p)),
            _ => {
                let p = PathBuf::from(m);
                let n = p.file_stem().map_or("learned".into(), |s| s.to_string_lossy().into_owned());
                (n, p)
            }
        })
        .collect();
    let (system, sys_file) = system_for(ctx, a.system.as_deref(), &named[0].1)?;
    if let Some(p) = &sys_file {
        rec.input(p);
    }
    rec.input(&a.test);
    let test = labelled(read_records(&a.test, &system)?, a.human.as_deref(), &system, &mut rec)?;
    let mut reports = Vec::new();
    for (name, path) in &named {
        rec.input(path);
        let model = load_model(path, Some(&system))?;
        let feats = featurizer(model.spec(), a.external.as_deref(), None)?;
        let mut r = evaluate_model(name, &model, &feats, &system, &test, None)?;
        r.per_criterion.clear();
        reports.push(r);
    }
    reports.extend(baseline_reports(&test)?);
    rec.config(json!({"system": system.name(), "models": named.iter().map(|(n, _)| n).collect::<Vec<_>>()}));
    emit_reports(ctx, &reports, a.report.as_deref(), rec)
}

fn ablate(ctx: &Ctx, a: &AblateArgs) -> Res {
    let mut rec = Recorder::start("ablate");
    let (mut cfg, cfg_file) = ctx.experiment(a.overrides.config.as_deref())?;
    if let Some(p) = &cfg_file {
        rec.input(p);
    }
    if let Some(s) = &a.system {
        let (system, file) = ctx.system(s)?;
        cfg.system = match file {
            Some(f) => {
                rec.input(&f);
                f.display().to_string()
            }
            None => system.name().to_string(),
        };
    }
    if let Some(v) = a.refs {
        cfg.references = v;
    }
    if let Some(v) = a.held_out {
        cfg.held_out = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    apply_overrides(&mut cfg, &a.overrides)?;
    cfg.validate()?;
    let mut cells = Vec::new();
    if matches!(a.what, AblateWhat::Lambda | AblateWhat::All) {
        cells.extend(ablate_lambda(&cfg, &LAMBDA_GRID)?);
    }
    if matches!(a.what, AblateWhat::Terms | AblateWhat::All) {
        cells.extend(ablate_terms(&cfg, &TERMS_GRID)?);
    }
    let text = render_ablation(&cells, ctx.format == Format::Csv);
    if let Some(p) = &a.out {
        let file_text = if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            render_ablation(&cells, true)
        } else {
            render_ablation(&cells, false)
        };
        std::fs::write(p, file_text).map_err(|e| CliError::Io(p.clone(), e))?;
        rec.config(&cfg);
        rec.seed(cfg.seed);
        rec.finish(&[p])?;
    }
    ctx.print(&text)
}
