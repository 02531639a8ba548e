use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use tokmoe::encoder::EncoderConfig;
use tokmoe::eval::{
    build_degree_buckets, build_homophily_buckets, build_triobj_buckets, ood_accuracies, per_class_split,
    plan_for, run_perturb_suite, stratified_id_split, triobj_report, verify_frozen, BucketMap, MetricsReport,
    PerturbKind, SmallClass, SplitPlan, Table,
};
use tokmoe::graph::Graph;
use tokmoe::kernel::TrainRng;
use tokmoe::model::{Interface, Model, ModelConfig};
use tokmoe::theory::{run_verification, VerifyConfig};
use tokmoe::train::{
    finetune, load_checkpoint, pretrain, save_checkpoint, Checkpoint, FinetuneConfig, PretrainConfig, Split,
};

use crate::data::{self, SBM_KEYS};
use crate::error::{CliError, CliResult};
use crate::settings::Settings;

const COMMON_KEYS: [(&str, &str); 1] = [("dry_run", "false")];

const MODEL_KEYS: [(&str, &str); 8] = [
    ("hidden_dim", "768"),
    ("num_layers", "2"),
    ("k", "3"),
    ("moe_layers", "1"),
    ("batch_norm", "true"),
    ("codebook_size", "128"),
    ("d_q", "768"),
    ("interface", "quantized"),
];

const PRETRAIN_KEYS: [(&str, &str); 16] = [
    ("corpus", ""),
    ("seed", "0"),
    ("lr", "1e-4"),
    ("weight_decay", "1e-5"),
    ("epochs", "25"),
    ("batch_size", "1024"),
    ("aug_drop_rate", "0.2"),
    ("link_fraction", "0.1"),
    ("negative_ratio", "1.0"),
    ("gamma", "1.0"),
    ("beta", "0.25"),
    ("tau", "1.0"),
    ("vq_weight", "1.0"),
    ("feature_weight", "1.0"),
    ("link_weight", "1.0"),
    ("init_codebook", "true"),
];

const FINETUNE_KEYS: [(&str, &str); 18] = [
    ("dataset", ""),
    ("checkpoint", ""),
    ("seeds", "0"),
    ("split", "per_class"),
    ("train_per_class", "20"),
    ("val_size", "500"),
    ("test_size", "1000"),
    ("small_class", "exclude"),
    ("lr", "7.5e-3"),
    ("epochs", "1000"),
    ("patience", "200"),
    ("tau", "0.9"),
    ("dropout", "0.8"),
    ("lambda_lip", "2.5e-5"),
    ("weight_decay", "0.0"),
    ("freeze_vq", "true"),
    ("restore_best", "true"),
    ("threads", "0"),
];

const VERIFY_KEYS: [(&str, &str); 3] = [("instances", "100"), ("seed", "0"), ("fault_rhs_scale", "1.0")];

const REPORT_KEYS: [(&str, &str); 2] = [("input", ""), ("tolerance", "1e-9")];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Perturb,
    DegreeOod,
    HomophilyOod,
    Triobj,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Perturb => "perturb",
            Suite::DegreeOod => "degree_ood",
            Suite::HomophilyOod => "homophily_ood",
            Suite::Triobj => "triobj",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Pretrain,
    Finetune,
    Eval(Suite),
    Verify,
    Report,
}

impl Command {
    pub fn name(self) -> String {
        match self {
            Command::Pretrain => "pretrain".into(),
            Command::Finetune => "finetune".into(),
            Command::Eval(s) => format!("eval_{}", s.name()),
            Command::Verify => "verify".into(),
            Command::Report => "report".into(),
        }
    }

    /// Every key the command accepts, with its default.
    pub fn defaults(self) -> Vec<(&'static str, &'static str)> {
        let mut d: Vec<(&str, &str)> = COMMON_KEYS.to_vec();
        match self {
            Command::Pretrain => {
                d.extend(PRETRAIN_KEYS);
                d.extend(MODEL_KEYS);
                d.extend(SBM_KEYS);
            }
            Command::Finetune => {
                d.extend(FINETUNE_KEYS);
                d.extend(MODEL_KEYS);
                d.extend(SBM_KEYS);
                d.push(("save_checkpoints", "true"));
            }
            Command::Eval(suite) => {
                d.extend(FINETUNE_KEYS);
                d.extend(MODEL_KEYS);
                d.extend(SBM_KEYS);
                d.extend([("finetune", "true"), ("trials", "10")]);
                match suite {
                    Suite::Perturb => d.extend([("kind", "feature"), ("rates", "0.2,0.4,0.6,0.8")]),
                    Suite::Triobj => d.push(("mask_rates", "0.2,0.4,0.6,0.8")),
                    Suite::DegreeOod | Suite::HomophilyOod => {}
                }
            }
            Command::Verify => d.extend(VERIFY_KEYS),
            Command::Report => d.extend(REPORT_KEYS),
        }
        d
    }
}

/// Log file plus stderr echo for one command.
struct Run {
    out: PathBuf,
    log: Mutex<File>,
}

impl Run {
    fn open(cmd: Command, s: &Settings, seeds: &[u64]) -> CliResult<Self> {
        fs::create_dir_all(&s.out)?;
        let log = File::create(s.out.join(format!("{}.log", cmd.name())))?;
        let run = Self { out: s.out.clone(), log: Mutex::new(log) };
        run.log(&format!("command = {}", cmd.name()));
        for line in s.echo().lines() {
            run.log(line);
        }
        if !seeds.is_empty() {
            let list: Vec<String> = seeds.iter().map(u64::to_string).collect();
            run.log(&format!("resolved seeds = {}", list.join(",")));
        }
        Ok(run)
    }

    fn log(&self, line: &str) {
        eprintln!("{line}");
        let mut f = self.log.lock().expect("log lock");
        // The log is a convenience copy; a failed write must not abort the run.
        let _ = writeln!(f, "{line}");
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        self.log(&format!("wrote {}", path.display()));
        Ok(path)
    }
}

fn model_config(s: &Settings, in_dim: usize, num_classes: usize) -> CliResult<ModelConfig> {
    let interface = Interface::parse(s.str("interface"))
        .ok_or_else(|| CliError::Config(format!("interface must be quantized or identity, got {:?}", s.str("interface"))))?;
    Ok(ModelConfig {
        encoder: EncoderConfig {
            num_layers: s.usize("num_layers")?,
            hidden_dim: s.usize("hidden_dim")?,
            k: s.usize("k")?,
            tau: 1.0,
            dropout: 0.0,
            moe_layers: s.usize_list("moe_layers")?,
            batch_norm: s.bool("batch_norm")?,
        },
        in_dim,
        d_q: s.usize("d_q")?,
        codebook_size: s.usize("codebook_size")?,
        num_classes,
        interface,
    })
}

fn finetune_config(s: &Settings, seed: u64) -> CliResult<FinetuneConfig> {
    let cfg = FinetuneConfig {
        lr: s.f64("lr")?,
        epochs: s.usize("epochs")?,
        patience: s.usize("patience")?,
        tau: s.f64("tau")?,
        dropout: s.f64("dropout")?,
        lambda_lip: s.f64("lambda_lip")?,
        weight_decay: s.f64("weight_decay")?,
        seed,
        freeze_vq: s.bool("freeze_vq")?,
        restore_best: s.bool("restore_best")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn small_class(s: &Settings) -> CliResult<SmallClass> {
    match s.str("small_class") {
        "exclude" => Ok(SmallClass::Exclude),
        "error" => Ok(SmallClass::Error),
        other => Err(CliError::Config(format!("small_class must be exclude or error, got {other:?}"))),
    }
}

/// Training split for `finetune` and `eval perturb`.
fn id_split(s: &Settings, g: &Graph, seed: u64) -> CliResult<Split> {
    match s.str("split") {
        "per_class" => Ok(per_class_split(
            g,
            s.usize("train_per_class")?,
            s.usize("val_size")?,
            s.usize("test_size")?,
            seed,
        )?),
        "random" => Ok(stratified_id_split(&g.labeled_nodes(), g.labels(), seed, small_class(s)?)?.as_split()),
        other => Err(CliError::Config(format!("split must be per_class or random, got {other:?}"))),
    }
}

/// Starting point of fine-tuning: the checkpoint if one is given, else a
/// fresh model seeded by `seed`.
fn starting_model(s: &Settings, base: Option<&Model>, g: &Graph, seed: u64) -> CliResult<Model> {
    let mut model = match base {
        Some(m) => {
            if m.cfg.in_dim != g.feature_dim() {
                return Err(tokmoe::Error::Dimension(format!(
                    "checkpoint expects {} input features, dataset has {}",
                    m.cfg.in_dim,
                    g.feature_dim()
                ))
                .into());
            }
            m.clone()
        }
        None => Model::init(model_config(s, g.feature_dim(), g.num_classes())?, &mut TrainRng::new(seed))?,
    };
    if base.is_some() {
        model.cfg.interface = model_config(s, g.feature_dim(), 0)?.interface;
    }
    Ok(model)
}

fn load_base(s: &Settings) -> CliResult<Option<Model>> {
    match s.opt_path("checkpoint") {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Data(format!("checkpoint {} does not exist", p.display())));
            }
            Ok(Some(load_checkpoint(&p)?.model))
        }
        None => Ok(None),
    }
}

/// Runs `f` once per seed on up to `threads` workers; results keep seed order.
fn par_map<T: Send>(seeds: &[u64], threads: usize, f: impl Fn(u64) -> CliResult<T> + Sync) -> CliResult<Vec<T>> {
    let auto = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let workers = if threads == 0 { auto } else { threads }.clamp(1, seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CliResult<T>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = f(seeds[i]);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

fn checkpoint_with(model: Model, s: &Settings, epoch: u64, best_val: Option<f64>) -> Checkpoint {
    let mut ck = Checkpoint::new(model);
    ck.config = s.pairs();
    ck.epoch = epoch;
    ck.best_val = best_val;
    ck
}

pub fn run(cmd: Command, s: &Settings) -> CliResult<()> {
    if s.bool("dry_run")? {
        print!("command = {}\n{}", cmd.name(), s.echo());
        return Ok(());
    }
    match cmd {
        Command::Pretrain => run_pretrain(s),
        Command::Finetune => run_finetune(s),
        Command::Eval(suite) => run_eval(suite, s),
        Command::Verify => run_verify(s),
        Command::Report => run_report(s),
    }
}

fn run_pretrain(s: &Settings) -> CliResult<()> {
    let seed = s.u64("seed")?;
    let cfg = PretrainConfig {
        lr: s.f64("lr")?,
        weight_decay: s.f64("weight_decay")?,
        epochs: s.usize("epochs")?,
        batch_size: s.usize("batch_size")?,
        aug_drop_rate: s.f64("aug_drop_rate")?,
        link_fraction: s.f64("link_fraction")?,
        negative_ratio: s.f64("negative_ratio")?,
        gamma: s.f64("gamma")?,
        beta: s.f64("beta")?,
        tau: s.f64("tau")?,
        seed,
        vq_weight: s.f64("vq_weight")?,
        feature_weight: s.f64("feature_weight")?,
        link_weight: s.f64("link_weight")?,
        init_codebook: s.bool("init_codebook")?,
    };
    cfg.validate()?;
    let corpus = data::load_all(s.str("corpus"), s)?;
    let in_dim = corpus[0].feature_dim();
    if let Some(g) = corpus.iter().find(|g| g.feature_dim() != in_dim) {
        return Err(tokmoe::Error::Dimension(format!(
            "corpus mixes feature widths {in_dim} and {}",
            g.feature_dim()
        ))
        .into());
    }
    let mut model = Model::init(model_config(s, in_dim, 0)?, &mut TrainRng::new(seed))?;

    let run = Run::open(Command::Pretrain, s, &[seed])?;
    run.log(&format!("corpus: {} graphs, {} features", corpus.len(), in_dim));
    let epochs = pretrain(&corpus, &cfg, &mut model)?;
    let mut csv = String::from("epoch,total,vq,feature,link\n");
    for e in &epochs {
        csv.push_str(&format!("{},{:?},{:?},{:?},{:?}\n", e.epoch, e.total, e.vq, e.feature, e.link));
        run.log(&format!("epoch {:>4}  loss {:.6}", e.epoch, e.total));
    }
    run.write("pretrain_loss.csv", &csv)?;
    let ck = checkpoint_with(model, s, epochs.len() as u64, None);
    let path = s.out.join("pretrain.ckpt");
    save_checkpoint(&ck, &path)?;
    run.log(&format!("wrote {}", path.display()));
    Ok(())
}

fn run_finetune(s: &Settings) -> CliResult<()> {
    let seeds = s.seeds("seeds")?;
    let threads = s.usize("threads")?;
    let save = s.bool("save_checkpoints")?;
    finetune_config(s, 0)?;
    let g = data::load(s.str("dataset"), s)?;
    let base = load_base(s)?;
    if base.is_some() {
        starting_model(s, base.as_ref(), &g, 0)?;
    }
    let run = Run::open(Command::Finetune, s, &seeds)?;
    run.log(&format!("dataset: {} nodes, {} features, {} classes", g.n(), g.feature_dim(), g.num_classes()));

    let rows = par_map(&seeds, threads, |seed| {
        let split = id_split(s, &g, seed)?;
        let mut model = starting_model(s, base.as_ref(), &g, seed)?;
        let res = finetune(&g, &split, &finetune_config(s, seed)?, &mut model)?;
        run.log(&format!(
            "seed {seed}: best_epoch {} val_acc {:.4} test_acc {:.4}",
            res.best_epoch, res.best_val, res.test_acc
        ));
        if save {
            let ck = checkpoint_with(model, s, res.best_epoch as u64, Some(res.best_val));
            let path = s.out.join(format!("finetune_seed{seed}.ckpt"));
            save_checkpoint(&ck, &path)?;
        }
        Ok((seed, vec![res.best_epoch as f64, res.best_val, res.test_acc]))
    })?;
    let mut table = Table::new(vec!["best_epoch".into(), "val_acc".into(), "test_acc".into()]);
    for (seed, row) in rows {
        table.push(seed, row)?;
    }
    run.write("finetune.csv", &table.to_csv())?;
    let summary = summary_text(&table);
    print!("{summary}");
    run.write("finetune.txt", &summary)?;
    Ok(())
}

/// Accuracy columns in percent, mean ± std.
fn summary_text(t: &Table) -> String {
    let mut out = format!("{:<22}{:>18}\n", "column", "mean ± std");
    for (name, (m, sd)) in t.columns.iter().zip(t.summary()) {
        let (m, sd) = if name == "best_epoch" { (m, sd) } else { (100.0 * m, 100.0 * sd) };
        out.push_str(&format!("{name:<22}{m:>10.2} ± {sd:<6.2}\n"));
    }
    out.push_str(&format!("seeds: {}\n", t.rows.len()));
    out
}

fn eval_buckets(suite: Suite, g: &Graph) -> CliResult<Option<BucketMap>> {
    Ok(match suite {
        Suite::Perturb => None,
        Suite::DegreeOod => Some(build_degree_buckets(g)?),
        Suite::HomophilyOod => Some(build_homophily_buckets(g)?),
        Suite::Triobj => Some(build_triobj_buckets(g)?),
    })
}

fn run_eval(suite: Suite, s: &Settings) -> CliResult<()> {
    let seeds = s.seeds("seeds")?;
    let threads = s.usize("threads")?;
    let trials = s.usize("trials")?;
    let do_finetune = s.bool("finetune")?;
    let small = small_class(s)?;
    finetune_config(s, 0)?;
    let rates = match suite {
        Suite::Perturb => s.f64_list("rates")?,
        Suite::Triobj => s.f64_list("mask_rates")?,
        _ => Vec::new(),
    };
    let kind = match suite {
        Suite::Perturb => PerturbKind::parse(s.str("kind"))
            .ok_or_else(|| CliError::Config(format!("kind must be feature or edge, got {:?}", s.str("kind"))))?,
        _ => PerturbKind::Feature,
    };
    let g = data::load(s.str("dataset"), s)?;
    let base = load_base(s)?;
    if base.is_some() {
        starting_model(s, base.as_ref(), &g, 0)?;
    }
    if !do_finetune {
        match &base {
            None => return Err(CliError::Config("finetune = false needs a checkpoint".into())),
            Some(m) if m.cfg.num_classes != g.num_classes() => {
                return Err(tokmoe::Error::Dimension(format!(
                    "checkpoint head has {} classes, dataset has {}",
                    m.cfg.num_classes,
                    g.num_classes()
                ))
                .into())
            }
            Some(_) => {}
        }
    }
    let buckets = eval_buckets(suite, &g)?;
    let run = Run::open(Command::Eval(suite), s, &seeds)?;
    if let Some(b) = &buckets {
        run.log(&format!("ID bucket: {} nodes", b.id().nodes.len()));
        for o in b.ood() {
            run.log(&format!("OOD bucket {}: {} nodes", o.name, o.nodes.len()));
        }
    }

    // Fine-tunes on the split's train/val, then evaluates with the state frozen.
    let prepare = |seed: u64, split: &Split| -> CliResult<(Model, String)> {
        let mut model = starting_model(s, base.as_ref(), &g, seed)?;
        if do_finetune {
            let res = finetune(&g, split, &finetune_config(s, seed)?, &mut model)?;
            run.log(&format!("seed {seed}: selected epoch {} (val {:.4})", res.best_epoch, res.best_val));
        }
        let hash = model.state_hash();
        Ok((model, hash))
    };
    let plan = |seed: u64| -> CliResult<SplitPlan> {
        let b = buckets.as_ref().expect("OOD suites build buckets");
        let p = plan_for(&g, b, seed, small)?;
        p.check()?;
        Ok(p)
    };

    let (csv, text) = match suite {
        Suite::Perturb => {
            let rows = par_map(&seeds, threads, |seed| {
                let split = id_split(s, &g, seed)?;
                let (model, hash) = prepare(seed, &split)?;
                let clean = model.accuracy(&g, &split.test)?;
                let res = run_perturb_suite(&model, &g, &split.test, &rates, kind, trials, seed)?;
                verify_frozen(&model, &hash, "eval perturb")?;
                let mut row = vec![clean];
                row.extend(res.iter().map(|r| r.mean));
                Ok((seed, row))
            })?;
            let mut cols = vec!["clean".to_string()];
            cols.extend(rates.iter().map(|r| format!("{}@{r}", kind.name())));
            let mut table = Table::new(cols);
            for (seed, row) in rows {
                table.push(seed, row)?;
            }
            (table.to_csv(), summary_text(&table))
        }
        Suite::DegreeOod | Suite::HomophilyOod => {
            let rows = par_map(&seeds, threads, |seed| {
                let p = plan(seed)?;
                let (model, hash) = prepare(seed, &p.as_split())?;
                let accs = ood_accuracies(&model, &p, &g)?;
                verify_frozen(&model, &hash, "eval OOD")?;
                Ok((seed, accs))
            })?;
            let mut cols: Vec<String> = rows[0].1.iter().map(|(n, _)| n.clone()).collect();
            cols.push("ood_worst".into());
            let mut table = Table::new(cols);
            for (seed, accs) in rows {
                let worst = accs[1..].iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
                let mut row: Vec<f64> = accs.iter().map(|a| a.1).collect();
                row.push(worst);
                table.push(seed, row)?;
            }
            (table.to_csv(), summary_text(&table))
        }
        Suite::Triobj => {
            let rows = par_map(&seeds, threads, |seed| {
                let p = plan(seed)?;
                let (model, hash) = prepare(seed, &p.as_split())?;
                let row = triobj_report(&model, &p, &g, &rates, trials)?;
                verify_frozen(&model, &hash, "eval triobj")?;
                Ok(row)
            })?;
            let mut report = MetricsReport::default();
            for r in rows {
                report.push(r)?;
            }
            (report.to_csv(), report.to_text())
        }
    };
    run.write(&format!("{}.csv", suite.name()), &csv)?;
    run.write(&format!("{}.txt", suite.name()), &text)?;
    print!("{text}");
    Ok(())
}

fn run_verify(s: &Settings) -> CliResult<()> {
    let cfg = VerifyConfig {
        instances: s.usize("instances")?,
        seed: s.u64("seed")?,
        rhs_scale: s.f64("fault_rhs_scale")?,
    };
    if cfg.instances == 0 {
        return Err(CliError::Config("instances must be ≥ 1".into()));
    }
    let run = Run::open(Command::Verify, s, &[cfg.seed])?;
    let report = run_verification(&cfg)?;
    let text = report.to_text();
    print!("{text}");
    run.write("verify.txt", &text)?;
    let bad = report.violations();
    if bad > 0 {
        return Err(CliError::Contract(format!("{bad} theorem checks failed")));
    }
    Ok(())
}

/// Recomputes `mean±std` of each metrics CSV and checks its summary row.
fn run_report(s: &Settings) -> CliResult<()> {
    let tol = s.f64("tolerance")?;
    let inputs: Vec<PathBuf> =
        s.str("input").split(',').map(str::trim).filter(|t| !t.is_empty()).map(PathBuf::from).collect();
    if inputs.is_empty() {
        return Err(CliError::Config("input is empty; pass --input FILE.csv".into()));
    }
    let tables: Vec<(PathBuf, Table, Option<Vec<(f64, f64)>>)> = inputs
        .iter()
        .map(|p| read_table(p).map(|(t, sum)| (p.clone(), t, sum)))
        .collect::<CliResult<_>>()?;
    let run = Run::open(Command::Report, s, &[])?;
    let mut text = String::new();
    let mut mismatches = Vec::new();
    for (path, table, stored) in &tables {
        text.push_str(&format!("{}\n", path.display()));
        let recomputed = table.summary();
        for (j, (name, (m, sd))) in table.columns.iter().zip(&recomputed).enumerate() {
            text.push_str(&format!("  {name:<22}{:>10.4} ± {:<8.4}\n", m, sd));
            if let Some(st) = stored {
                let (sm, ss) = st[j];
                if (sm - m).abs() > tol || (ss - sd).abs() > tol {
                    mismatches.push(format!("{}: {name} summary {sm}±{ss}, recomputed {m}±{sd}", path.display()));
                }
            }
        }
        text.push_str(&format!("  seeds: {}\n", table.rows.len()));
    }
    print!("{text}");
    run.write("report.txt", &text)?;
    if !mismatches.is_empty() {
        for m in &mismatches {
            run.log(m);
        }
        return Err(CliError::Contract(format!("{} summary cells disagree with their rows", mismatches.len())));
    }
    Ok(())
}

type ParsedTable = (Table, Option<Vec<(f64, f64)>>);

fn read_table(path: &PathBuf) -> CliResult<ParsedTable> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let bad = |line: usize, what: &str| CliError::Data(format!("{}:{line}: {what}", path.display()));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("seed") {
        return Err(bad(1, "first column must be seed"));
    }
    let mut table = Table::new(cols.map(String::from).collect());
    let width = table.columns.len();
    let mut summary = None;
    for (i, line) in lines {
        let mut cells = line.split(',');
        let key = cells.next().unwrap_or("");
        let cells: Vec<&str> = cells.collect();
        if cells.len() != width {
            return Err(bad(i + 1, "wrong number of cells"));
        }
        if key == "summary" {
            let parsed = cells
                .iter()
                .map(|c| {
                    let (m, sd) = c.split_once('±')?;
                    Some((m.parse().ok()?, sd.parse().ok()?))
                })
                .collect::<Option<Vec<(f64, f64)>>>()
                .ok_or_else(|| bad(i + 1, "summary cells must be mean±std"))?;
            summary = Some(parsed);
        } else {
            let seed = key.parse().map_err(|_| bad(i + 1, "seed is not an integer"))?;
            let row = cells
                .iter()
                .map(|c| c.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| bad(i + 1, "cell is not a number"))?;
            table.push(seed, row)?;
        }
    }
    if table.rows.is_empty() {
        return Err(bad(1, "no seed rows"));
    }
    Ok((table, summary))
}
