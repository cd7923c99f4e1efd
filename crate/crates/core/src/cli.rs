//! Command-line front end. Every command takes `--config <file>` with
//! `key = value` lines, `--seed` and `--out`; flags override file values and
//! the resolved settings are written to `<out>/<command>.conf`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Arg, ArgMatches, Command};

use crate::checkpoint::ModelBundle;
use crate::data::{self, RecordMatrix, SplitSpec};
use crate::error::Error;
use crate::eval::{self, ClassifierKind};
use crate::models::{ArchitectureDescriptor, Family, GenMode};
use crate::pipeline::{self, derive_seed};
use crate::privacy::{self, AttackSetup, ThresholdSpec};
use crate::train::TrainingConfig;

struct Key {
    name: &'static str,
    default: Option<&'static str>,
    help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key { name, default: Some(default), help }
}

const fn required(name: &'static str, help: &'static str) -> Key {
    Key { name, default: None, help }
}

const COMMON: &[Key] = &[key("seed", "0", "root seed"), key("out", "out", "output directory")];

const SYNTH: &[Key] = &[
    key("n", "10000", "number of records"),
    key("m", "64", "record width"),
    key("band", "2", "correlation band width (discrete)"),
    key("marginal_lo", "0.05", "lowest column marginal (discrete)"),
    key("marginal_hi", "0.5", "highest column marginal (discrete)"),
    key("mode", "discrete", "discrete or continuous"),
    key("positive_fraction", "0.2", "share of label-1 records (continuous)"),
    key("test_fraction", "0", "also write a train/test split when positive"),
];

const PRETRAIN: &[Key] = &[
    required("data", "binary training matrix"),
    key("family", "corgan", "corgan or mlp-baseline"),
    key("code_width", "128", "autoencoder code width"),
    key("noise_width", "128", "generator noise width"),
    key("epochs", "50", "pretraining epochs"),
    key("batch_size", "500", "minibatch size"),
    key("lr", "0.001", "Adam learning rate"),
    key("beta1", "0.5", "Adam beta1"),
    key("beta2", "0.999", "Adam beta2"),
    key("drop_prob", "0.1", "input corruption probability"),
];

const TRAIN: &[Key] = &[
    required("data", "training matrix"),
    key("mode", "discrete", "discrete or continuous"),
    key("family", "corgan", "corgan or mlp-baseline"),
    key("autoencoder", "", "pretrained autoencoder checkpoint (discrete)"),
    key("header", "false", "continuous CSV has a header line"),
    key("noise_width", "128", "generator noise width (continuous)"),
    key("epochs", "500", "maximum epochs"),
    key("batch_size", "500", "minibatch size"),
    key("lr_g", "0.0001", "generator learning rate"),
    key("lr_d", "0.0001", "discriminator learning rate"),
    key("beta1", "0.5", "Adam beta1"),
    key("beta2", "0.999", "Adam beta2"),
    key("d_steps", "1", "discriminator steps per generator step"),
    key("patience", "50", "early-stopping patience in epochs, 0 disables"),
    key("monitor_samples", "1000", "records sampled per epoch for monitoring"),
    key("checkpoint_every", "10", "epochs between recovery snapshots"),
];

const GENERATE: &[Key] = &[
    required("model", "trained model checkpoint"),
    key("count", "1000", "records to generate"),
    key("header", "false", "write a CSV header (continuous)"),
];

const EVAL: &[Key] = &[
    required("train_real", "real training matrix"),
    required("test_real", "real test matrix"),
    required("syn", "synthetic matrix"),
    key("mode", "discrete", "discrete or continuous"),
    key("header", "false", "continuous CSVs have a header line"),
    key("runs", "100", "dimension-wise prediction runs"),
    key("classifiers", "logistic_regression,decision_tree", "comma-separated classifier kinds"),
];

const AUDIT: &[Key] = &[
    required("train", "real training matrix (members)"),
    required("test", "real held-out matrix (non-members)"),
    key("syn", "", "synthetic matrix"),
    key("model", "", "model checkpoint to sample from instead of --syn"),
    key("syn_count", "10000", "records sampled from --model"),
    key("mode", "discrete", "discrete or continuous"),
    key("header", "false", "continuous CSVs have a header line"),
    key("u", "100", "known records, half members and half non-members"),
    key("thresholds", "100", "number of sampled thresholds"),
    key("threshold_mean", "0.5", "threshold distribution mean"),
    key("threshold_std", "0.01", "threshold distribution standard deviation"),
    key("u_values", "", "comma-separated known-record counts to sweep"),
    key("sizes", "", "comma-separated synthetic-set sizes to sweep"),
];

const COMMANDS: &[(&str, &str, &[Key])] = &[
    ("synth-corpus", "write a synthetic corpus", SYNTH),
    ("pretrain-ae", "pretrain the autoencoder", PRETRAIN),
    ("train", "train generator and discriminator", TRAIN),
    ("generate", "sample records from a trained model", GENERATE),
    ("eval", "fidelity evaluation", EVAL),
    ("privacy-audit", "membership-inference attack", AUDIT),
];

fn flag(name: &str) -> String {
    name.replace('_', "-")
}

fn cli() -> Command {
    let mut cmd = Command::new("corgan").about("synthetic record generation and evaluation").subcommand_required(true);
    for &(name, about, keys) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config").long("config").value_name("FILE").help("key = value settings file"),
        );
        for k in COMMON.iter().chain(keys) {
            let help = match k.default {
                Some(d) if !d.is_empty() => format!("{} [default: {d}]", k.help),
                _ => k.help.to_string(),
            };
            sub = sub.arg(Arg::new(k.name).long(flag(k.name)).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Resolved settings of one command.
struct Settings {
    values: BTreeMap<&'static str, String>,
}

fn parse_config(path: &Path, keys: &[&'static Key]) -> anyhow::Result<BTreeMap<&'static str, String>> {
    let text = fs::read_to_string(path).with_context(|| format!("--config: cannot read {}", path.display()))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
        let k = k.trim().replace('-', "_");
        let known = keys.iter().find(|key| key.name == k).ok_or_else(|| anyhow!("{}:{}: unknown key `{k}`", path.display(), i + 1))?;
        out.insert(known.name, v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    fn resolve(m: &ArgMatches, keys: &'static [Key]) -> anyhow::Result<Self> {
        let all: Vec<&'static Key> = COMMON.iter().chain(keys).collect();
        let mut values = match m.get_one::<String>("config") {
            Some(p) => parse_config(Path::new(p), &all)?,
            None => BTreeMap::new(),
        };
        for k in &all {
            if let Some(v) = m.get_one::<String>(k.name) {
                values.insert(k.name, v.clone());
            }
            if !values.contains_key(k.name) {
                match k.default {
                    Some(d) => {
                        values.insert(k.name, d.to_string());
                    }
                    None => bail!("missing required --{}", flag(k.name)),
                }
            }
        }
        Ok(Settings { values })
    }

    fn str(&self, name: &str) -> &str {
        self.values.get(name).map(String::as_str).unwrap_or("")
    }

    fn opt(&self, name: &str) -> Option<&str> {
        Some(self.str(name)).filter(|s| !s.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> anyhow::Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let v = self.str(name);
        v.parse().map_err(|e| anyhow!("--{}: cannot parse {v:?}: {e}", flag(name)))
    }

    fn list<T: std::str::FromStr>(&self, name: &str) -> anyhow::Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.str(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| anyhow!("--{}: cannot parse {s:?}: {e}", flag(name))))
            .collect()
    }

    fn seed(&self) -> anyhow::Result<u64> {
        self.parse("seed")
    }

    fn out(&self) -> anyhow::Result<PathBuf> {
        let out = PathBuf::from(self.str("out"));
        fs::create_dir_all(&out).with_context(|| format!("--out: cannot create {}", out.display()))?;
        Ok(out)
    }

    fn write(&self, out: &Path, command: &str) -> anyhow::Result<()> {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        let path = out.join(format!("{command}.conf"));
        fs::write(&path, s).with_context(|| format!("cannot write {}", path.display()))
    }
}

fn load_matrix(s: &Settings, name: &str, mode: GenMode) -> anyhow::Result<RecordMatrix> {
    let path = s.str(name);
    let m = match mode {
        GenMode::Discrete => data::load_binary_matrix(path),
        GenMode::Continuous => data::load_continuous_csv(path, s.parse("header")?),
    };
    m.with_context(|| format!("--{}", flag(name)))
}

fn load_bundle(s: &Settings, name: &str) -> anyhow::Result<ModelBundle> {
    let path = Path::new(s.str(name));
    if !path.is_file() {
        return Err(Error::Config(format!("checkpoint {} not found", path.display()))).with_context(|| format!("--{}", flag(name)));
    }
    ModelBundle::load(path).with_context(|| format!("--{}", flag(name)))
}

fn write_matrix(out: &Path, stem: &str, m: &RecordMatrix, header: bool) -> anyhow::Result<PathBuf> {
    let path = match m.mode() {
        data::DataMode::Binary => {
            let p = out.join(format!("{stem}.bin"));
            data::write_binary_matrix(&p, m)?;
            p
        }
        data::DataMode::Continuous => {
            let p = out.join(format!("{stem}.csv"));
            data::write_continuous_csv(&p, m, header)?;
            p
        }
    };
    Ok(path)
}

/// Parses `args` (including the program name) and runs the chosen command.
/// Returns the human-readable summary that was printed.
pub fn run<I, T>(args: I) -> anyhow::Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = cli().try_get_matches_from(args)?;
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let keys = COMMANDS.iter().find(|c| c.0 == name).expect("registered command").2;
    let s = Settings::resolve(sub, keys)?;
    let out = s.out()?;
    s.write(&out, name)?;
    let summary = match name {
        "synth-corpus" => synth_corpus(&s, &out)?,
        "pretrain-ae" => pretrain_ae(&s, &out)?,
        "train" => train(&s, &out)?,
        "generate" => generate(&s, &out)?,
        "eval" => evaluate(&s, &out)?,
        "privacy-audit" => audit(&s, &out)?,
        _ => unreachable!("unknown command {name}"),
    };
    print!("{summary}");
    Ok(summary)
}

fn synth_corpus(s: &Settings, out: &Path) -> anyhow::Result<String> {
    let seed = s.seed()?;
    let (n, m): (usize, usize) = (s.parse("n")?, s.parse("m")?);
    if m < 2 {
        bail!("--m must be at least 2, got {m}");
    }
    let mode: GenMode = s.parse("mode")?;
    let corpus = match mode {
        GenMode::Discrete => {
            let marginals = data::random_marginals(m, s.parse("marginal_lo")?, s.parse("marginal_hi")?, derive_seed(seed, "marginals"))?;
            data::synth_corpus(n, m, s.parse("band")?, &marginals, derive_seed(seed, "corpus"))?
        }
        GenMode::Continuous => data::synth_signals(n, m, s.parse("positive_fraction")?, derive_seed(seed, "corpus"))?,
    };
    let mut written = vec![write_matrix(out, "corpus", &corpus, false)?];
    let test_fraction: f64 = s.parse("test_fraction")?;
    if test_fraction > 0.0 {
        let (train, test) = data::split(&corpus, SplitSpec { train_fraction: 1.0 - test_fraction, seed: derive_seed(seed, "split") })?;
        written.push(write_matrix(out, "train", &train, false)?);
        written.push(write_matrix(out, "test", &test, false)?);
    }
    let mut summary = format!("records: {n}\nwidth: {m}\n");
    for p in written {
        let _ = writeln!(summary, "wrote {}", p.display());
    }
    Ok(summary)
}

fn pretrain_ae(s: &Settings, out: &Path) -> anyhow::Result<String> {
    let data = load_matrix(s, "data", GenMode::Discrete)?;
    let family: Family = s.parse("family")?;
    let desc = ArchitectureDescriptor::with_widths(GenMode::Discrete, family, data.cols(), s.parse("code_width")?, s.parse("noise_width")?)?;
    let cfg = TrainingConfig {
        epochs: s.parse("epochs")?,
        batch_size: s.parse("batch_size")?,
        lr_ae: s.parse("lr")?,
        beta1: s.parse("beta1")?,
        beta2: s.parse("beta2")?,
        drop_prob: s.parse("drop_prob")?,
        seed: s.seed()?,
        ..Default::default()
    };
    cfg.validate()?;
    let (bundle, log) = pipeline::pretrain(&desc, &data, &cfg)?;
    bundle.save(out.join("autoencoder.ckpt"))?;
    log.write_csv(out.join("pretrain_log.csv"))?;
    let last = log.records.last().and_then(|r| r.loss_ae).unwrap_or(f64::NAN);
    Ok(format!("epochs: {}\nfinal reconstruction loss: {last}\n", log.len()))
}

fn train(s: &Settings, out: &Path) -> anyhow::Result<String> {
    let mode: GenMode = s.parse("mode")?;
    let family: Family = s.parse("family")?;
    let data = load_matrix(s, "data", mode)?;
    let mut bundle = match mode {
        GenMode::Discrete => {
            if s.opt("autoencoder").is_none() {
                bail!("discrete training needs --autoencoder");
            }
            let mut b = load_bundle(s, "autoencoder")?;
            if b.autoencoder.is_none() {
                bail!("--autoencoder: checkpoint holds no autoencoder");
            }
            if b.descriptor.family != family {
                bail!("--family {family:?} does not match the autoencoder checkpoint ({:?})", b.descriptor.family);
            }
            if b.descriptor.record_width != data.cols() {
                bail!("--data has {} columns but the autoencoder expects {}", data.cols(), b.descriptor.record_width);
            }
            b.members.clear();
            b
        }
        GenMode::Continuous => {
            if s.opt("autoencoder").is_some() {
                bail!("--autoencoder is not used in continuous mode");
            }
            let noise: usize = s.parse("noise_width")?;
            ModelBundle::new(ArchitectureDescriptor::with_widths(mode, family, data.cols(), noise, noise)?)
        }
    };
    let cfg = TrainingConfig {
        epochs: s.parse("epochs")?,
        batch_size: s.parse("batch_size")?,
        lr_g: s.parse("lr_g")?,
        lr_d: s.parse("lr_d")?,
        beta1: s.parse("beta1")?,
        beta2: s.parse("beta2")?,
        d_steps: s.parse("d_steps")?,
        patience: s.parse("patience")?,
        monitor_samples: s.parse("monitor_samples")?,
        checkpoint_every: s.parse("checkpoint_every")?,
        seed: s.seed()?,
        ..Default::default()
    };
    cfg.validate()?;
    let result = pipeline::train_members(&mut bundle, &data, &cfg);
    bundle.save(out.join("model.ckpt"))?;
    let logs = result?;
    let mut summary = String::new();
    for (k, (log, member)) in logs.iter().zip(&bundle.members).enumerate() {
        let name = if logs.len() == 1 { "training_log.csv".to_string() } else { format!("training_log_member{k}.csv") };
        log.write_csv(out.join(&name))?;
        let label = member.label.map_or("none".to_string(), |l| l.to_string());
        let _ = writeln!(summary, "member {k} (label {label}): {} epochs, log {name}", log.len());
    }
    Ok(summary)
}

fn generate(s: &Settings, out: &Path) -> anyhow::Result<String> {
    let bundle = load_bundle(s, "model")?;
    let count: usize = s.parse("count")?;
    let syn = pipeline::sample(&bundle, count, derive_seed(s.seed()?, "generate"))?;
    let path = write_matrix(out, "synthetic", &syn, s.parse("header")?)?;
    Ok(format!("records: {}\nwrote {}\n", syn.rows(), path.display()))
}

fn check_width(a: &RecordMatrix, a_flag: &str, b: &RecordMatrix, b_flag: &str) -> anyhow::Result<()> {
    if a.cols() != b.cols() {
        bail!("--{a_flag} has {} columns but --{b_flag} has {}", a.cols(), b.cols());
    }
    Ok(())
}

fn evaluate(s: &Settings, out: &Path) -> anyhow::Result<String> {
    let mode: GenMode = s.parse("mode")?;
    let train = load_matrix(s, "train_real", mode)?;
    let test = load_matrix(s, "test_real", mode)?;
    let syn = load_matrix(s, "syn", mode)?;
    check_width(&train, "train-real", &test, "test-real")?;
    check_width(&train, "train-real", &syn, "syn")?;
    let kinds: Vec<ClassifierKind> = s.list("classifiers")?;
    let mut summary = String::new();
    match mode {
        GenMode::Discrete => {
            let dp = eval::dimension_wise_probability(&train, &syn)?;
            eval::write_report(out, "dimprob.csv", &dp.to_csv())?;
            eval::write_report(out, "dimprob_scatter.dat", &dp.to_scatter())?;
            let _ = writeln!(summary, "dimension-wise probability: mean abs deviation {}, max deviation {}", dp.mean_abs_dev, dp.max_dev);
            let pr = eval::dimension_wise_prediction(&train, &test, &syn, s.parse("runs")?, &kinds, derive_seed(s.seed()?, "dimpred"))?;
            eval::write_report(out, "dimpred.csv", &pr.to_csv())?;
            let _ = writeln!(
                summary,
                "dimension-wise prediction: {} runs, F1 difference mean {} std {}, mean abs {}",
                pr.runs.len() / kinds.len().max(1),
                pr.mean_diff,
                pr.std_diff,
                pr.mean_abs_diff
            );
            if pr.shortfall() {
                let _ = writeln!(summary, "warning: only {} usable dimensions for {} requested runs", pr.usable_dims, pr.requested_runs);
            }
        }
        GenMode::Continuous => {
            let bc = eval::binary_classification_eval(&train, &test, &syn, &kinds)?;
            eval::write_report(out, "binclass.csv", &bc.to_csv())?;
            let _ = writeln!(summary, "setting A: auroc {} auprc {}", bc.auroc_a, bc.auprc_a);
            let _ = writeln!(summary, "setting B: auroc {} auprc {}", bc.auroc_b, bc.auprc_b);
        }
    }
    eval::write_report(out, "summary.txt", &summary)?;
    Ok(summary)
}

fn audit(s: &Settings, out: &Path) -> anyhow::Result<String> {
    let mode: GenMode = s.parse("mode")?;
    let seed = s.seed()?;
    let train = load_matrix(s, "train", mode)?;
    let test = load_matrix(s, "test", mode)?;
    check_width(&train, "train", &test, "test")?;
    let syn = match (s.opt("syn"), s.opt("model")) {
        (Some(_), None) => load_matrix(s, "syn", mode)?,
        (None, Some(_)) => {
            let bundle = load_bundle(s, "model")?;
            pipeline::sample(&bundle, s.parse("syn_count")?, derive_seed(seed, "generate"))?
        }
        _ => bail!("exactly one of --syn and --model is required"),
    };
    check_width(&train, "train", &syn, "syn")?;
    let spec = ThresholdSpec { count: s.parse("thresholds")?, mean: s.parse("threshold_mean")?, std: s.parse("threshold_std")? };
    let thresholds = privacy::sample_thresholds(spec, derive_seed(seed, "thresholds"))?;
    let u: usize = s.parse("u")?;
    let mut summary = String::new();
    if u % 2 == 1 {
        let _ = writeln!(summary, "warning: U={u} is odd; using {}", u - 1);
    }
    let known_seed = derive_seed(seed, "known");
    let (members, non_members) = privacy::draw_known(&train, &test, u / 2, known_seed)?;
    let setup = AttackSetup { members, non_members, thresholds: thresholds.clone() };
    let report = privacy::run_attack(&setup, &syn)?;
    eval::write_report(out, "attack.csv", &report.to_csv())?;
    match report.best_row() {
        Some(b) => {
            let _ = writeln!(summary, "best attack: threshold {} precision {} recall {} f1 {}", b.threshold, b.precision, b.recall, b.f1);
        }
        None => {
            let _ = writeln!(summary, "best attack: no threshold flags any record");
        }
    }
    let us: Vec<usize> = s.list("u_values")?;
    if !us.is_empty() {
        let (rows, warnings) = privacy::sweep_known_records(&train, &test, &syn, &us, &thresholds, known_seed)?;
        eval::write_report(out, "sweep_u.csv", &privacy::sweep_to_csv("u", &rows))?;
        for w in warnings {
            let _ = writeln!(summary, "warning: {w}");
        }
    }
    let sizes: Vec<usize> = s.list("sizes")?;
    if !sizes.is_empty() {
        let (rows, warnings) = privacy::sweep_synthetic_volume(&setup, &syn, &sizes)?;
        eval::write_report(out, "sweep_size.csv", &privacy::sweep_to_csv("size", &rows))?;
        for w in warnings {
            let _ = writeln!(summary, "warning: {w}");
        }
    }
    eval::write_report(out, "summary.txt", &summary)?;
    Ok(summary)
}
