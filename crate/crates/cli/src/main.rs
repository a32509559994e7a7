//! `srl`: command-line front end for the adversarial pruning laboratory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use srl_core::attack::{evaluate, mean_distortion};
use srl_core::certify::{certify_csv, certify_examples, weight_histogram, NormPair};
use srl_core::config::{DatasetSpec, ExperimentConfig};
use srl_core::data::Dataset;
use srl_core::experiment::{
    arm_report, compare_report, initial_network, run_experiment, ArmReport,
};
use srl_core::iwi::{baseline_train, inverse_weights_inheritance};
use srl_core::lottery::{find_winning_ticket, train_ticket};
use srl_core::net::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use srl_core::net::{Mask, Network};
use srl_core::pruning::{prune_with, sparsity_report, PruneMethod};
use srl_core::training::{adversarial_train, StopMode, TrainConfig};

#[derive(Parser)]
#[command(
    name = "srl",
    version,
    about = "Adversarial training, pruning, lottery tickets and Lipschitz certificates for small ReLU networks"
)]
struct Cli {
    /// Seed for initialization, data and attacks (default: first seed of the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment config; omitted keys take the desk-scale defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Adversarially train a dense network from a fresh initialization.
    Train(TrainArgs),
    /// Clean and PGD accuracy of a checkpoint on the test split.
    Attack(AttackArgs),
    /// One-shot pruning of a checkpoint.
    Prune(PruneArgs),
    /// Iterative lottery-ticket search with rewinding.
    Lottery(LotteryArgs),
    /// Inverse weights inheritance against a budget-matched baseline.
    Iwi(IwiArgs),
    /// Certified radii of test points.
    Certify(CertifyArgs),
    /// Histogram of the surviving weights of a checkpoint.
    Hist(HistArgs),
    /// Run the configured multi-seed pipeline.
    Run,
    /// Compare two arm reports.
    Compare(CompareArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    /// Use plateau-driven learning-rate control.
    #[arg(long)]
    stop_c: bool,
    /// L1 penalty on scaling factors.
    #[arg(long)]
    ns_l1: Option<f64>,
    /// Output checkpoint (default: <out>/dense.ckpt.json).
    #[arg(long)]
    ckpt_out: Option<PathBuf>,
    /// History CSV (default: <out>/history.csv).
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    rand_start: Option<bool>,
    /// Input range as `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    clamp: Option<(f64, f64)>,
    /// Also search per-point distortion bounds and write distortion.csv.
    #[arg(long)]
    distortion: bool,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Pruning ratio in percent.
    #[arg(long)]
    ratio: f64,
    /// Input checkpoint; its mask, if any, is the starting mask.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output checkpoint (default: <out>/pruned.ckpt.json).
    #[arg(long)]
    ckpt_out: Option<PathBuf>,
    /// Adversarial retraining epochs after pruning; 0 skips retraining.
    #[arg(long, default_value_t = 0)]
    retrain: usize,
    /// Also write the sparsity report as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gup,
    Lup,
    Fp,
    Ns,
}

impl From<MethodArg> for PruneMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gup => PruneMethod::Gup,
            MethodArg::Lup => PruneMethod::Lup,
            MethodArg::Fp => PruneMethod::Fp,
            MethodArg::Ns => PruneMethod::Ns,
        }
    }
}

#[derive(Args)]
struct LotteryArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs_per_iter: Option<usize>,
    #[arg(long)]
    train_epochs: Option<usize>,
}

#[derive(Args)]
struct IwiArgs {
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    nf: Option<usize>,
    #[arg(long, conflicts_with = "stop_c")]
    continue_epochs: Option<usize>,
    #[arg(long)]
    stop_c: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PairArg {
    L2,
    Linf,
}

impl From<PairArg> for NormPair {
    fn from(p: PairArg) -> Self {
        match p {
            PairArg::L2 => NormPair::L2,
            PairArg::Linf => NormPair::Linf,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetArg {
    TwoMoons,
    Blobs,
    Circles,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    pair: PairArg,
    /// Synthetic dataset to certify on (default: the config's dataset).
    #[arg(long, value_enum)]
    dataset: Option<DatasetArg>,
    /// Number of test points (default: certify.points).
    #[arg(long)]
    points: Option<usize>,
    /// Verify each radius on an exhaustive grid (inputs of dimension <= 3).
    #[arg(long)]
    grid_check: bool,
}

#[derive(Args)]
struct HistArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    /// Closed range as `lo,hi`.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    range: Option<(f64, f64)>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

struct Ctx {
    cfg: ExperimentConfig,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn dataset(&self) -> Result<Dataset> {
        Ok(self.cfg.dataset.build(self.seed)?)
    }

    fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            seed: Some(self.seed),
            config_digest: Some(self.cfg.digest()),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn save(&self, name: &str, net: &Network, mask: Option<&Mask>) -> Result<PathBuf> {
        let path = self.path(name);
        save_checkpoint(net, mask, &self.meta(), &path)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn write(&self, name: &str, content: &str) -> Result<PathBuf> {
        write_file(&self.path(name), content)
    }

    fn train_config(&self, ds: &Dataset) -> TrainConfig {
        self.cfg.train_config(self.seed, ds.clamp)
    }
}

fn write_file(path: &Path, content: &str) -> Result<PathBuf> {
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn load(path: &Path) -> Result<(Network, Option<Mask>)> {
    let (net, mask, _) =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok((net, mask))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    srl_core::init_threads_from_env()?;
    let mut cfg = match &cli.config {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    let seed = cli.seed.unwrap_or(cfg.seeds[0]);
    if let Command::Run = cli.command {
        if let Some(s) = cli.seed {
            cfg.seeds = vec![s];
        }
        return run(&cfg);
    }
    let out = cfg.out.clone();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = Ctx { cfg, seed, out };
    match cli.command {
        Command::Train(a) => train(&ctx, a),
        Command::Attack(a) => attack(&ctx, a),
        Command::Prune(a) => prune_cmd(&ctx, a),
        Command::Lottery(a) => lottery(ctx, a),
        Command::Iwi(a) => iwi(ctx, a),
        Command::Certify(a) => certify(&ctx, a),
        Command::Hist(a) => hist(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Run => unreachable!("handled above"),
    }
}

fn train(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let ds = ctx.dataset()?;
    let mut tc = ctx.train_config(&ds);
    if a.stop_c {
        tc.mode = StopMode::StopC {
            patience: ctx.cfg.train.patience,
            relative_threshold: ctx.cfg.train.threshold,
            max_decays: ctx.cfg.train.max_decays,
            max_epochs: a.epochs.unwrap_or(ctx.cfg.train.max_epochs),
        };
    } else if let Some(e) = a.epochs {
        tc.mode = ctx.cfg.train.stop_mode_with(e);
    }
    if let Some(l) = a.ns_l1 {
        tc.ns_l1_lambda = l;
    }
    let theta0 = initial_network(&ctx.cfg.net.dims, ctx.seed)?;
    let (net, record) = adversarial_train(&theta0, None, &ds.train(), &ds.val(), &tc)?;
    let ckpt = a.ckpt_out.unwrap_or_else(|| ctx.path("dense.ckpt.json"));
    save_checkpoint(&net, None, &ctx.meta(), &ckpt)?;
    ctx.save("init.ckpt.json", &theta0, None)?;
    write_file(
        &a.history.unwrap_or_else(|| ctx.path("history.csv")),
        &record.to_csv(),
    )?;
    if let Some(last) = record.last() {
        println!(
            "epochs {}  val clean {:.4}  val adv {:.4}  -> {}",
            record.rows.len(),
            last.clean_acc,
            last.adv_acc,
            ckpt.display()
        );
    }
    Ok(())
}

fn attack(ctx: &Ctx, a: AttackArgs) -> Result<()> {
    let ds = ctx.dataset()?;
    let (net, mask) = load(&a.ckpt)?;
    let mut acfg = ctx.cfg.eval_attack(ds.clamp);
    if let Some(e) = a.eps {
        acfg = acfg.at_epsilon(e);
    }
    if let Some(s) = a.step {
        acfg.step_size = s;
    }
    if let Some(i) = a.iters {
        acfg.iterations = i;
    }
    if let Some(r) = a.rand_start {
        acfg.random_start = r;
    }
    if a.clamp.is_some() {
        acfg.clamp = a.clamp;
    }
    let test = ds.test();
    let ev = evaluate(&net, mask.as_ref(), &test, &acfg, ctx.seed)?;
    println!(
        "samples {}  clean {:.4}  adversarial {:.4}  (eps {}, {} iterations)",
        ev.samples, ev.clean_accuracy, ev.adversarial_accuracy, acfg.epsilon, acfg.iterations
    );
    if a.distortion {
        let points = &test[..ctx.cfg.distortion.points.min(test.len())];
        let d = mean_distortion(
            &net,
            mask.as_ref(),
            points,
            &ctx.cfg.distortion_config(ds.clamp),
            ctx.seed,
        )?;
        let path = ctx.write("distortion.csv", &d.to_csv())?;
        match d.mean {
            Some(m) => println!(
                "mean distortion {m:.5} ({} unflipped) -> {}",
                d.none_count,
                path.display()
            ),
            None => println!("no point flipped below eps_max -> {}", path.display()),
        }
    }
    Ok(())
}

fn prune_cmd(ctx: &Ctx, a: PruneArgs) -> Result<()> {
    let (net, mask_in) = load(&a.input)?;
    let mask_in = mask_in.unwrap_or_else(|| Mask::ones(net.dims()));
    let outcome = prune_with(
        a.method.into(),
        &net,
        &mask_in,
        a.ratio,
        ctx.cfg.prune.include_final,
    )?;
    if let Some(w) = &outcome.warning {
        eprintln!("warning: {w}");
    }
    let net = if a.retrain > 0 {
        let ds = ctx.dataset()?;
        let tc = TrainConfig {
            mode: ctx.cfg.train.stop_mode_with(a.retrain),
            ..ctx.train_config(&ds)
        };
        adversarial_train(&net, Some(&outcome.mask), &ds.train(), &ds.val(), &tc)?.0
    } else {
        net.apply_mask(&outcome.mask)?
    };
    let path = a.ckpt_out.unwrap_or_else(|| ctx.path("pruned.ckpt.json"));
    save_checkpoint(&net, Some(&outcome.mask), &ctx.meta(), &path)?;
    let report = sparsity_report(&net, Some(&outcome.mask))?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(csv) = &a.csv {
        write_file(csv, &report.to_csv())?;
    }
    eprintln!(
        "achieved ratio {:.4} -> {}",
        outcome.achieved_ratio,
        path.display()
    );
    Ok(())
}

fn lottery(mut ctx: Ctx, a: LotteryArgs) -> Result<()> {
    let l = &mut ctx.cfg.lottery;
    if let Some(p) = a.p {
        l.p = p;
    }
    if let Some(k) = a.k {
        l.k = k;
    }
    if let Some(n) = a.epochs_per_iter {
        l.n = n;
    }
    if let Some(t) = a.train_epochs {
        l.train_epochs = t;
    }
    ctx.cfg.validate()?;
    let ds = ctx.dataset()?;
    let theta0 = initial_network(&ctx.cfg.net.dims, ctx.seed)?;
    let found = find_winning_ticket(
        &theta0,
        &ds.train(),
        &ds.val(),
        &ctx.cfg.lottery_config(ctx.seed, ds.clamp),
    )?;
    let mask_path = ctx.save("ticket.ckpt.json", &found.ticket, Some(&found.mask))?;
    ctx.write("lottery.csv", &found.to_csv())?;
    let tc = TrainConfig {
        mode: ctx.cfg.train.stop_mode_with(ctx.cfg.lottery.train_epochs),
        ..ctx.train_config(&ds)
    };
    let (trained, record) = train_ticket(&found.ticket, &found.mask, &ds.train(), &ds.val(), &tc)?;
    ctx.save("ticket-trained.ckpt.json", &trained, Some(&found.mask))?;
    ctx.write("ticket-history.csv", &record.to_csv())?;
    print!("{}", found.to_csv());
    eprintln!(
        "mask {:.4} pruned -> {}",
        found.mask.pruning_ratio(),
        mask_path.display()
    );
    Ok(())
}

fn iwi(mut ctx: Ctx, a: IwiArgs) -> Result<()> {
    let c = &mut ctx.cfg;
    if let Some(p) = a.p {
        c.lottery.p = p;
    }
    if let Some(k) = a.k {
        c.lottery.k = k;
    }
    if let Some(n) = a.n {
        c.lottery.n = n;
    }
    if let Some(nf) = a.nf {
        c.iwi.nf = nf;
    }
    if let Some(e) = a.continue_epochs {
        c.iwi.continue_epochs = e;
    }
    c.iwi.stop_c |= a.stop_c;
    ctx.cfg.validate()?;
    let ds = ctx.dataset()?;
    let (train, val) = (ds.train(), ds.val());
    let icfg = ctx.cfg.iwi_config(ctx.seed, ds.clamp);
    let theta0 = initial_network(&ctx.cfg.net.dims, ctx.seed)?;
    let out = inverse_weights_inheritance(&theta0, &train, &val, &icfg)?;
    let path = ctx.save("iwi.ckpt.json", &out.network, None)?;
    ctx.write("lottery.csv", &out.ticket.to_csv())?;
    ctx.write("finetune-history.csv", &out.finetune_record.to_csv())?;
    ctx.write(
        "continuation-history.csv",
        &out.continuation_record.to_csv(),
    )?;
    let (base, base_record) = baseline_train(
        &theta0,
        &train,
        &val,
        &icfg,
        out.continuation_record.rows.len(),
    )?;
    ctx.save("baseline.ckpt.json", &base, None)?;
    ctx.write("baseline-history.csv", &base_record.to_csv())?;
    let rb = arm_report("baseline", &base, None, &ds, &ctx.cfg, ctx.seed)?;
    let ri = arm_report("iwi", &out.network, None, &ds, &ctx.cfg, ctx.seed)?;
    let cmp = compare_report(&rb, &ri)?;
    ctx.write("compare.csv", &cmp.deltas_csv())?;
    ctx.write("compare-hist.csv", &cmp.histogram_csv())?;
    print!("{}", cmp.deltas_csv());
    eprintln!("-> {}", path.display());
    Ok(())
}

fn certify(ctx: &Ctx, a: CertifyArgs) -> Result<()> {
    let ds = match a.dataset {
        None => ctx.dataset()?,
        Some(DatasetArg::TwoMoons) => DatasetSpec::TwoMoons {
            n: 1000,
            noise: 0.1,
        }
        .build(ctx.seed)?,
        Some(DatasetArg::Blobs) => DatasetSpec::Blobs {
            n: 1000,
            classes: 3,
            spread: 0.5,
        }
        .build(ctx.seed)?,
        Some(DatasetArg::Circles) => DatasetSpec::Circles {
            n: 1000,
            noise: 0.05,
            factor: 0.5,
        }
        .build(ctx.seed)?,
    };
    let (net, mask) = load(&a.ckpt)?;
    let test = ds.test();
    let n = a.points.unwrap_or(ctx.cfg.certify.points).min(test.len());
    let grid = if a.grid_check {
        if ds.dim() > 3 {
            bail!(
                "--grid-check needs inputs of dimension at most 3, dataset has {}",
                ds.dim()
            );
        }
        Some(srl_core::certify::GridCheck {
            step_fraction: ctx.cfg.certify.grid_step_fraction,
            r_max: ctx.cfg.certify.r_max,
        })
    } else {
        None
    };
    let rows = certify_examples(&net, mask.as_ref(), &test[..n], a.pair.into(), grid)?;
    print!("{}", certify_csv(&rows));
    let violations: usize = rows.iter().filter_map(|r| r.grid_violations).sum();
    if violations > 0 {
        bail!("grid check found {violations} violations");
    }
    Ok(())
}

fn hist(ctx: &Ctx, a: HistArgs) -> Result<()> {
    let (net, mask) = load(&a.ckpt)?;
    let h = weight_histogram(
        &net,
        mask.as_ref(),
        a.bins.unwrap_or(ctx.cfg.hist.bins),
        a.range.unwrap_or(ctx.cfg.hist.range),
    )?;
    print!("{}", h.to_csv());
    Ok(())
}

fn compare(ctx: &Ctx, a: CompareArgs) -> Result<()> {
    let ra = ArmReport::load(&a.a)?;
    let rb = ArmReport::load(&a.b)?;
    let cmp = compare_report(&ra, &rb)?;
    ctx.write("compare-hist.csv", &cmp.histogram_csv())?;
    print!("{}", cmp.deltas_csv());
    Ok(())
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let summary = run_experiment(cfg)?;
    println!("config digest {}", summary.config_digest);
    print!("{}", summary.table_csv());
    let errors = summary.errors();
    if !errors.is_empty() {
        bail!("{} phase(s) failed:\n{}", errors.len(), errors.join("\n"));
    }
    Ok(())
}
