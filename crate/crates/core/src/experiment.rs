//! Multi-seed experiment runner and arm comparisons.
//!
//! Each seed gets its own directory under the configured output path, and
//! each phase writes its artifacts into a subdirectory. A phase finishes by
//! writing `done.json`, which lists the SHA-256 digest of every artifact
//! it produced. A rerun with the same config reuses finished phases.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::{evaluate, mean_distortion};
use crate::certify::{certify_csv, certify_examples, weight_histogram, Histogram};
use crate::config::{ExperimentConfig, Phase};
use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::iwi::{baseline_train, inverse_weights_inheritance};
use crate::lottery::{find_winning_ticket, train_ticket};
use crate::net::checkpoint::{self, CheckpointMeta};
use crate::net::{Mask, Network};
use crate::pruning::{prune_with, rand_reinit, sparsity_report};
use crate::rng::{derive_rng, derive_seed};
use crate::training::{adversarial_train, layer_norms, TrainConfig};

const INIT_STREAM: u64 = 0x494e;
const EVAL_STREAM: u64 = 0x4556;
const REINIT_STREAM: u64 = 0x5249;

/// The seeded He-uniform initialization every pipeline starts from.
pub fn initial_network(dims: &[usize], seed: u64) -> Result<Network> {
    Network::he_uniform(dims, &mut derive_rng(seed, &[INIT_STREAM]))
}

/// Test-set metrics of one trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub arm: String,
    pub dims: Vec<usize>,
    pub clean_acc: f64,
    pub adv_acc: f64,
    /// Mean PGD distortion bound over the searched points that flip.
    pub distortion_mean: Option<f64>,
    /// Searched points that never flipped below the search cap.
    pub distortion_none: usize,
    pub l0: usize,
    pub l1: f64,
    pub l2: f64,
    pub pruning_ratio: f64,
    pub histogram: Histogram,
}

impl ArmReport {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Evaluates `net` under `mask` on the test split and summarises its weights.
pub fn arm_report(
    arm: &str,
    net: &Network,
    mask: Option<&Mask>,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<ArmReport> {
    let test = dataset.test();
    let eval_seed = derive_seed(seed, &[EVAL_STREAM]);
    let ev = evaluate(net, mask, &test, &cfg.eval_attack(dataset.clamp), eval_seed)?;
    let points = &test[..cfg.distortion.points.min(test.len())];
    let dist = mean_distortion(
        net,
        mask,
        points,
        &cfg.distortion_config(dataset.clamp),
        eval_seed,
    )?;
    let norms = layer_norms(net, mask);
    Ok(ArmReport {
        arm: arm.to_string(),
        dims: net.dims().to_vec(),
        clean_acc: ev.clean_accuracy,
        adv_acc: ev.adversarial_accuracy,
        distortion_mean: dist.mean,
        distortion_none: dist.none_count,
        l0: norms.iter().map(|n| n.l0).sum(),
        l1: norms.iter().map(|n| n.l1).sum(),
        l2: norms.iter().map(|n| n.l2 * n.l2).sum::<f64>().sqrt(),
        pruning_ratio: mask.map_or(0.0, Mask::pruning_ratio),
        histogram: weight_histogram(net, mask, cfg.hist.bins, cfg.hist.range)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `b − a`.
    pub delta: f64,
}

/// Side-by-side view of two arms over shared histogram bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub deltas: Vec<MetricDelta>,
    pub edges: Vec<f64>,
    pub counts_a: Vec<usize>,
    pub counts_b: Vec<usize>,
}

impl Comparison {
    pub fn delta(&self, metric: &str) -> Option<f64> {
        self.deltas
            .iter()
            .find(|d| d.metric == metric)
            .map(|d| d.delta)
    }

    pub fn deltas_csv(&self) -> String {
        let mut out = format!("metric,{},{},delta\n", self.a, self.b);
        for d in &self.deltas {
            out.push_str(&format!("{},{},{},{}\n", d.metric, d.a, d.b, d.delta));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = format!("bin_lo,bin_hi,{},{}\n", self.a, self.b);
        for i in 0..self.counts_a.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.edges[i],
                self.edges[i + 1],
                self.counts_a[i],
                self.counts_b[i]
            ));
        }
        out
    }
}

/// Per-metric deltas (`b − a`) plus aligned histogram counts.
pub fn compare_report(a: &ArmReport, b: &ArmReport) -> Result<Comparison> {
    if a.histogram.edges != b.histogram.edges {
        return Err(Error::SchemaMismatch("histogram bin edges differ".into()));
    }
    if a.dims != b.dims {
        return Err(Error::SchemaMismatch(format!(
            "dims {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    let mut deltas = Vec::new();
    let mut push = |metric: &str, x: f64, y: f64| {
        deltas.push(MetricDelta {
            metric: metric.into(),
            a: x,
            b: y,
            delta: y - x,
        })
    };
    push("clean_acc", a.clean_acc, b.clean_acc);
    push("adv_acc", a.adv_acc, b.adv_acc);
    push(
        "distortion_mean",
        a.distortion_mean.unwrap_or(f64::NAN),
        b.distortion_mean.unwrap_or(f64::NAN),
    );
    push("l0", a.l0 as f64, b.l0 as f64);
    push("l1", a.l1, b.l1);
    push("l2", a.l2, b.l2);
    push("pruning_ratio", a.pruning_ratio, b.pruning_ratio);
    push(
        "near_zero_fraction",
        a.histogram.near_zero_fraction().unwrap_or(f64::NAN),
        b.histogram.near_zero_fraction().unwrap_or(f64::NAN),
    );
    Ok(Comparison {
        a: a.arm.clone(),
        b: b.arm.clone(),
        deltas,
        edges: a.histogram.edges.clone(),
        counts_a: a.histogram.counts.clone(),
        counts_b: b.histogram.counts.clone(),
    })
}

/// Outcome of one phase for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub config_digest: String,
    pub ok: bool,
    pub error: Option<String>,
    /// Artifact path (relative to the seed directory) to SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
    pub arms: Vec<ArmReport>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub phases: Vec<PhaseSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_digest: String,
    pub seeds: Vec<SeedSummary>,
}

impl RunSummary {
    pub fn errors(&self) -> Vec<String> {
        self.seeds
            .iter()
            .flat_map(|s| {
                s.phases.iter().filter_map(move |p| {
                    p.error
                        .as_ref()
                        .map(|e| format!("seed {} phase {}: {e}", s.seed, p.phase.name()))
                })
            })
            .collect()
    }

    /// Every artifact digest, keyed by `seed-N/path`.
    pub fn artifact_digests(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for s in &self.seeds {
            for p in &s.phases {
                for (k, v) in &p.artifacts {
                    out.insert(format!("seed-{}/{k}", s.seed), v.clone());
                }
            }
        }
        out
    }

    /// One row per (seed, arm): the three headline metrics.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("seed,arm,pruning_ratio,clean_acc,adv_acc,distortion_mean\n");
        for s in &self.seeds {
            for p in &s.phases {
                for a in &p.arms {
                    let dist = a
                        .distortion_mean
                        .map_or_else(|| "NA".to_string(), |d| d.to_string());
                    out.push_str(&format!(
                        "{},{},{},{},{},{dist}\n",
                        s.seed, a.arm, a.pruning_ratio, a.clean_acc, a.adv_acc
                    ));
                }
            }
        }
        out
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Collects artifacts of one phase and their digests.
struct PhaseWriter<'a> {
    seed_dir: &'a Path,
    phase: Phase,
    digest: &'a str,
    seed: u64,
    summary: PhaseSummary,
}

impl<'a> PhaseWriter<'a> {
    fn new(seed_dir: &'a Path, phase: Phase, digest: &'a str, seed: u64) -> Self {
        Self {
            seed_dir,
            phase,
            digest,
            seed,
            summary: PhaseSummary {
                phase,
                config_digest: digest.to_string(),
                ok: true,
                error: None,
                artifacts: BTreeMap::new(),
                arms: Vec::new(),
                metrics: BTreeMap::new(),
            },
        }
    }

    fn rel(&self, name: &str) -> String {
        format!("{}/{name}", self.phase.name())
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let rel = self.rel(name);
        write_atomic(&self.seed_dir.join(&rel), content.as_bytes())?;
        self.summary
            .artifacts
            .insert(rel, sha256_hex(content.as_bytes()));
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, net: &Network, mask: Option<&Mask>) -> Result<()> {
        let meta = CheckpointMeta {
            seed: Some(self.seed),
            config_digest: Some(self.digest.to_string()),
        };
        let text = checkpoint::to_string(net, mask, &meta)?;
        self.text(name, &text)
    }

    fn arm(&mut self, report: ArmReport) -> Result<()> {
        self.text(&format!("arm-{}.json", report.arm), &to_json(&report)?)?;
        self.summary.arms.push(report);
        Ok(())
    }

    fn finish(self) -> Result<PhaseSummary> {
        let path = self.seed_dir.join(self.phase.name()).join("done.json");
        write_atomic(&path, to_json(&self.summary)?.as_bytes())?;
        Ok(self.summary)
    }
}

fn error_chain(e: &Error) -> String {
    let mut out = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        out.push_str(&format!(": {s}"));
        source = s.source();
    }
    out
}

fn load_done(seed_dir: &Path, phase: Phase, digest: &str) -> Option<PhaseSummary> {
    let text = fs::read_to_string(seed_dir.join(phase.name()).join("done.json")).ok()?;
    let summary: PhaseSummary = serde_json::from_str(&text).ok()?;
    (summary.ok && summary.config_digest == digest).then_some(summary)
}

fn load_net(seed_dir: &Path, rel: &str) -> Result<(Network, Option<Mask>)> {
    let (net, mask, _) = checkpoint::load_checkpoint(seed_dir.join(rel))?;
    Ok((net, mask))
}

struct SeedContext<'a> {
    cfg: &'a ExperimentConfig,
    digest: &'a str,
    seed: u64,
    dir: PathBuf,
    dataset: Dataset,
    train: Vec<Example>,
    val: Vec<Example>,
}

impl SeedContext<'_> {
    fn train_config(&self) -> TrainConfig {
        self.cfg.train_config(self.seed, self.dataset.clamp)
    }

    fn writer(&self, phase: Phase) -> PhaseWriter<'_> {
        PhaseWriter::new(&self.dir, phase, self.digest, self.seed)
    }

    fn report(&self, arm: &str, net: &Network, mask: Option<&Mask>) -> Result<ArmReport> {
        arm_report(arm, net, mask, &self.dataset, self.cfg, self.seed)
    }

    fn theta0(&self) -> Result<Network> {
        let path = self.dir.join("init.ckpt.json");
        if path.exists() {
            return Ok(checkpoint::load_checkpoint(&path)?.0);
        }
        let net = initial_network(&self.cfg.net.dims, self.seed)?;
        let meta = CheckpointMeta {
            seed: Some(self.seed),
            config_digest: Some(self.digest.to_string()),
        };
        write_atomic(&path, checkpoint::to_string(&net, None, &meta)?.as_bytes())?;
        Ok(net)
    }

    fn dense(&self) -> Result<Network> {
        load_net(&self.dir, "train/dense.ckpt.json")
            .map(|(n, _)| n)
            .map_err(|e| Error::InvalidConfig(format!("phase needs a finished train phase ({e})")))
    }

    fn run_phase(&self, phase: Phase) -> Result<PhaseSummary> {
        match phase {
            Phase::Train => self.phase_train(),
            Phase::Prune => self.phase_prune(),
            Phase::Lottery => self.phase_lottery(),
            Phase::Iwi => self.phase_iwi(),
            Phase::Certify => self.phase_certify(),
        }
    }

    fn phase_train(&self) -> Result<PhaseSummary> {
        let mut w = self.writer(Phase::Train);
        let theta0 = self.theta0()?;
        let (dense, record) =
            adversarial_train(&theta0, None, &self.train, &self.val, &self.train_config())?;
        w.checkpoint("dense.ckpt.json", &dense, None)?;
        w.text("history.csv", &record.to_csv())?;
        w.text("sparsity.csv", &sparsity_report(&dense, None)?.to_csv())?;
        w.arm(self.report("dense", &dense, None)?)?;
        w.finish()
    }

    fn phase_prune(&self) -> Result<PhaseSummary> {
        let mut w = self.writer(Phase::Prune);
        let dense = self.dense()?;
        let ones = Mask::ones(dense.dims());
        let retrain = TrainConfig {
            mode: self.cfg.train.stop_mode_with(self.cfg.prune.retrain_epochs),
            ..self.train_config()
        };
        for &method in &self.cfg.prune.methods {
            for &ratio in &self.cfg.prune.ratios {
                let tag = format!("{}-{ratio}", method.name());
                let outcome =
                    prune_with(method, &dense, &ones, ratio, self.cfg.prune.include_final)?;
                if outcome.warning.is_some() {
                    w.summary
                        .metrics
                        .insert(format!("{tag}-achieved_ratio"), outcome.achieved_ratio);
                }
                let mask = outcome.mask;
                let (net, record) =
                    adversarial_train(&dense, Some(&mask), &self.train, &self.val, &retrain)?;
                w.checkpoint(&format!("{tag}-inherit.ckpt.json"), &net, Some(&mask))?;
                w.text(&format!("{tag}-inherit-history.csv"), &record.to_csv())?;
                w.text(
                    &format!("{tag}-sparsity.csv"),
                    &sparsity_report(&net, Some(&mask))?.to_csv(),
                )?;
                w.arm(self.report(&format!("{tag}-inherit"), &net, Some(&mask))?)?;
                if self.cfg.prune.rand_reinit {
                    let seed = derive_seed(self.seed, &[REINIT_STREAM]);
                    let fresh = rand_reinit(&dense, &mask, seed)?;
                    let (net, record) = adversarial_train(
                        &fresh,
                        Some(&mask),
                        &self.train,
                        &self.val,
                        &self.train_config(),
                    )?;
                    w.checkpoint(&format!("{tag}-rand.ckpt.json"), &net, Some(&mask))?;
                    w.text(&format!("{tag}-rand-history.csv"), &record.to_csv())?;
                    w.arm(self.report(&format!("{tag}-rand"), &net, Some(&mask))?)?;
                }
            }
        }
        w.finish()
    }

    fn phase_lottery(&self) -> Result<PhaseSummary> {
        let mut w = self.writer(Phase::Lottery);
        let theta0 = self.theta0()?;
        let lcfg = self.cfg.lottery_config(self.seed, self.dataset.clamp);
        let found = find_winning_ticket(&theta0, &self.train, &self.val, &lcfg)?;
        w.checkpoint("ticket.ckpt.json", &found.ticket, Some(&found.mask))?;
        w.text("iterations.csv", &found.to_csv())?;
        let tcfg = TrainConfig {
            mode: self.cfg.train.stop_mode_with(self.cfg.lottery.train_epochs),
            ..self.train_config()
        };
        let (trained, record) =
            train_ticket(&found.ticket, &found.mask, &self.train, &self.val, &tcfg)?;
        w.checkpoint("trained.ckpt.json", &trained, Some(&found.mask))?;
        w.text("history.csv", &record.to_csv())?;
        w.summary
            .metrics
            .insert("cumulative_ratio".into(), found.mask.pruning_ratio());
        w.arm(self.report("lottery", &trained, Some(&found.mask))?)?;
        w.finish()
    }

    fn phase_iwi(&self) -> Result<PhaseSummary> {
        let mut w = self.writer(Phase::Iwi);
        let theta0 = self.theta0()?;
        let icfg = self.cfg.iwi_config(self.seed, self.dataset.clamp);
        let out = inverse_weights_inheritance(&theta0, &self.train, &self.val, &icfg)?;
        w.checkpoint(
            "ticket.ckpt.json",
            &out.ticket.ticket,
            Some(&out.ticket.mask),
        )?;
        w.text("lottery-iterations.csv", &out.ticket.to_csv())?;
        w.checkpoint(
            "finetuned.ckpt.json",
            &out.finetuned,
            Some(&out.ticket.mask),
        )?;
        w.text("finetune-history.csv", &out.finetune_record.to_csv())?;
        w.checkpoint("inherited.ckpt.json", &out.inherited, None)?;
        w.checkpoint("iwi.ckpt.json", &out.network, None)?;
        w.text(
            "continuation-history.csv",
            &out.continuation_record.to_csv(),
        )?;
        let (base, base_record) = baseline_train(
            &theta0,
            &self.train,
            &self.val,
            &icfg,
            out.continuation_record.rows.len(),
        )?;
        w.checkpoint("baseline.ckpt.json", &base, None)?;
        w.text("baseline-history.csv", &base_record.to_csv())?;
        let base_report = self.report("baseline", &base, None)?;
        let iwi_report = self.report("iwi", &out.network, None)?;
        let cmp = compare_report(&base_report, &iwi_report)?;
        w.text("compare.csv", &cmp.deltas_csv())?;
        w.text("compare-hist.csv", &cmp.histogram_csv())?;
        w.summary
            .metrics
            .insert("l1_delta".into(), cmp.delta("l1").unwrap_or(f64::NAN));
        w.summary
            .metrics
            .insert("pipeline_epochs".into(), out.total_epochs() as f64);
        w.summary
            .metrics
            .insert("baseline_epochs".into(), base_record.rows.len() as f64);
        w.arm(base_report)?;
        w.arm(iwi_report)?;
        w.finish()
    }

    fn phase_certify(&self) -> Result<PhaseSummary> {
        let mut w = self.writer(Phase::Certify);
        let dense = self.dense()?;
        let test = self.dataset.test();
        let points = &test[..self.cfg.certify.points.min(test.len())];
        let grid = if self.dataset.dim() <= 3 {
            self.cfg.certify.grid_check()
        } else {
            None
        };
        for &pair in &self.cfg.certify.pairs {
            let rows = certify_examples(&dense, None, points, pair, grid)?;
            w.text(&format!("{}.csv", pair.name()), &certify_csv(&rows))?;
            let mean_r = rows.iter().map(|r| r.radius).sum::<f64>() / rows.len() as f64;
            let violations: usize = rows.iter().filter_map(|r| r.grid_violations).sum();
            w.summary
                .metrics
                .insert(format!("{}-mean_radius", pair.name()), mean_r);
            w.summary.metrics.insert(
                format!("{}-grid_violations", pair.name()),
                violations as f64,
            );
        }
        w.finish()
    }
}

fn run_seed(cfg: &ExperimentConfig, digest: &str, seed: u64) -> Result<SeedSummary> {
    let dir = cfg.out.join(format!("seed-{seed}"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let dataset = cfg.dataset.build(seed)?;
    let ctx = SeedContext {
        cfg,
        digest,
        seed,
        dir,
        train: dataset.train(),
        val: dataset.val(),
        dataset,
    };
    let mut phases = Vec::new();
    for &phase in &cfg.pipeline {
        if let Some(done) = load_done(&ctx.dir, phase, digest) {
            phases.push(done);
            continue;
        }
        match ctx.run_phase(phase) {
            Ok(summary) => phases.push(summary),
            Err(e) => {
                phases.push(PhaseSummary {
                    phase,
                    config_digest: digest.to_string(),
                    ok: false,
                    error: Some(error_chain(&e)),
                    artifacts: BTreeMap::new(),
                    arms: Vec::new(),
                    metrics: BTreeMap::new(),
                });
                break;
            }
        }
    }
    Ok(SeedSummary { seed, phases })
}

/// Runs the configured pipeline for every seed and writes `summary.json`
/// and `table.csv` into the output directory. Phase failures are recorded in
/// the summary, and the failing seed stops at that phase.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let digest = cfg.digest();
    write_atomic(&cfg.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, &digest, s))
        .collect::<Result<Vec<_>>>()?;
    let summary = RunSummary {
        config_digest: digest,
        seeds,
    };
    write_atomic(&cfg.out.join("summary.json"), to_json(&summary)?.as_bytes())?;
    write_atomic(&cfg.out.join("table.csv"), summary.table_csv().as_bytes())?;
    Ok(summary)
}
