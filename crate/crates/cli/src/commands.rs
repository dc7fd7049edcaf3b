//! One function per subcommand: resolve config (file, then flags), run, and
//! write the report next to any data outputs.

use std::path::{Path, PathBuf};

use lalign_core::backfill::{
    backfill_curve, default_beta_grid, make_ordering, BackfillCurve, OrderingKind,
};
use lalign_core::diagnostics::{run_diagnostics, DiagnoseOptions, DiagnosticsReport};
use lalign_core::embedding::{load_bundle, save_bundle, synth_pair, ClassSpread, SynthSpec};
use lalign_core::linalg::kde::{angle_grid, mode};
use lalign_core::linalg::{column_angle_kde, column_angles, silverman_bandwidth};
use lalign_core::retrieval::{
    check_pairwise_inequalities, compatibility_verdict, retrieval_report, CompatibilityVerdict,
    EvalOptions, PairwiseReport, RetrievalReport, DEFAULT_TOP_K,
};
use lalign_core::trainer::{train as train_maps, TrainConfig, TrainReport};
use lalign_core::transforms::{read_map, write_map, Transform};
use lalign_core::{EmbeddingSet, PairedEmbeddings};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::report::{load_config, require, InputHashes, Provenance};
use crate::{
    AnglesArgs, BackfillArgs, DiagnoseArgs, EvalArgs, SynthArgs, TrainArgs, TransformArgs,
};

macro_rules! override_with {
    ($target:expr, $flag:expr) => {
        if let Some(v) = $flag {
            $target = v;
        }
    };
}

fn override_path(target: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *target = flag;
    }
}

fn provenance(command: &'static str, threads: usize) -> Provenance<'static> {
    Provenance {
        command,
        threads,
        inputs: InputHashes::default(),
    }
}

fn load_map(path: &Path, hashes: &mut InputHashes) -> CliResult<Transform> {
    hashes.file(path)?;
    Ok(read_map(path)?)
}

fn load_set(path: &Path, hashes: &mut InputHashes) -> CliResult<EmbeddingSet> {
    hashes.bundle(path)?;
    Ok(load_bundle(path)?)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRunConfig {
    pub out: Option<PathBuf>,
    pub spec: SynthSpec,
}

#[derive(Serialize)]
struct SynthResult {
    count: usize,
    dim_old: usize,
    dim_new: usize,
    old_bundle: PathBuf,
    new_bundle: PathBuf,
}

pub fn synth(args: SynthArgs, threads: usize) -> CliResult<()> {
    let mut cfg: SynthRunConfig = load_config(args.config.as_deref())?;
    override_path(&mut cfg.out, args.out);
    let spec = &mut cfg.spec;
    override_with!(spec.seed, args.seed);
    override_with!(spec.num_classes, args.num_classes);
    override_with!(spec.per_class, args.per_class);
    override_with!(spec.dim_old, args.dim_old);
    override_with!(spec.dim_new, args.dim_new);
    match args.spread.as_slice() {
        [] => {}
        [s] => spec.class_spread = ClassSpread::Shared(*s),
        many => spec.class_spread = ClassSpread::PerClass(many.to_vec()),
    }
    override_with!(spec.inter_class_separation, args.separation);
    override_with!(spec.distortion, args.distortion);
    override_with!(spec.noise_scale, args.noise);
    override_with!(spec.condition_number, args.condition_number);
    override_with!(spec.new_spread_factor, args.new_spread_factor);
    let out = require(&cfg.out, "out")?.to_path_buf();

    let pair = synth_pair(&cfg.spec)?;
    let (old_dir, new_dir) = (out.join("old"), out.join("new"));
    save_bundle(&pair.old, &old_dir)?;
    save_bundle(&pair.new, &new_dir)?;
    let result = SynthResult {
        count: pair.count(),
        dim_old: pair.old.dim(),
        dim_new: pair.new.dim(),
        old_bundle: old_dir,
        new_bundle: new_dir,
    };
    let report = out.join("synth_report.json");
    provenance("synth", threads).write(&report, &cfg, &result)?;
    println!(
        "wrote {} paired samples ({}-d old, {}-d new) to {}",
        result.count,
        result.dim_old,
        result.dim_new,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub old: Option<PathBuf>,
    pub new: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Serialize)]
struct TrainResult<'a> {
    forward_kind: &'static str,
    backward_kind: &'static str,
    forward_map: PathBuf,
    backward_map: PathBuf,
    report: &'a TrainReport,
}

pub fn train(args: TrainArgs, threads: usize) -> CliResult<()> {
    let mut cfg: TrainRunConfig = load_config(args.config.as_deref())?;
    override_path(&mut cfg.old, args.old);
    override_path(&mut cfg.new, args.new);
    override_path(&mut cfg.out, args.out);
    let t = &mut cfg.train;
    override_with!(t.seed, args.seed);
    override_with!(t.epochs, args.epochs);
    override_with!(t.batch_size, args.batch_size);
    override_with!(t.learning_rate, args.learning_rate);
    override_with!(t.backward_kind, args.backward);
    override_with!(t.forward_kind, args.forward);
    override_with!(t.contrastive_mode, args.contrastive_mode);
    override_with!(
        t.freeze_backward_in_contrastive,
        args.freeze_backward_in_contrastive
    );
    override_with!(t.weights.w1, args.w1);
    override_with!(t.weights.w2, args.w2);
    override_with!(t.weights.w3, args.w3);
    override_with!(t.weights.lambda, args.lambda);
    override_with!(t.weights.alpha, args.alpha);
    override_with!(t.weights.temperature, args.temperature);
    if args.backward_init_std.is_some() {
        t.backward_init_std = args.backward_init_std;
    }
    if args.forward_init_std.is_some() {
        t.forward_init_std = args.forward_init_std;
    }
    let out = require(&cfg.out, "out")?.to_path_buf();
    let mut prov = provenance("train", threads);
    let old = load_set(require(&cfg.old, "old")?, &mut prov.inputs)?;
    let new = load_set(require(&cfg.new, "new")?, &mut prov.inputs)?;
    let pair = PairedEmbeddings::new(old, new)?;

    let trained = train_maps(&pair, &cfg.train)?;
    std::fs::create_dir_all(&out)?;
    let result = TrainResult {
        forward_kind: trained.forward.kind(),
        backward_kind: trained.backward.kind(),
        forward_map: out.join("forward.map"),
        backward_map: out.join("backward.map"),
        report: &trained.report,
    };
    write_map(&result.forward_map, &trained.forward)?;
    write_map(&result.backward_map, &trained.backward)?;
    prov.write(&out.join("train_report.json"), &cfg, &result)?;
    let last = trained.report.history.last().map_or(f64::NAN, |b| b.total);
    println!(
        "trained {} steps: final total loss {last:.6}, backward Gram deviation {:.3e}",
        trained.report.steps, trained.report.final_gram_deviation
    );
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformRunConfig {
    pub input: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model_tag: Option<String>,
}

#[derive(Serialize)]
struct TransformResult {
    count: usize,
    in_dim: usize,
    out_dim: usize,
    map_kind: &'static str,
    model_tag: String,
}

pub fn transform(args: TransformArgs, threads: usize) -> CliResult<()> {
    let mut cfg: TransformRunConfig = load_config(args.config.as_deref())?;
    override_path(&mut cfg.input, args.input);
    override_path(&mut cfg.map, args.map);
    override_path(&mut cfg.out, args.out);
    if args.model_tag.is_some() {
        cfg.model_tag = args.model_tag;
    }
    let out = require(&cfg.out, "out")?.to_path_buf();
    let mut prov = provenance("transform", threads);
    let input = load_set(require(&cfg.input, "input")?, &mut prov.inputs)?;
    let map = load_map(require(&cfg.map, "map")?, &mut prov.inputs)?;
    let tag = cfg
        .model_tag
        .clone()
        .unwrap_or_else(|| format!("{}({})", map.kind(), input.model_tag()));

    let mapped = map.apply_set(&input, tag.clone())?;
    save_bundle(&mapped, &out)?;
    let result = TransformResult {
        count: mapped.count(),
        in_dim: input.dim(),
        out_dim: mapped.dim(),
        map_kind: map.kind(),
        model_tag: tag,
    };
    prov.write(&out.join("transform_report.json"), &cfg, &result)?;
    println!(
        "wrote {} {}-d vectors to {}",
        result.count,
        result.out_dim,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalRunConfig {
    pub old: Option<PathBuf>,
    pub new: Option<PathBuf>,
    pub forward: Option<PathBuf>,
    pub backward: Option<PathBuf>,
    /// Empty selects a default matrix based on which maps are given.
    pub pairs: Vec<String>,
    pub top_k: Vec<usize>,
    pub options: EvalOptions,
    pub pairwise: bool,
    pub out: Option<PathBuf>,
}

impl Default for EvalRunConfig {
    fn default() -> Self {
        Self {
            old: None,
            new: None,
            forward: None,
            backward: None,
            pairs: Vec::new(),
            top_k: DEFAULT_TOP_K.to_vec(),
            options: EvalOptions {
                leave_one_out: true,
                ..EvalOptions::default()
            },
            pairwise: false,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Old,
    New,
    ForwardOld,
    BackwardNew,
}

impl Side {
    fn parse(s: &str) -> CliResult<Self> {
        match s {
            "old" => Ok(Side::Old),
            "new" => Ok(Side::New),
            "f-old" => Ok(Side::ForwardOld),
            "b-new" => Ok(Side::BackwardNew),
            _ => Err(CliError::usage(format!(
                "unknown side {s:?}; expected old, new, f-old or b-new"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::Old => "old",
            Side::New => "new",
            Side::ForwardOld => "f-old",
            Side::BackwardNew => "b-new",
        }
    }
}

fn parse_pair(s: &str) -> CliResult<(Side, Side)> {
    let (q, g) = s
        .split_once(':')
        .ok_or_else(|| CliError::usage(format!("pair {s:?} is not QUERY:GALLERY")))?;
    Ok((Side::parse(q)?, Side::parse(g)?))
}

/// The loaded bundles plus whichever adapted views the maps allow.
struct Sides {
    old: EmbeddingSet,
    new: EmbeddingSet,
    forward_old: Option<EmbeddingSet>,
    backward_new: Option<EmbeddingSet>,
}

impl Sides {
    fn load(
        old: &Path,
        new: &Path,
        forward: Option<&Path>,
        backward: Option<&Path>,
        hashes: &mut InputHashes,
    ) -> CliResult<Self> {
        let old = load_set(old, hashes)?;
        let new = load_set(new, hashes)?;
        PairedEmbeddings::new(old.clone(), new.clone())?;
        let forward_old = match forward {
            Some(p) => Some(load_map(p, hashes)?.apply_set(&old, "F(old)")?),
            None => None,
        };
        let backward_new = match backward {
            Some(p) => Some(load_map(p, hashes)?.apply_set(&new, "B(new)")?),
            None => None,
        };
        Ok(Self {
            old,
            new,
            forward_old,
            backward_new,
        })
    }

    fn get(&self, side: Side) -> CliResult<&EmbeddingSet> {
        let missing =
            |flag: &str| CliError::usage(format!("side {:?} needs --{flag}", side.name()));
        match side {
            Side::Old => Ok(&self.old),
            Side::New => Ok(&self.new),
            Side::ForwardOld => self.forward_old.as_ref().ok_or_else(|| missing("forward")),
            Side::BackwardNew => self
                .backward_new
                .as_ref()
                .ok_or_else(|| missing("backward")),
        }
    }

    fn default_pairs(&self) -> Vec<(Side, Side)> {
        use Side::*;
        match (&self.forward_old, &self.backward_new) {
            (Some(_), Some(_)) => vec![
                (Old, Old),
                (ForwardOld, Old),
                (BackwardNew, Old),
                (BackwardNew, ForwardOld),
            ],
            (None, Some(_)) => vec![(Old, Old), (BackwardNew, Old)],
            (Some(_), None) => vec![(Old, Old), (ForwardOld, Old)],
            (None, None) => vec![(Old, Old), (New, New), (New, Old)],
        }
    }
}

#[derive(Serialize)]
struct PairReport {
    pair: String,
    report: RetrievalReport,
}

#[derive(Serialize)]
struct VerdictReport {
    pair: String,
    satisfied: bool,
    verdict: CompatibilityVerdict,
}

#[derive(Serialize, Default)]
struct PairwiseResults {
    old_vs_new: Option<PairwiseReport>,
    old_vs_b_new: Option<PairwiseReport>,
}

#[derive(Serialize)]
struct EvalResult {
    reports: Vec<PairReport>,
    verdicts: Vec<VerdictReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pairwise: Option<PairwiseResults>,
}

pub fn eval(args: EvalArgs, threads: usize) -> CliResult<()> {
    let mut cfg: EvalRunConfig = load_config(args.config.as_deref())?;
    override_path(&mut cfg.old, args.old);
    override_path(&mut cfg.new, args.new);
    override_path(&mut cfg.forward, args.forward);
    override_path(&mut cfg.backward, args.backward);
    override_path(&mut cfg.out, args.out);
    if !args.pairs.is_empty() {
        cfg.pairs = args.pairs;
    }
    if !args.top_k.is_empty() {
        cfg.top_k = args.top_k;
    }
    override_with!(cfg.options.distance, args.distance);
    override_with!(cfg.options.leave_one_out, args.leave_one_out);
    override_with!(cfg.pairwise, args.pairwise);
    let out = require(&cfg.out, "out")?.to_path_buf();
    let mut prov = provenance("eval", threads);
    let sides = Sides::load(
        require(&cfg.old, "old")?,
        require(&cfg.new, "new")?,
        cfg.forward.as_deref(),
        cfg.backward.as_deref(),
        &mut prov.inputs,
    )?;
    let pairs = if cfg.pairs.is_empty() {
        sides.default_pairs()
    } else {
        cfg.pairs
            .iter()
            .map(|p| parse_pair(p))
            .collect::<CliResult<_>>()?
    };
    if pairs.is_empty() || cfg.top_k.is_empty() {
        return Err(CliError::usage(
            "need at least one pair and one top-k value",
        ));
    }
    cfg.pairs = pairs
        .iter()
        .map(|(q, g)| format!("{}:{}", q.name(), g.name()))
        .collect();

    let mut result = EvalResult {
        reports: Vec::new(),
        verdicts: Vec::new(),
        pairwise: None,
    };
    for (&(q, g), name) in pairs.iter().zip(&cfg.pairs) {
        let report = retrieval_report(sides.get(q)?, sides.get(g)?, &cfg.top_k, &cfg.options)?;
        println!(
            "{name:<12} top1 {:.4}  mAP {:.4}",
            report.cmc_top_k.get(&1).copied().unwrap_or(f64::NAN),
            report.map_score
        );
        result.reports.push(PairReport {
            pair: name.clone(),
            report,
        });
        if g == Side::Old && matches!(q, Side::New | Side::BackwardNew) {
            let verdict =
                compatibility_verdict(sides.get(q)?, &sides.old, &sides.old, &cfg.options)?;
            println!("{name:<12} compatible: {}", verdict.satisfied());
            result.verdicts.push(VerdictReport {
                pair: name.clone(),
                satisfied: verdict.satisfied(),
                verdict,
            });
        }
    }
    if cfg.pairwise {
        let mut d1 = PairwiseResults::default();
        if sides.old.dim() == sides.new.dim() {
            d1.old_vs_new = Some(check_pairwise_inequalities(&sides.old, &sides.new)?);
        }
        if let Some(b) = &sides.backward_new {
            d1.old_vs_b_new = Some(check_pairwise_inequalities(
                &sides.old.truncate(b.dim())?,
                b,
            )?);
        }
        result.pairwise = Some(d1);
    }
    prov.write(&out.join("eval_report.json"), &cfg, &result)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackfillRunConfig {
    pub old: Option<PathBuf>,
    pub new: Option<PathBuf>,
    pub forward: Option<PathBuf>,
    pub backward: Option<PathBuf>,
    pub orderings: Vec<OrderingKind>,
    pub beta_grid: Vec<f64>,
    pub options: EvalOptions,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for BackfillRunConfig {
    fn default() -> Self {
        Self {
            old: None,
            new: None,
            forward: None,
            backward: None,
            orderings: vec![OrderingKind::OursMse, OrderingKind::Random],
            beta_grid: default_beta_grid(),
            options: EvalOptions {
                leave_one_out: true,
                ..EvalOptions::default()
            },
            seed: 0,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct BackfillResult {
    /// Query set is B(new); the gallery moves from F(old) to B(new).
    curves: Vec<BackfillCurve>,
    csv_files: Vec<PathBuf>,
}

pub fn backfill(args: BackfillArgs, threads: usize) -> CliResult<()> {
    let mut cfg: BackfillRunConfig = load_config(args.config.as_deref())?;
    override_path(&mut cfg.old, args.old);
    override_path(&mut cfg.new, args.new);
    override_path(&mut cfg.forward, args.forward);
    override_path(&mut cfg.backward, args.backward);
    override_path(&mut cfg.out, args.out);
    if !args.orderings.is_empty() {
        cfg.orderings = args.orderings;
    }
    if !args.beta_grid.is_empty() {
        cfg.beta_grid = args.beta_grid;
    }
    override_with!(cfg.options.distance, args.distance);
    override_with!(cfg.options.leave_one_out, args.leave_one_out);
    override_with!(cfg.seed, args.seed);
    let out = require(&cfg.out, "out")?.to_path_buf();
    require(&cfg.forward, "forward")?;
    require(&cfg.backward, "backward")?;
    if cfg.orderings.is_empty() {
        return Err(CliError::usage("need at least one ordering"));
    }
    let mut prov = provenance("backfill", threads);
    let sides = Sides::load(
        require(&cfg.old, "old")?,
        require(&cfg.new, "new")?,
        cfg.forward.as_deref(),
        cfg.backward.as_deref(),
        &mut prov.inputs,
    )?;
    let (fo, bn) = (sides.get(Side::ForwardOld)?, sides.get(Side::BackwardNew)?);

    std::fs::create_dir_all(&out)?;
    let mut result = BackfillResult {
        curves: Vec::new(),
        csv_files: Vec::new(),
    };
    for &kind in &cfg.orderings {
        let ordering = make_ordering(kind, fo, cfg.seed)?;
        let curve = backfill_curve(bn, fo, bn, &ordering, &cfg.beta_grid, &cfg.options)?;
        let csv = out.join(format!("backfill_{}.csv", kind.name()));
        curve.write_csv(&csv)?;
        println!(
            "{:<12} M~(top1) {:.4}  M~(mAP) {:.4}",
            kind.name(),
            curve.m_tilde_cmc_top1,
            curve.m_tilde_map
        );
        result.curves.push(curve);
        result.csv_files.push(csv);
    }
    prov.write(&out.join("backfill_report.json"), &cfg, &result)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnglesRunConfig {
    pub map: Option<PathBuf>,
    pub step: f64,
    pub bandwidth: Option<f64>,
    pub out: Option<PathBuf>,
}

impl Default for AnglesRunConfig {
    fn default() -> Self {
        Self {
            map: None,
            step: 1.0,
            bandwidth: None,
            out: None,
        }
    }
}

#[derive(Serialize)]
struct AnglesResult {
    columns: usize,
    bandwidth: f64,
    mode_deg: f64,
    gram_deviation: f64,
    csv_file: PathBuf,
}

pub fn angles(args: AnglesArgs, threads: usize) -> CliResult<()> {
    let mut cfg: AnglesRunConfig = load_config(args.config.as_deref())?;
    override_path(&mut cfg.map, args.map);
    override_path(&mut cfg.out, args.out);
    override_with!(cfg.step, args.step);
    if args.bandwidth.is_some() {
        cfg.bandwidth = args.bandwidth;
    }
    let out = require(&cfg.out, "out")?.to_path_buf();
    if !(cfg.step > 0.0 && cfg.step <= 180.0) {
        return Err(CliError::usage("step must be in (0, 180]"));
    }
    let mut prov = provenance("angles", threads);
    let map = load_map(require(&cfg.map, "map")?, &mut prov.inputs)?;
    let w = map.linear_part().ok_or_else(|| {
        CliError::Data(lalign_core::Error::InvalidConfig(format!(
            "angle analysis needs a single-matrix map, got {}",
            map.kind()
        )))
    })?;

    let grid = angle_grid(cfg.step);
    let density = column_angle_kde(w, cfg.bandwidth, &grid)?;
    let bandwidth = match cfg.bandwidth {
        Some(h) => h,
        None => silverman_bandwidth(&column_angles(w)?),
    };
    std::fs::create_dir_all(&out)?;
    let csv_file = out.join("angles.csv");
    let mut text = String::from("angle_deg,density\n");
    for (a, d) in grid.iter().zip(&density) {
        text.push_str(&format!("{a},{d}\n"));
    }
    std::fs::write(&csv_file, text)?;
    let result = AnglesResult {
        columns: w.cols(),
        bandwidth,
        mode_deg: mode(&grid, &density),
        gram_deviation: map.gram_deviation().unwrap_or(f64::NAN),
        csv_file,
    };
    prov.write(&out.join("angles_report.json"), &cfg, &result)?;
    println!(
        "{} columns, KDE mode {:.1} deg, Gram deviation {:.4}",
        result.columns, result.mode_deg, result.gram_deviation
    );
    Ok(())
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseRunConfig {
    pub options: DiagnoseOptions,
    pub out: Option<PathBuf>,
}

pub fn diagnose(args: DiagnoseArgs, threads: usize) -> CliResult<()> {
    let mut cfg: DiagnoseRunConfig = load_config(args.config.as_deref())?;
    override_with!(cfg.options.seed, args.seed);
    override_with!(cfg.options.trials, args.trials);
    override_path(&mut cfg.out, args.out);
    cfg.options.inject_bad_gradient |= args.inject_bad_gradient;
    if cfg.options.trials == 0 {
        return Err(CliError::usage("trials must be positive"));
    }

    let report: DiagnosticsReport = run_diagnostics(&cfg.options)?;
    for c in &report.checks {
        println!(
            "{} {:<50} worst {:.3e} (tol {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.worst,
            c.tolerance
        );
    }
    if let Some(out) = &cfg.out {
        provenance("diagnose", threads).write(&out.join("diagnose_report.json"), &cfg, &report)?;
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::CheckFailed(format!(
            "{failed} diagnostic check(s) failed"
        )));
    }
    Ok(())
}
