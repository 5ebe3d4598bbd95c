//! Experiment orchestration: builds the equalizer variants, trains them on the
//! first frame, selects a checkpoint on the first evaluation frame and scores
//! every evaluation frame.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{generate_frames, ChannelConfig, SymbolFrame};
use crate::constellation::Constellation;
use crate::demapper::{estimate_sigma2, DemapperParams};
use crate::error::{Error, Result};
use crate::framing::{split_protocol, windowize, TapLineDataset};
use crate::loss::{bce_loss, labels_to_bits, mse_loss, msex_loss, proxy_ce_loss, LossReport};
use crate::metrics::{report_from_bit_probabilities, report_from_equalized, EvalReport, EVAL_CSV_COLUMNS};
use crate::nn::{self, AdamConfig, Gradients, Mlp, OptimizerState, OutputActivation};

/// Hidden layers shared by every neural variant.
pub const EQ_HIDDEN: [usize; 2] = [32, 26];
/// Extra hidden layer of the larger joint network.
pub const JOINT2_EXTRA_HIDDEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Equalizer trained with MSE.
    EqMse,
    /// Equalizer trained with entropy-regularized MSE.
    EqMsex,
    /// Joint equalizer-demapper with per-bit sigmoid outputs.
    Joint1,
    /// Joint network with an additional hidden layer.
    Joint2,
    /// Single affine layer trained with MSE.
    Linear,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::EqMse,
        Variant::EqMsex,
        Variant::Joint1,
        Variant::Joint2,
        Variant::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EqMse => "eq_mse",
            Variant::EqMsex => "eq_msex",
            Variant::Joint1 => "joint1",
            Variant::Joint2 => "joint2",
            Variant::Linear => "linear",
        }
    }

    pub fn is_joint(self) -> bool {
        matches!(self, Variant::Joint1 | Variant::Joint2)
    }

    pub fn layer_sizes(self, taps: usize, bits_per_symbol: usize) -> Vec<usize> {
        let [h1, h2] = EQ_HIDDEN;
        match self {
            Variant::EqMse | Variant::EqMsex => vec![taps, h1, h2, 1],
            Variant::Joint1 => vec![taps, h1, h2, bits_per_symbol],
            Variant::Joint2 => vec![taps, h1, h2, JOINT2_EXTRA_HIDDEN, bits_per_symbol],
            Variant::Linear => vec![taps, 1],
        }
    }

    pub fn output_activation(self) -> OutputActivation {
        if self.is_joint() {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Linear
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?} (expected one of eq_mse, eq_msex, joint1, joint2, linear)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainingParams {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 256,
            epochs: 200,
        }
    }
}

impl TrainingParams {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub bits_per_symbol: usize,
    pub channel: ChannelConfig,
    pub taps: usize,
    pub variant: Variant,
    pub training: TrainingParams,
    /// Master seed for initialization and shuffling.
    pub seed: u64,
    pub n_frames: usize,
    pub frame_len: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.bits_per_symbol) {
            return Err(Error::invalid("bits_per_symbol must be in 1..=6"));
        }
        if self.taps == 0 || self.taps.is_multiple_of(2) {
            return Err(Error::invalid(format!("taps must be odd and positive, got {}", self.taps)));
        }
        if self.training.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.training.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.n_frames < 2 {
            return Err(Error::invalid("n_frames must be at least 2"));
        }
        if self.frame_len < self.taps {
            return Err(Error::invalid("frame_len must be at least the tap count"));
        }
        self.channel.validate()
    }

    pub fn constellation(&self) -> Result<Constellation> {
        Constellation::make_ask(self.bits_per_symbol)
    }
}

/// Independent 64-bit seed for sub-stream `stream` of `master` (SplitMix64).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

pub fn build_variant(cfg: &ExperimentConfig) -> Result<Mlp> {
    cfg.validate()?;
    Mlp::init(
        &cfg.variant.layer_sizes(cfg.taps, cfg.bits_per_symbol),
        cfg.variant.output_activation(),
        derive_seed(cfg.seed, INIT_STREAM),
    )
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Selected checkpoint.
    pub model: Mlp,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    /// Checkpoint-selection objective on the first evaluation frame, per epoch.
    pub selection_trace: Vec<f64>,
    /// σ² used by the MSE-X entropy term in each epoch (MSE-X runs only).
    pub sigma2_trace: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub reports: Vec<EvalReport>,
    /// Number of examples from each frame consumed by gradient updates.
    pub gradient_reads: BTreeMap<usize, usize>,
    pub wall_clock_seconds: f64,
}

impl RunResult {
    /// Symbol-weighted average over the evaluation frames.
    pub fn summary(&self) -> Summary {
        Summary::from_reports(&self.reports)
    }
}

/// Aggregate of several per-frame reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub ber: f64,
    pub air_symbolwise: Option<f64>,
    pub gmi_bitwise: f64,
    pub sigma2: Option<f64>,
    pub mean_conditional_variance: Option<f64>,
}

impl Summary {
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let total: f64 = reports.iter().map(|r| r.n_symbols as f64).sum();
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(|r| f(r) * r.n_symbols as f64).sum::<f64>() / total;
        let avg_opt = |f: &dyn Fn(&EvalReport) -> Option<f64>| {
            reports
                .iter()
                .map(|r| f(r).map(|v| v * r.n_symbols as f64))
                .sum::<Option<f64>>()
                .map(|s| s / total)
        };
        Self {
            ber: avg(&|r| r.ber),
            air_symbolwise: avg_opt(&|r| r.air_symbolwise),
            gmi_bitwise: avg(&|r| r.gmi_bitwise),
            sigma2: avg_opt(&|r| r.sigma2_used),
            mean_conditional_variance: avg_opt(&|r| r.mean_conditional_variance()),
        }
    }
}

/// Inputs, targets and label bits of one frame.
struct Prepared {
    data: TapLineDataset,
    bits: Vec<u8>,
}

impl Prepared {
    fn new(frame: &SymbolFrame, taps: usize, m: usize) -> Result<Self> {
        let data = windowize(frame, taps)?;
        let bits = labels_to_bits(&data.target_labels, m);
        Ok(Self { data, bits })
    }
}

pub fn train(cfg: &ExperimentConfig, frames: &[SymbolFrame]) -> Result<RunResult> {
    let started = Instant::now();
    cfg.validate()?;
    let c = cfg.constellation()?;
    let m = c.bits_per_symbol();
    let (train_frame, eval_frames) = split_protocol(frames)?;
    let train_set = Prepared::new(train_frame, cfg.taps, m)?;
    let selection_set = Prepared::new(&eval_frames[0], cfg.taps, m)?;

    let mut net = build_variant(cfg)?;
    let mut opt = OptimizerState::new(&net, cfg.training.adam())?;
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));

    let n = train_set.data.len();
    let taps = cfg.taps;
    let batch_size = cfg.training.batch_size.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch_inputs = vec![0.0; batch_size * taps];
    let mut batch_targets = vec![0.0; batch_size];
    let mut batch_bits = vec![0u8; batch_size * m];
    let mut cache = net.new_cache(batch_size);
    let mut grads = Gradients::zeros_like(&net);

    // MSE-X starts with its entropy weight off; from then on σ² tracks the
    // equalized training output.
    let mut sigma2 = 0.0;

    let mut loss_trace = Vec::with_capacity(cfg.training.epochs);
    let mut selection_trace = Vec::with_capacity(cfg.training.epochs);
    let mut sigma2_trace = Vec::new();
    let mut gradient_reads: BTreeMap<usize, usize> = BTreeMap::new();
    let mut best: Option<(f64, usize, Mlp)> = None;

    for epoch in 0..cfg.training.epochs {
        order.shuffle(&mut shuffle_rng);
        if cfg.variant == Variant::EqMsex {
            sigma2_trace.push(sigma2);
        }
        let mut loss_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let b = chunk.len();
            for (row, &k) in chunk.iter().enumerate() {
                batch_inputs[row * taps..(row + 1) * taps].copy_from_slice(train_set.data.input(k));
                batch_targets[row] = train_set.data.target_symbols[k];
                batch_bits[row * m..(row + 1) * m].copy_from_slice(&train_set.bits[k * m..(k + 1) * m]);
            }
            *gradient_reads.entry(train_set.data.frame_id).or_default() += b;

            net.forward_batch(&batch_inputs[..b * taps], b, &mut cache)?;
            let outputs = cache.outputs();
            let report = batch_loss(cfg.variant, &outputs, &batch_targets[..b], &batch_bits[..b * m], &c, sigma2, m)
                .map_err(|e| e.in_epoch(epoch))?;
            if !report.value.is_finite() {
                return Err(Error::Numerical {
                    message: format!("training loss became {}", report.value),
                    epoch: Some(epoch),
                    layer: Some(cache.first_non_finite_layer().unwrap_or(net.num_layers() - 1)),
                });
            }
            loss_sum += report.value * b as f64;
            net.backward_into(&cache, &report.output_gradients, cfg.variant.is_joint(), &mut grads)?;
            nn::step(&mut net, &grads, &mut opt).map_err(|e| e.in_epoch(epoch))?;
        }
        loss_trace.push(loss_sum / n as f64);

        if cfg.variant == Variant::EqMsex {
            let y = net.predict(train_set.data.inputs_flat(), n)?;
            sigma2 = estimate_sigma2(&y, &train_set.data.target_symbols)?;
        }

        let objective = selection_objective(cfg.variant, &net, &selection_set, &c).map_err(|e| e.in_epoch(epoch))?;
        if !objective.is_finite() {
            return Err(Error::Numerical {
                message: format!("selection objective became {objective}"),
                epoch: Some(epoch),
                layer: None,
            });
        }
        selection_trace.push(objective);
        if best.as_ref().is_none_or(|(v, _, _)| objective < *v) {
            best = Some((objective, epoch, net.clone()));
        }
    }

    let (_, best_epoch, model) = best.expect("at least one epoch");
    let reports = evaluate(&model, cfg.variant, eval_frames, &c, cfg.taps)?;
    Ok(RunResult {
        config: cfg.clone(),
        model,
        loss_trace,
        selection_trace,
        sigma2_trace,
        best_epoch,
        reports,
        gradient_reads,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

fn batch_loss(
    variant: Variant,
    outputs: &[f64],
    targets: &[f64],
    bits: &[u8],
    c: &Constellation,
    sigma2: f64,
    m: usize,
) -> Result<LossReport> {
    match variant {
        Variant::EqMse | Variant::Linear => mse_loss(outputs, targets),
        Variant::EqMsex => msex_loss(outputs, targets, c, sigma2),
        Variant::Joint1 | Variant::Joint2 => bce_loss(outputs, bits, m),
    }
}

/// Lower is better. MSE for MSE-trained variants, demapper cross-entropy with
/// a data-aided σ² for MSE-X, BCE for joint networks.
fn selection_objective(variant: Variant, net: &Mlp, set: &Prepared, c: &Constellation) -> Result<f64> {
    let outputs = net.predict(set.data.inputs_flat(), set.data.len())?;
    let targets = &set.data.target_symbols;
    Ok(match variant {
        Variant::EqMse | Variant::Linear => mse_loss(&outputs, targets)?.value,
        Variant::EqMsex => {
            let sigma2 = estimate_sigma2(&outputs, targets)?;
            proxy_ce_loss(&outputs, targets, &DemapperParams::new(c, sigma2)?)?.value
        }
        Variant::Joint1 | Variant::Joint2 => bce_loss(&outputs, &set.bits, c.bits_per_symbol())?.value,
    })
}

fn check_model(model: &Mlp, variant: Variant, c: &Constellation, taps: usize) -> Result<()> {
    let expected_out = if variant.is_joint() { c.bits_per_symbol() } else { 1 };
    if model.input_len() != taps || model.output_len() != expected_out || model.output_activation() != variant.output_activation() {
        return Err(Error::invalid(format!(
            "model {:?} ({}) does not fit variant {variant} with {taps} taps and {} bits per symbol",
            model.layer_sizes(),
            model.output_activation().tag(),
            c.bits_per_symbol()
        )));
    }
    Ok(())
}

/// Equalizer output aligned with the frame's targets.
#[derive(Debug, Clone)]
pub struct Equalized {
    pub frame_id: usize,
    pub output: Vec<f64>,
    /// Unequalized center-tap samples.
    pub raw: Vec<f64>,
    pub targets: Vec<f64>,
    pub labels: Vec<u32>,
}

pub fn equalize(model: &Mlp, frame: &SymbolFrame, taps: usize) -> Result<Equalized> {
    if model.output_len() != 1 || model.output_activation() != OutputActivation::Linear {
        return Err(Error::invalid(
            "model has no equalized output (joint networks emit bit probabilities only)",
        ));
    }
    if model.input_len() != taps {
        return Err(Error::invalid(format!(
            "model expects {} taps, data windows have {taps}",
            model.input_len()
        )));
    }
    let data = windowize(frame, taps)?;
    let output = model.predict(data.inputs_flat(), data.len())?;
    Ok(Equalized {
        frame_id: frame.frame_id,
        output,
        raw: data.center_samples(),
        targets: data.target_symbols,
        labels: data.target_labels,
    })
}

pub fn evaluate(
    model: &Mlp,
    variant: Variant,
    frames: &[SymbolFrame],
    c: &Constellation,
    taps: usize,
) -> Result<Vec<EvalReport>> {
    check_model(model, variant, c, taps)?;
    frames
        .iter()
        .map(|frame| {
            if variant.is_joint() {
                let data = windowize(frame, taps)?;
                let p = model.predict(data.inputs_flat(), data.len())?;
                report_from_bit_probabilities(frame.frame_id, &p, &data.target_labels, c)
            } else {
                let eq = equalize(model, frame, taps)?;
                report_from_equalized(frame.frame_id, &eq.output, &eq.targets, &eq.labels, c)
            }
        })
        .collect()
}

/// One point of a sweep.
#[derive(Debug)]
pub struct SweepCell {
    pub point_index: usize,
    pub nl_a3: f64,
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<RunResult, String>,
}

/// Channel seed of sweep point `point_index`. All variants at one point see
/// the same frames.
pub fn sweep_channel(base: &ChannelConfig, nl_a3: f64, point_index: usize) -> ChannelConfig {
    ChannelConfig {
        nl_a3,
        seed: derive_seed(base.seed, point_index as u64),
        ..base.clone()
    }
}

/// Train and evaluate every (nonlinearity, variant) pair. Cells run on up to
/// `threads` workers; results come back in (point, variant) order.
pub fn sweep(base: &ExperimentConfig, nl_a3_values: &[f64], variants: &[Variant], threads: usize) -> Result<Vec<SweepCell>> {
    if nl_a3_values.is_empty() || variants.is_empty() {
        return Err(Error::invalid("sweep needs at least one nonlinearity value and one variant"));
    }
    base.validate()?;
    let c = base.constellation()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start sweep workers: {e}")))?;

    let jobs: Vec<(usize, usize)> = (0..nl_a3_values.len())
        .flat_map(|p| (0..variants.len()).map(move |v| (p, v)))
        .collect();

    let run = || -> Vec<SweepCell> {
        let frames: Vec<std::result::Result<Vec<SymbolFrame>, String>> = nl_a3_values
            .par_iter()
            .enumerate()
            .map(|(p, &a3)| {
                generate_frames(&c, &sweep_channel(&base.channel, a3, p), base.n_frames, base.frame_len)
                    .map_err(|e| e.to_string())
            })
            .collect();
        jobs.par_iter()
            .map(|&(p, v)| {
                let variant = variants[v];
                let cell_seed = derive_seed(base.seed, (p * variants.len() + v) as u64);
                let cfg = ExperimentConfig {
                    channel: sweep_channel(&base.channel, nl_a3_values[p], p),
                    variant,
                    seed: cell_seed,
                    ..base.clone()
                };
                let outcome = match &frames[p] {
                    Ok(frames) => train(&cfg, frames).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                SweepCell {
                    point_index: p,
                    nl_a3: nl_a3_values[p],
                    variant,
                    seed: cell_seed,
                    outcome,
                }
            })
            .collect()
    };
    Ok(pool.install(run))
}

pub const SWEEP_CSV_COLUMNS: [&str; 10] = [
    "variant",
    "nl_a3",
    "status",
    "ber",
    "air_symbolwise",
    "gmi_bitwise",
    "sigma2",
    "mean_conditional_variance",
    "best_epoch",
    "seed",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:?}"))
}

/// One CSV row per cell, columns [`SWEEP_CSV_COLUMNS`].
pub fn sweep_csv(cells: &[SweepCell], header: &str) -> String {
    let mut s = String::new();
    s.push_str(header);
    s.push('\n');
    s.push_str(&SWEEP_CSV_COLUMNS.join(","));
    s.push('\n');
    for cell in cells {
        let row = match &cell.outcome {
            Ok(run) => {
                let sm = run.summary();
                format!(
                    "{},{:?},ok,{:?},{},{:?},{},{},{},{}",
                    cell.variant,
                    cell.nl_a3,
                    sm.ber,
                    opt(sm.air_symbolwise),
                    sm.gmi_bitwise,
                    opt(sm.sigma2),
                    opt(sm.mean_conditional_variance),
                    run.best_epoch,
                    cell.seed
                )
            }
            Err(e) => format!(
                "{},{:?},\"failed: {}\",n/a,n/a,n/a,n/a,n/a,n/a,{}",
                cell.variant,
                cell.nl_a3,
                e.replace('"', "'"),
                cell.seed
            ),
        };
        s.push_str(&row);
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write a run's artifacts into `dir`: `config.toml`, `model.ckpt`,
/// `loss_trace.csv`, `eval.txt`, `eval.csv` and, for equalizer variants,
/// `scatter.csv` and `scatter_raw.csv` for the first evaluation frame.
pub fn write_run_directory(dir: &Path, run: &RunResult, eval_frames: &[SymbolFrame], header: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = toml::to_string(&run.config).map_err(|e| Error::InvalidState(format!("cannot serialize config: {e}")))?;
    write_file(&dir.join("config.toml"), &format!("{header}\n{config}"))?;
    run.model.save(&dir.join("model.ckpt"), header)?;

    let mut trace = format!("{header}\nepoch,train_loss,selection_objective,sigma2\n");
    for (e, loss) in run.loss_trace.iter().enumerate() {
        let _ = fmt::Write::write_fmt(
            &mut trace,
            format_args!(
                "{e},{loss:?},{:?},{}\n",
                run.selection_trace[e],
                opt(run.sigma2_trace.get(e).copied())
            ),
        );
    }
    write_file(&dir.join("loss_trace.csv"), &trace)?;

    let mut kv = format!("{header}\nvariant = {}\nbest_epoch = {}\n", run.config.variant, run.best_epoch);
    let mut csv = format!("{header}\n{}\n", EVAL_CSV_COLUMNS.join(","));
    for r in &run.reports {
        kv.push('\n');
        kv.push_str(&r.to_key_value());
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_file(&dir.join("eval.txt"), &kv)?;
    write_file(&dir.join("eval.csv"), &csv)?;

    if !run.config.variant.is_joint() {
        if let Some(frame) = eval_frames.first() {
            let eq = equalize(&run.model, frame, run.config.taps)?;
            write_scatter(&dir.join("scatter.csv"), &eq.targets, &eq.output, header)?;
            write_scatter(&dir.join("scatter_raw.csv"), &eq.targets, &eq.raw, header)?;
        }
    }
    Ok(())
}

/// `(tx_point, y)` pairs for plotting.
pub fn write_scatter(path: &Path, tx: &[f64], y: &[f64], header: &str) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{header}").map_err(io)?;
    writeln!(out, "tx_point,y").map_err(io)?;
    for (x, v) in tx.iter().zip(y) {
        writeln!(out, "{x:?},{v:?}").map_err(io)?;
    }
    out.flush().map_err(io)
}
