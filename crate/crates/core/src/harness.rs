//! Experiment runner.
//!
//! A run takes an [`ExperimentConfig`], computes everything in memory and
//! then writes the artifacts under
//! `<root>/<experiment>/<config-hash>/` together with `manifest.json`. The
//! manifest lists the SHA-256 of every input and output file; it carries no
//! timestamps, so rerunning a config reproduces it byte for byte. A failed
//! run still writes a manifest with `status = "error"`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{best_responses, AttackBundle, AttackMethod, PgdConfig};
use crate::data::{sha256_hex, Dataset};
use crate::error::{Error, Result};
use crate::games::{
    build_pools, matrix_records, solve_g1, solve_g2, verify_ordering, AdversaryStrategy,
    ClassifierStrategy, DiscreteGame, EquilibriumRecord, G2Config, OrderingReport, TraceEntry,
};
use crate::io::{self, ModelFile, FORMAT_VERSION};
use crate::losses::LossKind;
use crate::matrix::{FictitiousPlayConfig, MatrixGame};
use crate::metrics::{
    adversarial_accuracy, clean_accuracy, clean_loss, evaluate, lipschitz_certificate, mean,
    LipschitzCertificate, RobustnessReport,
};
use crate::net::Network;
use crate::report;
use crate::rng::{derive_seed, streams};
use crate::synth::{generate, SyntheticSpec};
use crate::tradeoff::{constrained_retrain, nu_ball_probe, solve_gt, tradeoff_study, TradeoffConfig};
use crate::train::{Architecture, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "STACKGAME_OUT";
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Train,
    Attack,
    Eval,
    Game,
    Matrix,
    Tradeoff,
    Retrain,
    Nuprobe,
    Report,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Train => "train",
            Experiment::Attack => "attack",
            Experiment::Eval => "eval",
            Experiment::Game => "game",
            Experiment::Matrix => "matrix",
            Experiment::Tradeoff => "tradeoff",
            Experiment::Retrain => "retrain",
            Experiment::Nuprobe => "nuprobe",
            Experiment::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    File { path: PathBuf },
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GameChoice {
    G1,
    G2,
    G3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixSolve {
    Minmax,
    Maxmin,
    Mixed,
}

/// Hidden widths used when no architecture is given.
pub const DEFAULT_HIDDEN: [usize; 2] = [16, 16];
pub const DEFAULT_CLIP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub data: Option<DataSource>,
    /// Full layer widths `[n, ..., m]`; defaults to `[n, 16, 16, m]`.
    pub layer_dims: Option<Vec<usize>>,
    pub clip_bound: f64,
    pub eps: f64,
    /// Radii for `eval`; empty means `[eps]`.
    pub eps_grid: Vec<f64>,
    pub loss: LossKind,
    pub lambda: f64,
    pub train: TrainConfig,
    pub attack: AttackMethod,
    /// Lattice spacing for grid evaluations; defaults to `eps / 10`.
    pub grid_step: Option<f64>,
    pub game: Option<GameChoice>,
    pub g2: G2Config,
    /// Directory with `classifiers/*.json` and `adversaries/*.json`.
    pub pool_dir: Option<PathBuf>,
    pub pool_seeds: Vec<u64>,
    pub fictitious_play: FictitiousPlayConfig,
    pub ordering_tolerance: f64,
    pub matrix_file: Option<PathBuf>,
    pub solve: Vec<MatrixSolve>,
    pub tradeoff: TradeoffConfig,
    /// Learning rate for `retrain`; defaults to the training rate.
    pub retrain_learning_rate: Option<f64>,
    pub model: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub trials: usize,
    pub records: Vec<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Train,
            seed: 0,
            data: None,
            layer_dims: None,
            clip_bound: DEFAULT_CLIP,
            eps: 0.0,
            eps_grid: Vec::new(),
            loss: LossKind::Ce,
            lambda: 0.0,
            train: TrainConfig::default(),
            attack: AttackMethod::Pgd(PgdConfig::default()),
            grid_step: None,
            game: None,
            g2: G2Config::default(),
            pool_dir: None,
            pool_seeds: vec![0, 1, 2],
            fictitious_play: FictitiousPlayConfig::default(),
            ordering_tolerance: 1e-6,
            matrix_file: None,
            solve: vec![MatrixSolve::Minmax, MatrixSolve::Maxmin, MatrixSolve::Mixed],
            tradeoff: TradeoffConfig::default(),
            retrain_learning_rate: None,
            model: None,
            bundle: None,
            trials: 20,
            records: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("lambda", self.lambda), ("clip_bound", self.clip_bound)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(&bad) = self.eps_grid.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::InvalidRadius(bad));
        }
        if let Some(s) = self.grid_step {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig(format!("grid_step must be positive, got {s}")));
            }
        }
        self.train.validate()?;
        self.tradeoff.validate()
    }

    fn grid_method(&self, eps: f64) -> AttackMethod {
        let step = self.grid_step.unwrap_or(if eps > 0.0 { eps / 10.0 } else { 1.0 });
        AttackMethod::Grid { grid_step: step }
    }

    /// The configured attack at radius `eps`, PGD reseeded from the run
    /// seed; a grid step of 0 selects the default spacing.
    fn attack_at(&self, eps: f64) -> AttackMethod {
        match self.attack {
            AttackMethod::Pgd(p) => AttackMethod::Pgd(p.with_seed(derive_seed(self.seed, streams::ATTACK))),
            AttackMethod::Grid { grid_step } if grid_step > 0.0 => self.attack,
            AttackMethod::Grid { .. } => self.grid_method(eps),
        }
    }

    fn train_cfg(&self) -> TrainConfig {
        self.train.with_seed(self.seed)
    }
}

/// Recursively overlays `overlay` on `base`; objects merge key by key,
/// everything else is replaced.
pub fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: Experiment,
    pub status: String,
    pub config_hash: String,
    pub tool_version: String,
    pub format_version: u32,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Hash over the output digests: equal for numerically identical runs.
    pub outputs_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: Manifest,
    /// The artifact a caller most likely wants (model, record, report...).
    pub primary: Option<PathBuf>,
}

/// A failed run; the error manifest was written to `manifest` if possible.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub manifest: Option<PathBuf>,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.error)?;
        if let Some(m) = &self.manifest {
            write!(f, " (see {})", m.display())?;
        }
        Ok(())
    }
}

/// Artifacts gathered in memory before the single write pass.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    primary: Option<String>,
}

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = io::to_json_string(value)?;
        text.push('\n');
        self.files.push((name.to_string(), text.into_bytes()));
        Ok(())
    }

    fn text(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text.into_bytes()));
    }

    fn primary(&mut self, name: &str) {
        self.primary = Some(name.to_string());
    }
}

struct Inputs {
    digests: Vec<FileDigest>,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.digests.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn text(&mut self, path: &Path) -> Result<String> {
        String::from_utf8(self.read(path)?)
            .map_err(|e| Error::Validation(format!("{}: not UTF-8: {e}", path.display())))
    }

    fn model(&mut self, path: &Path) -> Result<Network> {
        let text = self.text(path)?;
        Network::try_from(serde_json::from_str::<ModelFile>(&text)?)
    }

    fn bundle(&mut self, path: &Path) -> Result<AttackBundle> {
        let text = self.text(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Default output root: `$STACKGAME_OUT`, else `out`.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs one experiment and writes its artifacts under `out_root`.
pub fn run(config: &ExperimentConfig, out_root: &Path) -> std::result::Result<RunSummary, RunFailure> {
    let mut inputs = Inputs { digests: Vec::new() };
    let result = config.validate().and_then(|_| dispatch(config, &mut inputs));
    let config_json = serde_json::to_string(config).unwrap_or_default();
    let mut hash_src = config_json.clone();
    for d in &inputs.digests {
        let _ = write!(hash_src, "\n{}", d.sha256);
    }
    let config_hash = sha256_hex(hash_src.as_bytes())[..16].to_string();
    let dir = out_root.join(config.experiment.name()).join(&config_hash);
    let mut manifest = Manifest {
        experiment: config.experiment,
        status: "ok".into(),
        config_hash,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        format_version: FORMAT_VERSION,
        seed: config.seed,
        config: config.clone(),
        inputs: inputs.digests,
        outputs: Vec::new(),
        outputs_digest: String::new(),
        error: None,
    };
    let write_manifest = |m: &Manifest| -> Result<PathBuf> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("manifest.json");
        io::save_json(&path, m)?;
        Ok(path)
    };
    match result {
        Ok(outputs) => {
            let written: Result<()> = (|| {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (name, bytes) in &outputs.files {
                    let path = dir.join(name);
                    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
                    manifest.outputs.push(FileDigest {
                        path: name.clone(),
                        sha256: sha256_hex(bytes),
                    });
                }
                let all: String = manifest.outputs.iter().map(|d| format!("{} {}\n", d.path, d.sha256)).collect();
                manifest.outputs_digest = sha256_hex(all.as_bytes());
                write_manifest(&manifest)?;
                Ok(())
            })();
            match written {
                Ok(()) => Ok(RunSummary {
                    primary: outputs.primary.map(|p| dir.join(p)),
                    dir,
                    manifest,
                }),
                Err(error) => Err(RunFailure { error, manifest: None }),
            }
        }
        Err(error) => {
            manifest.status = "error".into();
            manifest.error = Some(ErrorReport {
                kind: error.kind().into(),
                message: error.to_string(),
            });
            let path = write_manifest(&manifest).ok();
            Err(RunFailure { error, manifest: path })
        }
    }
}

fn dispatch(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    match cfg.experiment {
        Experiment::Train => run_train(cfg, inputs),
        Experiment::Attack => run_attack(cfg, inputs),
        Experiment::Eval => run_eval(cfg, inputs),
        Experiment::Game => run_game(cfg, inputs),
        Experiment::Matrix => run_matrix(cfg, inputs),
        Experiment::Tradeoff => run_tradeoff(cfg, inputs),
        Experiment::Retrain => run_retrain(cfg, inputs),
        Experiment::Nuprobe => run_nuprobe(cfg, inputs),
        Experiment::Report => run_report(cfg, inputs),
    }
}

fn need<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Usage(format!("this experiment needs {what}")))
}

fn load_data(cfg: &ExperimentConfig, inputs: &mut Inputs, out: &mut Outputs) -> Result<Dataset> {
    match need(&cfg.data, "a dataset (file or synthetic)")? {
        DataSource::File { path } => Dataset::parse_csv(&inputs.text(path)?),
        DataSource::Synthetic(spec) => {
            let d = generate(spec)?;
            out.text("data.csv", d.to_csv());
            Ok(d)
        }
    }
}

fn architecture(cfg: &ExperimentConfig, data: &Dataset) -> Architecture {
    let dims = cfg.layer_dims.clone().unwrap_or_else(|| {
        let mut v = vec![data.dim()];
        v.extend(DEFAULT_HIDDEN);
        v.push(data.class_count().max(2));
        v
    });
    Architecture::new(dims, cfg.clip_bound)
}

fn trace_csv(trace: &[TraceEntry]) -> String {
    let mut s = String::from("round,payoff,objective,gap\n");
    for t in trace {
        let gap = t.gap.map(|g| g.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", t.round, t.payoff, t.objective, gap);
    }
    s
}

fn record_outputs(out: &mut Outputs, rec: &EquilibriumRecord) -> Result<()> {
    out.json("record.json", rec)?;
    out.text("trace.csv", trace_csv(&rec.trace));
    if let ClassifierStrategy::Network { net } = &rec.classifier {
        out.json("model.json", &ModelFile::from(net))?;
    }
    if let AdversaryStrategy::Bundle { bundle } = &rec.adversary {
        out.json("bundle.json", bundle)?;
    }
    Ok(())
}

fn run_train(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let data = load_data(cfg, inputs, &mut out)?;
    let arch = architecture(cfg, &data);
    let rec = if cfg.lambda > 0.0 {
        solve_gt(&data, &arch, cfg.eps, cfg.loss, cfg.lambda, &cfg.train_cfg())?
    } else {
        solve_g1(&data, &arch, cfg.eps, cfg.loss, &cfg.train_cfg())?
    };
    record_outputs(&mut out, &rec)?;
    out.text("report.md", report::records_markdown(&[("record.json".into(), rec)]));
    out.primary("model.json");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub eps: f64,
    pub loss: LossKind,
    pub method: AttackMethod,
    pub payoff: f64,
    pub values: Vec<f64>,
}

fn run_attack(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let net = inputs.model(need(&cfg.model, "--model")?)?;
    let data = load_data(cfg, inputs, &mut out)?;
    let method = cfg.attack_at(cfg.eps);
    let responses = best_responses(&net, &data, cfg.eps, cfg.loss, &method)?;
    let bundle = AttackBundle {
        epsilon: cfg.eps,
        dataset_id: data.id().to_string(),
        deltas: responses.iter().map(|(d, _)| d.clone()).collect(),
    };
    let values: Vec<f64> = responses.iter().map(|(_, v)| *v).collect();
    let summary = AttackSummary {
        eps: cfg.eps,
        loss: cfg.loss,
        method,
        payoff: mean(&values),
        values,
    };
    out.json("bundle.json", &bundle)?;
    out.json("attack.json", &summary)?;
    out.primary("bundle.json");
    Ok(out)
}

/// Robustness of one model over a list of radii.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub model_sha256: String,
    pub dataset_id: String,
    pub reports: Vec<RobustnessReport>,
    pub lipschitz: LipschitzCertificate,
}

fn run_eval(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let model_path = need(&cfg.model, "--model")?;
    let net = inputs.model(model_path)?;
    let model_sha256 = inputs.digests.last().map(|d| d.sha256.clone()).unwrap_or_default();
    let data = load_data(cfg, inputs, &mut out)?;
    let grid: Vec<f64> = if cfg.eps_grid.is_empty() { vec![cfg.eps] } else { cfg.eps_grid.clone() };
    let mut reports = Vec::with_capacity(grid.len());
    for &eps in &grid {
        let method = cfg.attack_at(eps);
        reports.push(evaluate(&net, &data, eps, cfg.loss, &method)?);
    }
    let lipschitz = lipschitz_certificate(&net, grid.iter().cloned().fold(0.0, f64::max), Some(&data))?;
    let summary = EvalSummary {
        model_sha256,
        dataset_id: data.id().to_string(),
        reports,
        lipschitz,
    };
    out.json("evaluation.json", &summary)?;
    out.text("curves.csv", report::eval_csv(&[(model_path.display().to_string(), summary.clone())]));
    out.text(
        "report.md",
        report::render(vec![(model_path.display().to_string(), report::ReportItem::Evaluation(summary))])?
            .markdown,
    );
    out.primary("evaluation.json");
    Ok(out)
}

fn load_pool_dir(dir: &Path, inputs: &mut Inputs) -> Result<(Vec<Network>, Vec<AttackBundle>)> {
    let list = |sub: &str| -> Result<Vec<PathBuf>> {
        let d = dir.join(sub);
        let mut v: Vec<PathBuf> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        Ok(v)
    };
    let nets = list("classifiers")?
        .iter()
        .map(|p| inputs.model(p))
        .collect::<Result<Vec<_>>>()?;
    let bundles = list("adversaries")?
        .iter()
        .map(|p| inputs.bundle(p))
        .collect::<Result<Vec<_>>>()?;
    Ok((nets, bundles))
}

fn run_game(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let data = load_data(cfg, inputs, &mut out)?;
    let arch = architecture(cfg, &data);
    let rec = match *need(&cfg.game, "a game (g1, g2 or g3)")? {
        GameChoice::G1 => solve_g1(&data, &arch, cfg.eps, cfg.loss, &cfg.train_cfg())?,
        GameChoice::G2 => {
            let g2 = G2Config {
                inner: cfg.train,
                seed: cfg.seed,
                ..cfg.g2
            };
            solve_g2(&data, &arch, cfg.eps, cfg.loss, &g2)?
        }
        GameChoice::G3 => {
            let (nets, bundles) = match &cfg.pool_dir {
                Some(dir) => load_pool_dir(dir, inputs)?,
                None => build_pools(&data, &arch, cfg.eps, cfg.loss, &cfg.pool_seeds, &cfg.train_cfg())?,
            };
            let game = DiscreteGame::from_pools(nets, bundles, &data, cfg.loss)?;
            let g3 = game.solve_g3(&cfg.fictitious_play)?;
            let g1 = game.solve_g1();
            let g2 = game.solve_g2();
            let ordering = verify_ordering(&g1, &g3, &g2, cfg.ordering_tolerance)?;
            out.text("payoff_matrix.csv", game.matrix.to_csv());
            out.json("record_g1_discrete.json", &g1)?;
            out.json("record_g2_discrete.json", &g2)?;
            out.json("ordering.json", &ordering)?;
            g3
        }
    };
    record_outputs(&mut out, &rec)?;
    out.text("report.md", report::records_markdown(&[("record.json".into(), rec)]));
    out.primary("record.json");
    Ok(out)
}

/// Pure and mixed solutions of a matrix game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: usize,
    pub cols: usize,
    pub minmax: Option<f64>,
    pub maxmin: Option<f64>,
    pub mixed: Option<f64>,
    pub row_mix: Option<Vec<f64>>,
    pub col_mix: Option<Vec<f64>>,
    pub gap: Option<f64>,
    pub ordering: Option<OrderingReport>,
}

fn run_matrix(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let g = MatrixGame::parse_csv(&inputs.text(need(&cfg.matrix_file, "--file")?)?)?;
    let [g1, g3, g2] = matrix_records(&g, &cfg.fictitious_play)?;
    let has = |s| cfg.solve.contains(&s);
    let (row_mix, col_mix) = match (&g3.classifier, &g3.adversary) {
        (ClassifierStrategy::MixedRows { weights: p }, AdversaryStrategy::MixedColumns { weights: q }) => {
            (Some(p.clone()), Some(q.clone()))
        }
        _ => (None, None),
    };
    let all = has(MatrixSolve::Minmax) && has(MatrixSolve::Maxmin) && has(MatrixSolve::Mixed);
    let rep = MatrixReport {
        rows: g.rows(),
        cols: g.cols(),
        minmax: has(MatrixSolve::Minmax).then_some(g1.value),
        maxmin: has(MatrixSolve::Maxmin).then_some(g2.value),
        mixed: has(MatrixSolve::Mixed).then_some(g3.value),
        row_mix: row_mix.filter(|_| has(MatrixSolve::Mixed)),
        col_mix: col_mix.filter(|_| has(MatrixSolve::Mixed)),
        gap: has(MatrixSolve::Mixed).then(|| g3.trace.last().and_then(|t| t.gap)).flatten(),
        ordering: if all {
            Some(verify_ordering(&g1, &g3, &g2, cfg.ordering_tolerance)?)
        } else {
            None
        },
    };
    let mut items = Vec::new();
    for (on, name, rec) in [
        (MatrixSolve::Minmax, "record_minmax.json", g1),
        (MatrixSolve::Mixed, "record_mixed.json", g3),
        (MatrixSolve::Maxmin, "record_maxmin.json", g2),
    ] {
        if has(on) {
            out.json(name, &rec)?;
            items.push((name.to_string(), report::ReportItem::Record(rec)));
        }
    }
    out.json("matrix.json", &rep)?;
    out.text("report.md", report::render(items)?.markdown);
    out.primary("matrix.json");
    Ok(out)
}

fn run_tradeoff(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let data = load_data(cfg, inputs, &mut out)?;
    let arch = architecture(cfg, &data);
    let study = tradeoff_study(
        &data,
        &arch,
        cfg.eps,
        cfg.loss,
        0.0,
        cfg.tradeoff.lambda,
        &cfg.tradeoff.seeds,
        &cfg.train,
    )?;
    out.json("tradeoff.json", &study)?;
    out.text("report.md", report::render(vec![("tradeoff".into(), report::ReportItem::Tradeoff(study))])?.markdown);
    out.primary("tradeoff.json");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainSummary {
    #[serde(with = "crate::tradeoff::budget")]
    pub budget_pct: f64,
    pub eps: f64,
    pub clean_accuracy_before: f64,
    pub clean_accuracy_after: f64,
    pub clean_loss_before: f64,
    pub clean_loss_after: f64,
    /// Grid-exact when the input has at most 3 dimensions, PGD otherwise.
    pub adversarial_accuracy_before: f64,
    pub adversarial_accuracy_after: f64,
    pub grid_exact: bool,
    pub max_relative_change: f64,
}

fn run_retrain(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let net = inputs.model(need(&cfg.model, "--model")?)?;
    let data = load_data(cfg, inputs, &mut out)?;
    let mut tcfg = cfg.train_cfg();
    if let Some(lr) = cfg.retrain_learning_rate {
        tcfg.learning_rate = lr;
    }
    let budget = cfg.tradeoff.retrain_budget_pct;
    let after = constrained_retrain(&net, &data, budget, &tcfg)?;
    let grid_exact = data.dim() <= crate::attacks::GRID_MAX_DIM;
    let method = if grid_exact {
        cfg.grid_method(cfg.eps)
    } else {
        AttackMethod::Pgd(PgdConfig::default().with_seed(derive_seed(cfg.seed, streams::ATTACK)))
    };
    let max_relative_change = net
        .params_iter()
        .zip(after.params_iter())
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, b)| (b - a).abs() / a.abs())
        .fold(0.0, f64::max);
    let summary = RetrainSummary {
        budget_pct: budget,
        eps: cfg.eps,
        clean_accuracy_before: clean_accuracy(&net, &data)?,
        clean_accuracy_after: clean_accuracy(&after, &data)?,
        clean_loss_before: clean_loss(&net, &data, LossKind::Ce)?,
        clean_loss_after: clean_loss(&after, &data, LossKind::Ce)?,
        adversarial_accuracy_before: adversarial_accuracy(&net, &data, cfg.eps, &method)?,
        adversarial_accuracy_after: adversarial_accuracy(&after, &data, cfg.eps, &method)?,
        grid_exact,
        max_relative_change,
    };
    out.json("model.json", &ModelFile::from(&after))?;
    out.json("retrain.json", &summary)?;
    out.primary("model.json");
    Ok(out)
}

fn run_nuprobe(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    let mut out = Outputs::default();
    let net = inputs.model(need(&cfg.model, "--model")?)?;
    let data = load_data(cfg, inputs, &mut out)?;
    let step = match cfg.grid_method(cfg.eps) {
        AttackMethod::Grid { grid_step } => grid_step,
        AttackMethod::Pgd(_) => unreachable!(),
    };
    let rep = nu_ball_probe(
        &net,
        &data,
        cfg.eps,
        cfg.tradeoff.nu,
        cfg.trials,
        step,
        derive_seed(cfg.seed, streams::PROBE),
    )?;
    out.json("nuprobe.json", &rep)?;
    out.primary("nuprobe.json");
    Ok(out)
}

fn run_report(cfg: &ExperimentConfig, inputs: &mut Inputs) -> Result<Outputs> {
    if cfg.records.is_empty() {
        return Err(Error::Usage("report needs at least one record file".into()));
    }
    let mut items = Vec::with_capacity(cfg.records.len());
    for path in &cfg.records {
        let text = inputs.text(path)?;
        let item: report::ReportItem = serde_json::from_str(&text).map_err(|e| {
            Error::Validation(format!("{}: not a record, evaluation, ordering or trade-off file ({e})", path.display()))
        })?;
        items.push((path.display().to_string(), item));
    }
    let mut out = Outputs::default();
    let r = report::render(items)?;
    out.text("report.md", r.markdown);
    for (name, body) in r.tables {
        out.text(&name, body);
    }
    out.primary("report.md");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_overrides_nested_keys() {
        let mut base = serde_json::json!({"eps": 0.1, "train": {"epochs": 5, "batch_size": 8}});
        merge_json(&mut base, serde_json::json!({"train": {"epochs": 7}, "loss": "cw"}));
        assert_eq!(base, serde_json::json!({"eps": 0.1, "train": {"epochs": 7, "batch_size": 8}, "loss": "cw"}));
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"experiment": "matrix", "train": {"epochs": 3}}"#).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
