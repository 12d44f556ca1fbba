use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use stackgame::harness::{self, ExperimentConfig, RunSummary};
use stackgame::Error;

#[derive(Parser)]
#[command(name = "stackgame", version, about = "Adversarial training, attacks and equilibrium solvers for small ReLU networks")]
struct Cli {
    /// Root random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory, or a `.json` path that receives the main artifact.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON config file; its keys override command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, adversarially when --eps > 0.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        loss: Option<String>,
        /// Weight of the clean loss in the objective.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Best-response perturbations of a model.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Accuracy, adversarial accuracy and risk over a list of radii.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// One radius or a comma-separated list.
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long)]
        loss: Option<String>,
        #[command(flatten)]
        attack: AttackArgs,
    },
    /// Solve G1 (adversarial training), G2 (universal adversary) or G3 (mixed).
    Game {
        game: GameArg,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        loss: Option<String>,
        /// Directory with classifiers/*.json and adversaries/*.json (G3).
        #[arg(long)]
        pool_dir: Option<PathBuf>,
        /// Seeds for generated G3 pools.
        #[arg(long, value_delimiter = ',')]
        pool_seeds: Vec<u64>,
        /// Fictitious-play duality-gap tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Solve a zero-sum matrix game (rows minimize).
    Matrix {
        #[arg(long)]
        file: PathBuf,
        #[arg(long, value_enum)]
        solve: Vec<SolveArg>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Compare lambda = 0 against lambda > 0 over several seeds.
    Tradeoff {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Clean fine-tuning with a per-parameter relative budget.
    Retrain {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Percent; `inf` removes the constraint.
        #[arg(long)]
        budget_pct: Option<f64>,
        /// Radius for the before/after adversarial accuracy.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        grid_step: Option<f64>,
    },
    /// Stability of the adversarial accuracy under parameter noise.
    Nuprobe {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        nu: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        grid_step: Option<f64>,
    },
    /// Tables and plot data from saved records.
    Report { records: Vec<PathBuf> },
}

#[derive(Args)]
struct DataArgs {
    /// CSV file, rows `x_1,...,x_n,label` with 1-based labels.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic generator: two_gaussians, rings or xor_grid.
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 200)]
    n_samples: usize,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 0.3)]
    separation: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
}

#[derive(Args)]
struct ModelArgs {
    /// Layer widths, e.g. 2,16,16,2.
    #[arg(long, value_delimiter = ',')]
    arch: Vec<usize>,
    /// Parameter bound E.
    #[arg(long)]
    clip: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum, default_value_t = MethodArg::Pgd)]
    method: MethodArg,
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pgd,
    Grid,
}

#[derive(Clone, Copy, ValueEnum)]
enum GameArg {
    G1,
    G2,
    G3,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolveArg {
    Minmax,
    Maxmin,
    Mixed,
}

struct Builder(Map<String, Value>);

impl Builder {
    fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.0.insert(key.into(), v.into());
    }

    fn opt<T: Into<Value>>(&mut self, key: &str, v: Option<T>) {
        if let Some(v) = v {
            self.set(key, v);
        }
    }

    fn nested(&mut self, outer: &str, key: &str, v: Value) {
        let slot = self.0.entry(outer.to_string()).or_insert_with(|| json!({}));
        slot.as_object_mut().unwrap().insert(key.into(), v);
    }

    fn data(&mut self, d: DataArgs) {
        if let Some(path) = d.data {
            self.set("data", json!({"source": "file", "path": path}));
        } else if let Some(generator) = d.synthetic {
            self.set(
                "data",
                json!({
                    "source": "synthetic",
                    "generator": generator,
                    "n_samples": d.n_samples,
                    "class_separation": d.separation,
                    "noise": d.noise,
                    "dims": d.dims,
                    "seed": d.data_seed,
                }),
            );
        }
    }

    fn model(&mut self, m: ModelArgs) {
        if !m.arch.is_empty() {
            self.set("layer_dims", json!(m.arch));
        }
        self.opt("clip_bound", m.clip);
    }

    fn train(&mut self, t: TrainArgs) {
        if let Some(v) = t.epochs {
            self.nested("train", "epochs", json!(v));
        }
        if let Some(v) = t.lr {
            self.nested("train", "learning_rate", json!(v));
        }
        if let Some(v) = t.batch_size {
            self.nested("train", "batch_size", json!(v));
        }
    }

    fn attack(&mut self, a: AttackArgs) {
        let mut m = json!({"method": match a.method { MethodArg::Pgd => "pgd", MethodArg::Grid => "grid" }});
        match a.method {
            MethodArg::Pgd => {
                if let Some(s) = a.steps {
                    m["steps"] = json!(s);
                }
                if let Some(r) = a.restarts {
                    m["restarts"] = json!(r);
                }
            }
            MethodArg::Grid => {
                m["grid_step"] = json!(a.grid_step.unwrap_or(0.0));
            }
        }
        self.set("attack", m);
        self.opt("grid_step", a.grid_step);
    }
}

fn budget_json(v: f64) -> Value {
    if v.is_infinite() {
        json!("inf")
    } else {
        json!(v)
    }
}

fn build(cli: Cli) -> Result<(Value, Option<PathBuf>), Error> {
    let mut b = Builder(Map::new());
    let experiment = match cli.command {
        Command::Train { data, model, train, eps, loss, lambda } => {
            b.data(data);
            b.model(model);
            b.train(train);
            b.opt("eps", eps);
            b.opt("loss", loss);
            b.opt("lambda", lambda);
            "train"
        }
        Command::Attack { model, data, eps, loss, attack } => {
            b.set("model", json!(model));
            b.data(data);
            b.opt("eps", eps);
            b.opt("loss", loss);
            b.attack(attack);
            "attack"
        }
        Command::Eval { model, data, eps, loss, attack } => {
            b.set("model", json!(model));
            b.data(data);
            if let Some(&e) = eps.first() {
                b.set("eps", e);
            }
            if eps.len() > 1 {
                b.set("eps_grid", json!(eps));
            }
            b.opt("loss", loss);
            b.attack(attack);
            "eval"
        }
        Command::Game { game, data, model, train, eps, loss, pool_dir, pool_seeds, tol } => {
            b.set(
                "game",
                match game {
                    GameArg::G1 => "g1",
                    GameArg::G2 => "g2",
                    GameArg::G3 => "g3",
                },
            );
            b.data(data);
            b.model(model);
            b.train(train);
            b.opt("eps", eps);
            b.opt("loss", loss);
            if let Some(p) = pool_dir {
                b.set("pool_dir", json!(p));
            }
            if !pool_seeds.is_empty() {
                b.set("pool_seeds", json!(pool_seeds));
            }
            if let Some(t) = tol {
                b.nested("fictitious_play", "tol", json!(t));
            }
            "game"
        }
        Command::Matrix { file, solve, tol } => {
            b.set("matrix_file", json!(file));
            if !solve.is_empty() {
                let names: Vec<&str> = solve
                    .iter()
                    .map(|s| match s {
                        SolveArg::Minmax => "minmax",
                        SolveArg::Maxmin => "maxmin",
                        SolveArg::Mixed => "mixed",
                    })
                    .collect();
                b.set("solve", json!(names));
            }
            if let Some(t) = tol {
                b.nested("fictitious_play", "tol", json!(t));
            }
            "matrix"
        }
        Command::Tradeoff { data, model, train, eps, loss, lambda, seeds } => {
            b.data(data);
            b.model(model);
            b.train(train);
            b.opt("eps", eps);
            b.opt("loss", loss);
            if let Some(l) = lambda {
                b.nested("tradeoff", "lambda", json!(l));
            }
            if !seeds.is_empty() {
                b.nested("tradeoff", "seeds", json!(seeds));
            }
            "tradeoff"
        }
        Command::Retrain { model, data, train, budget_pct, eps, grid_step } => {
            b.set("model", json!(model));
            b.data(data);
            if let Some(lr) = train.lr {
                b.set("retrain_learning_rate", lr);
            }
            b.train(TrainArgs { lr: None, ..train });
            if let Some(p) = budget_pct {
                b.nested("tradeoff", "retrain_budget_pct", budget_json(p));
            }
            b.opt("eps", eps);
            b.opt("grid_step", grid_step);
            "retrain"
        }
        Command::Nuprobe { model, data, nu, trials, eps, grid_step } => {
            b.set("model", json!(model));
            b.data(data);
            if let Some(n) = nu {
                b.nested("tradeoff", "nu", json!(n));
            }
            b.opt("trials", trials);
            b.opt("eps", eps);
            b.opt("grid_step", grid_step);
            "nuprobe"
        }
        Command::Report { records } => {
            b.set("records", json!(records));
            "report"
        }
    };
    b.set("experiment", experiment);
    b.opt("seed", cli.seed);
    let mut value = Value::Object(b.0);
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let overlay: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        harness::merge_json(&mut value, overlay);
    }
    Ok((value, cli.out))
}

fn report_success(summary: &RunSummary, copy_to: Option<&PathBuf>) -> Result<(), Error> {
    println!("run directory: {}", summary.dir.display());
    if let Some(p) = &summary.primary {
        println!("output: {}", p.display());
        if let Some(dest) = copy_to {
            if let Some(parent) = dest.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Error::Usage(format!("{}: {e}", parent.display())))?;
            }
            std::fs::copy(p, dest).map_err(|e| Error::Usage(format!("{}: {e}", dest.display())))?;
            println!("copied to: {}", dest.display());
        }
    }
    let report = summary.dir.join("report.md");
    if summary.manifest.experiment == harness::Experiment::Matrix {
        if let Ok(text) = std::fs::read_to_string(report) {
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let (value, out) = match build(cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let config: ExperimentConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid configuration: {e}");
            return ExitCode::from(2);
        }
    };
    let (root, copy_to) = match out {
        Some(p) if p.extension().is_some_and(|x| x == "json") => (harness::default_out_root(), Some(p)),
        Some(p) => (p, None),
        None => (harness::default_out_root(), None),
    };
    match harness::run(&config, &root) {
        Ok(summary) => match report_success(&summary, copy_to.as_ref()) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.error.exit_code() as u8)
        }
    }
}
