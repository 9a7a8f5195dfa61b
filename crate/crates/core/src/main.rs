//! Operator CLI: data generation, model training and evaluation,
//! scenario simulation, chain inspection, and serving the gateway.
//!
//! Exit codes: 0 success, 1 integrity/verification failure, 2 usage
//! error, 3 I/O or format error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glucoguard::datagen::{self, GeneratorConfig};
use glucoguard::detector::{
    evaluate, fit_forest, fit_knn, fit_tree, kfold_split, load_model, save_model,
    train_test_split, Classifier, Dataset, ForestConfig, Metrics, TreeParams,
};
use glucoguard::devices::{run_scenario, ScenarioScript};
use glucoguard::fog::{FeatureStats, ReferenceStats};
use glucoguard::gateway::{http, ServiceConfig, System};
use glucoguard::ledger::{store, validate_chain};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const EXIT_INTEGRITY: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(
    name = "glucoguard",
    about = "Closed-loop hypoglycemia detection and rescue dosing",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a calibrated synthetic dataset and print its summary.
    GenData(GenDataArgs),
    /// Train the random forest on a CSV dataset.
    Train(TrainArgs),
    /// Evaluate a trained model and export its ROC curve.
    Evaluate(EvaluateArgs),
    /// Train and rank RF, decision tree, KNN-9, and KNN-11.
    Compare(CompareArgs),
    /// Run a scenario against a fresh in-process system.
    Simulate(SimulateArgs),
    /// Inspect or verify a block store.
    #[command(subcommand)]
    Chain(ChainCommand),
    /// Run the HTTP gateway.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 16_969)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Label flip probability, in [0, 0.5).
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Cross-validation folds over the training portion (0 skips CV).
    #[arg(long, default_value_t = 5)]
    cv: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// ROC curve CSV output (threshold,fpr,tpr).
    #[arg(long)]
    roc_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    log_out: PathBuf,
}

#[derive(Subcommand)]
enum ChainCommand {
    /// Exit 0 when every block checks out, 1 otherwise.
    Verify {
        #[arg(long)]
        store: PathBuf,
    },
    /// Print one block as JSON.
    Show {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        index: u64,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Compare(args) => compare(args),
        Command::Simulate(args) => simulate(args),
        Command::Chain(args) => chain(args),
        Command::Serve(args) => serve(args),
    }
}

fn print_summary_table(stats: &ReferenceStats) {
    let columns: [(&str, &FeatureStats); 6] = [
        ("glucose", &stats.glucose),
        ("systolic_bp", &stats.systolic_bp),
        ("heart_rate", &stats.heart_rate),
        ("sweating", &stats.sweating),
        ("shivering", &stats.shivering),
        ("hypoglycemia", &stats.label),
    ];
    print!("{:>8}", "");
    for (name, _) in &columns {
        print!("  {name:>12}");
    }
    println!();
    type Getter = fn(&FeatureStats) -> f64;
    let rows: [(&str, Getter); 8] = [
        ("count", |s| s.count as f64),
        ("mean", |s| s.mean),
        ("std", |s| s.std),
        ("min", |s| s.min),
        ("25%", |s| s.q25),
        ("50%", |s| s.q50),
        ("75%", |s| s.q75),
        ("max", |s| s.max),
    ];
    for (label, get) in rows {
        print!("{label:>8}");
        for (_, feature) in &columns {
            print!("  {:>12.2}", get(feature));
        }
        println!();
    }
}

fn gen_data(args: GenDataArgs) -> ExitCode {
    if !(0.0..0.5).contains(&args.noise) {
        eprintln!("noise must be < 0.5");
        return ExitCode::from(EXIT_USAGE);
    }
    let config = GeneratorConfig {
        n_samples: args.n,
        seed: args.seed,
        label_noise: args.noise,
        ..Default::default()
    };
    let samples = match datagen::generate_dataset(&config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = datagen::write_csv(&args.out, &samples) {
        eprintln!("cannot write {}: {e}", args.out.display());
        return ExitCode::from(EXIT_IO);
    }
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    match datagen::summarize(&samples) {
        Ok(stats) => print_summary_table(&stats),
        Err(_) => println!("(empty dataset: no summary)"),
    }
    ExitCode::SUCCESS
}

fn load_dataset(path: &Path) -> Result<Dataset, ExitCode> {
    let samples = datagen::read_csv(path).map_err(|e| {
        eprintln!("cannot read {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })?;
    Dataset::from_samples(&samples).map_err(|e| {
        eprintln!("bad dataset {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })
}

fn train(args: TrainArgs) -> ExitCode {
    let data = match load_dataset(&args.data) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let config = ForestConfig {
        n_trees: args.trees,
        max_depth: args.depth,
        seed: args.seed,
        ..Default::default()
    };
    let (train_idx, test_idx) = train_test_split(data.n(), 0.2, args.seed);
    let train_set = data.subset(&train_idx);
    let test_set = data.subset(&test_idx);

    // K-fold cross-validation over the training portion.
    if args.cv >= 2 {
        match kfold_split(train_set.n(), args.cv, args.seed) {
            Ok(folds) => {
                let mut accuracies = Vec::with_capacity(folds.len());
                for (i, fold) in folds.iter().enumerate() {
                    let held: Vec<usize> = fold.clone();
                    let rest: Vec<usize> = folds
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .flat_map(|(_, f)| f.iter().copied())
                        .collect();
                    let model = match fit_forest(&train_set.subset(&rest), config) {
                        Ok(m) => m,
                        Err(e) => {
                            eprintln!("{e}");
                            return ExitCode::from(EXIT_IO);
                        }
                    };
                    match evaluate(&model, &train_set.subset(&held)) {
                        Ok(m) => accuracies.push(m.accuracy),
                        Err(e) => {
                            eprintln!("{e}");
                            return ExitCode::from(EXIT_IO);
                        }
                    }
                }
                let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
                println!("cv accuracy ({} folds): {mean:.4}", accuracies.len());
            }
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }

    let model = match fit_forest(&train_set, config) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    let train_metrics = evaluate(&model, &train_set);
    let test_metrics = evaluate(&model, &test_set);
    match (train_metrics, test_metrics) {
        (Ok(tr), Ok(te)) => {
            println!("train accuracy: {:.4}", tr.accuracy);
            println!("test accuracy:  {:.4}", te.accuracy);
        }
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    }
    if let Err(e) = save_model(&args.model_out, &model) {
        eprintln!("cannot write {}: {e}", args.model_out.display());
        return ExitCode::from(EXIT_IO);
    }
    println!("model written to {}", args.model_out.display());
    ExitCode::SUCCESS
}

fn write_roc_csv(path: &Path, metrics: &Metrics) -> std::io::Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &metrics.roc {
        out.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
    }
    std::fs::write(path, out)
}

fn run_evaluate(args: EvaluateArgs) -> ExitCode {
    let model = match load_model(&args.model) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("cannot load {}: {e}", args.model.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let data = match load_dataset(&args.data) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let metrics = match evaluate(&model, &data) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    println!("accuracy: {:.4}", metrics.accuracy);
    println!(
        "confusion: tp={} fp={} tn={} fn={}",
        metrics.tp, metrics.fp, metrics.tn, metrics.fn_
    );
    match metrics.auc {
        Some(auc) => println!("auc: {auc:.4}"),
        None => println!("auc: undefined (single-class test set)"),
    }
    if let Some(path) = &args.roc_out {
        if let Err(e) = write_roc_csv(path, &metrics) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_IO);
        }
        println!("roc written to {}", path.display());
    }
    ExitCode::SUCCESS
}

fn compare(args: CompareArgs) -> ExitCode {
    let data = match load_dataset(&args.data) {
        Ok(d) => d,
        Err(code) => return code,
    };
    let (train_idx, test_idx) = train_test_split(data.n(), 0.2, args.seed);
    let train_set = data.subset(&train_idx);
    let test_set = data.subset(&test_idx);

    let mut rows: Vec<(String, f64, f64)> = Vec::new();
    let mut push = |name: &str, model: &dyn Classifier| -> Result<(), ExitCode> {
        let tr = evaluate_dyn(model, &train_set).map_err(|e| {
            eprintln!("{name}: {e}");
            ExitCode::from(EXIT_IO)
        })?;
        let te = evaluate_dyn(model, &test_set).map_err(|e| {
            eprintln!("{name}: {e}");
            ExitCode::from(EXIT_IO)
        })?;
        rows.push((name.to_string(), tr, te));
        Ok(())
    };

    let forest = match fit_forest(&train_set, ForestConfig { seed: args.seed, ..Default::default() }) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    if let Err(code) = push("random_forest", &forest) {
        return code;
    }

    let params = TreeParams {
        max_depth: 4,
        features_per_split: 5,
        min_samples_leaf: 1,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(args.seed);
    let all: Vec<usize> = (0..train_set.n()).collect();
    let tree = match fit_tree(&train_set, &all, &params, &mut rng) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    if let Err(code) = push("decision_tree", &tree) {
        return code;
    }

    for k in [9, 11] {
        let knn = match fit_knn(&train_set, k) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("knn-{k}: {e}");
                return ExitCode::from(EXIT_IO);
            }
        };
        if let Err(code) = push(&format!("knn_{k}"), &knn) {
            return code;
        }
    }

    rows.sort_by(|a, b| b.2.total_cmp(&a.2));
    println!("{:<16} {:>8} {:>8}", "model", "train", "test");
    for (name, tr, te) in &rows {
        println!("{name:<16} {tr:>8.4} {te:>8.4}");
    }
    ExitCode::SUCCESS
}

fn evaluate_dyn(model: &dyn Classifier, data: &Dataset) -> Result<f64, String> {
    let mut correct = 0usize;
    for (f, &label) in data.features.iter().zip(&data.labels) {
        let predicted = model.classify(f).map_err(|e| e.to_string())?;
        correct += usize::from(predicted == label);
    }
    Ok(correct as f64 / data.n() as f64)
}

fn simulate(args: SimulateArgs) -> ExitCode {
    let script = match ScenarioScript::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("bad scenario {}: {e}", args.scenario.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let model = match load_model(&args.model) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("cannot load {}: {e}", args.model.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let mut system = System::in_memory(script.seed).with_model(model);
    let log = match run_scenario(&script, &mut system) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = log.write_jsonl(&args.log_out) {
        eprintln!("cannot write {}: {e}", args.log_out.display());
        return ExitCode::from(EXIT_IO);
    }
    let doses = log.doses().len();
    let positives = log
        .detections()
        .iter()
        .filter(|e| matches!(e.event, glucoguard::devices::LogEvent::Detection { label: 1, .. }))
        .count();
    println!(
        "{} events, {} positive detections, {} doses; chain height {}",
        log.entries.len(),
        positives,
        doses,
        system.chain.len()
    );
    println!("log written to {}", args.log_out.display());
    ExitCode::SUCCESS
}

fn chain(command: ChainCommand) -> ExitCode {
    match command {
        ChainCommand::Verify { store } => {
            let blocks = match store::read_store(&store) {
                Ok(b) => b,
                Err(store::StoreError::Io(e)) => {
                    eprintln!("cannot read {}: {e}", store.display());
                    return ExitCode::from(EXIT_IO);
                }
                Err(store::StoreError::MalformedBlock { ordinal, source }) => {
                    eprintln!("block {ordinal}: {source}");
                    return ExitCode::from(EXIT_INTEGRITY);
                }
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(EXIT_INTEGRITY);
                }
            };
            match validate_chain(&blocks) {
                Ok(()) => {
                    println!("ok: {} blocks", blocks.len());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("block {}: {}", e.block_index, e.reason);
                    ExitCode::from(EXIT_INTEGRITY)
                }
            }
        }
        ChainCommand::Show { store, index } => {
            let blocks = match store::read_store(&store) {
                Ok(b) => b,
                Err(e) => {
                    eprintln!("cannot read {}: {e}", store.display());
                    return ExitCode::from(EXIT_IO);
                }
            };
            let Some(block) = blocks.iter().find(|b| b.header.index == index) else {
                eprintln!("block {index} not found (chain height {})", blocks.len());
                return ExitCode::from(EXIT_IO);
            };
            let view = serde_json::json!({
                "index": block.header.index,
                "version": block.header.version,
                "prev_hash": hex::encode(block.header.prev_hash),
                "merkle_root": hex::encode(block.header.merkle_root),
                "timestamp": block.header.timestamp,
                "nonce": block.header.nonce,
                "user_id": hex::encode(block.header.user_id),
                "approval_digest": hex::encode(block.header.approval_digest),
                "block_hash": hex::encode(block.block_hash),
                "transactions": block.transactions.iter().map(|tx| serde_json::json!({
                    "kind": tx.kind.as_str(),
                    "patient_id": hex::encode(tx.patient_id),
                    "created_at": tx.created_at,
                    "payload": hex::encode(&tx.payload),
                })).collect::<Vec<_>>(),
                "approvals": block.approvals.iter().map(|a| serde_json::json!({
                    "miner_id": hex::encode(a.miner_id),
                    "signature": hex::encode(a.signature),
                })).collect::<Vec<_>>(),
            });
            println!("{}", serde_json::to_string_pretty(&view).expect("block view serializes"));
            ExitCode::SUCCESS
        }
    }
}

fn serve(args: ServeArgs) -> ExitCode {
    let config = match ServiceConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cannot load {}: {e}", args.config.display());
            return ExitCode::from(EXIT_IO);
        }
    };
    let system = match System::new(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_IO);
        }
    };
    if let Err(e) = http::serve(system) {
        eprintln!("{e}");
        return ExitCode::from(EXIT_IO);
    }
    ExitCode::SUCCESS
}
