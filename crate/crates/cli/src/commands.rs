use std::path::{Path, PathBuf};

use logictree::bitsim::{self, CompiledNet, PackedBatch, BENCH_CSV_HEADER};
use logictree::data::{self, BinaryEncodedSet, LabeledImageSet};
use logictree::discrete::{self, Netlist};
use logictree::export;
use logictree::model::{self, Init, ModelSpec, Overrides};
use logictree::train::{self, MetricsWriter, TrainConfig};
use logictree::{Dataset, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::{Command, Format, InitArg, Split, TrainArgs};

pub fn run(cmd: Command, threads: usize) -> Result<(), CliError> {
    match cmd {
        Command::Fetch { dataset, data_dir, url } => {
            let dataset = parse_dataset(&dataset)?;
            let root = data_dir.unwrap_or_else(data::default_cache_dir);
            let files = crate::fetch::fetch(dataset, &root, url.as_deref())?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Train(args) => train_cmd(args, threads),
        Command::Eval { ckpt, split, data_dir, split_seed, limit } => eval_cmd(&ckpt, split, data_dir, split_seed, limit),
        Command::Discretize { ckpt, out } => {
            let (net, m) = train::load_checkpoint(&ckpt)?;
            let netlist = Netlist::new(discrete::discretize(&net));
            write(&out, export::emit_netlist_json(&netlist))?;
            println!("{} gates", netlist.stats.gates);
            let mut rm = RunManifest::new("discretize", json!({ "step": m.step }), Some(m.seed)).input(&ckpt);
            rm.outputs.push(out);
            rm.write()
        }
        Command::Synth { net, out } => {
            let before = load_net(&net)?;
            let after = discrete::simplify(&before.net);
            write(&out, export::emit_netlist_json(&after))?;
            println!("{} gates before synthesis", before.stats.gates);
            println!("{} gates after synthesis", after.stats.gates);
            println!("depth {}", after.stats.depth);
            let mut rm = RunManifest::new(
                "synth",
                json!({ "gates_before": before.stats.gates, "gates_after": after.stats.gates }),
                None,
            )
            .input(&net);
            rm.outputs.push(out);
            rm.write()
        }
        Command::Bench { net, samples, repeats, seed, out } => bench_cmd(&net, samples, repeats, seed, threads, out),
        Command::Export { net, format, out, module } => {
            let netlist = load_net(&net)?;
            let text = match format {
                Format::Verilog => export::emit_verilog(&netlist.net, &module),
                Format::Json => export::emit_netlist_json(&netlist),
            };
            write(&out, text)?;
            let fmt = if format == Format::Verilog { "verilog" } else { "json" };
            let mut rm = RunManifest::new("export", json!({ "format": fmt, "module": module }), None).input(&net);
            rm.outputs.push(out);
            rm.write()
        }
        Command::Diag { ckpt, out, data_dir, samples, split_seed } => diag_cmd(&ckpt, &out, data_dir, samples, split_seed),
    }
}

fn parse_dataset(s: &str) -> Result<Dataset, CliError> {
    s.parse().map_err(|e: model::ModelError| CliError::Config(e.to_string()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, text).map_err(CliError::io(path))
}

fn load_net(path: &Path) -> Result<Netlist, CliError> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(export::load_netlist_json(&text)?)
}

/// Hyperparameter fields accepted in a `--config` file.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    size: Option<String>,
    steps: Option<usize>,
    seed: Option<u64>,
    k: Option<usize>,
    ox: Option<usize>,
    input_bits: Option<u32>,
    tau: Option<f64>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    eval_interval: Option<usize>,
    groups: Option<usize>,
    init: Option<InitArg>,
    split_seed: Option<u64>,
}

/// Fully resolved training run.
#[derive(Debug, Serialize)]
struct Resolved {
    dataset: Dataset,
    size: Option<String>,
    seeds: Vec<u64>,
    steps: usize,
    init: Init,
    split_seed: u64,
    limit_train: Option<usize>,
    spec: ModelSpec,
}

fn resolve(args: &TrainArgs) -> Result<Resolved, CliError> {
    let file: ConfigFile = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CliError::io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => ConfigFile::default(),
    };
    if args.seed.is_some() && args.seeds.is_some() {
        return Err(CliError::Config("--seed and --seeds are mutually exclusive".into()));
    }
    let dataset = parse_dataset(&args.dataset)?;
    let size = args.size.clone().or(file.size);
    let overrides = Overrides {
        k: args.k.or(file.k),
        ox: args.ox.or(file.ox),
        input_bits: args.input_bits.or(file.input_bits),
        tau: args.tau.or(file.tau),
        learning_rate: args.learning_rate.or(file.learning_rate),
        weight_decay: args.weight_decay.or(file.weight_decay),
        batch_size: args.batch_size.or(file.batch_size),
        eval_interval: args.eval_interval.or(file.eval_interval),
        groups: args.groups.or(file.groups),
    };
    let spec = model::build_logictreenet(dataset, size.as_deref(), &overrides)?;
    let seeds = match (&args.seeds, args.seed.or(file.seed)) {
        (Some(s), _) if s.is_empty() => return Err(CliError::Config("--seeds is empty".into())),
        (Some(s), _) => s.clone(),
        (None, seed) => vec![seed.unwrap_or(0)],
    };
    let init = match args.init.or(file.init).unwrap_or(InitArg::Residual) {
        InitArg::Residual => Init::default(),
        InitArg::Gaussian => Init::Gaussian,
    };
    Ok(Resolved {
        dataset,
        size: spec.size.clone(),
        seeds,
        steps: args.steps.or(file.steps).unwrap_or(spec.hyper.eval_interval * 10),
        init,
        split_seed: args.split_seed.or(file.split_seed).unwrap_or(0),
        limit_train: args.limit_train,
        spec,
    })
}

struct Splits {
    train: BinaryEncodedSet,
    val: BinaryEncodedSet,
    test: BinaryEncodedSet,
}

fn load_raw(dataset: Dataset, data_dir: Option<&Path>) -> Result<(LabeledImageSet, LabeledImageSet), CliError> {
    let root = data_dir.map(Path::to_path_buf).unwrap_or_else(data::default_cache_dir);
    let loaded = match dataset {
        Dataset::Mnist => data::load_mnist_dir(&root),
        Dataset::Cifar10 => data::load_cifar_dir(&root),
        Dataset::Custom => return Err(CliError::Config("custom datasets are not loadable from the CLI".into())),
    };
    loaded.map_err(|e| match CliError::from(e) {
        CliError::Missing(p) => CliError::Missing(format!("{p} (run `logictree fetch {dataset}` or set LGN_DATA_DIR)")),
        other => other,
    })
}

fn load_splits(spec: &ModelSpec, data_dir: Option<&Path>, split_seed: u64) -> Result<Splits, CliError> {
    let (train, test) = load_raw(spec.dataset, data_dir)?;
    let (train, val) = data::split_validation(&train, spec.hyper.validation_size.min(train.len() / 2), split_seed)?;
    let enc = |s: &LabeledImageSet| data::threshold_encode(s, spec.input_bits);
    Ok(Splits { train: enc(&train)?, val: enc(&val)?, test: enc(&test)? })
}

fn prefix(set: &BinaryEncodedSet, n: Option<usize>) -> BinaryEncodedSet {
    match n {
        Some(n) if n < set.len() => set.subset(&(0..n).collect::<Vec<_>>()),
        _ => set.clone(),
    }
}

fn train_cmd(args: TrainArgs, threads: usize) -> Result<(), CliError> {
    let r = resolve(&args)?;
    let resolved_json = serde_json::to_value(&r).expect("config serializes");
    if args.dry_run {
        println!("{}", serde_json::to_string_pretty(&resolved_json).unwrap());
        return Ok(());
    }
    let splits = load_splits(&r.spec, args.data_dir.as_deref(), r.split_seed)?;
    let train_set = prefix(&splits.train, r.limit_train);
    std::fs::create_dir_all(&args.out).map_err(CliError::io(&args.out))?;
    let mut summary = String::from("seed,best_step,val_acc_hard,test_acc_soft,test_acc_hard\n");
    let mut test_accs = Vec::new();
    for &seed in &r.seeds {
        let dir = if r.seeds.len() == 1 { args.out.clone() } else { args.out.join(format!("seed{seed}")) };
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let cfg = TrainConfig::from_spec(&r.spec, r.steps, seed);
        let net = Network::<f32>::new(r.spec.clone(), r.init, seed)?;
        let metrics_path = dir.join("metrics.csv");
        let mut writer = MetricsWriter::create(&metrics_path)?;
        let mut write_err = None;
        let report = train::fit_with(net, &train_set, &splits.val, &cfg, &mut |row| {
            eprintln!(
                "seed {seed} step {}: loss {:.4} train {:.4} val soft {:.4} hard {:.4}",
                row.step, row.train_loss, row.train_acc, row.val_acc_soft, row.val_acc_hard
            );
            if let Err(e) = writer.write(row) {
                write_err.get_or_insert(e);
            }
        })?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        let ckpt = dir.join("ckpt.json");
        train::save_checkpoint(&ckpt, &report.net, Some(&cfg), report.best_step)?;
        let soft = train::soft_accuracy(&report.net, &splits.test);
        let hard = train::hard_accuracy(&report.net, &splits.test);
        println!("seed {seed}: best step {} val {:.4} test soft {soft:.4} hard {hard:.4}", report.best_step, report.best_val_acc.max(0.0));
        summary.push_str(&format!("{seed},{},{:.6},{soft:.6},{hard:.6}\n", report.best_step, report.best_val_acc.max(0.0)));
        test_accs.push(hard);
        let mut rm = RunManifest::new("train", json!({ "resolved": resolved_json, "threads": threads }), Some(seed));
        if let Some(c) = &args.config {
            rm = rm.input(c);
        }
        rm.outputs = vec![ckpt.clone(), ckpt.with_file_name("ckpt.json.bin"), metrics_path];
        rm.write()?;
    }
    let summary_path = args.out.join("summary.csv");
    write(&summary_path, summary)?;
    if test_accs.len() > 1 {
        let n = test_accs.len() as f64;
        let mean = test_accs.iter().sum::<f64>() / n;
        let std = (test_accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        println!("test hard accuracy over {} seeds: {mean:.4} +- {std:.4}", test_accs.len());
    }
    let mut rm = RunManifest::new("train", json!({ "resolved": resolved_json, "threads": threads }), None);
    rm.outputs.push(summary_path);
    rm.write()
}

fn eval_cmd(ckpt: &Path, split: Split, data_dir: Option<PathBuf>, split_seed: u64, limit: Option<usize>) -> Result<(), CliError> {
    let (net, _) = train::load_checkpoint(ckpt)?;
    let splits = load_splits(&net.spec, data_dir.as_deref(), split_seed)?;
    let (name, set) = match split {
        Split::Train => ("train", splits.train),
        Split::Val => ("val", splits.val),
        Split::Test => ("test", splits.test),
    };
    let set = prefix(&set, limit);
    let out = json!({
        "split": name,
        "samples": set.len(),
        "soft_acc": train::soft_accuracy(&net, &set),
        "hard_acc": train::hard_accuracy(&net, &set),
    });
    println!("{out}");
    Ok(())
}

fn bench_cmd(net: &Path, samples: usize, repeats: usize, seed: u64, threads: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    let netlist = load_net(net)?;
    let compiled = CompiledNet::new(&netlist.net)?;
    let mut csv = format!("{BENCH_CSV_HEADER}\n");
    if samples > 0 {
        let width = netlist.net.num_inputs;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bits: Vec<u8> = (0..samples * width).map(|_| rng.random::<bool>() as u8).collect();
        let batch = PackedBatch::from_bits(&bits, width.max(1));
        let name = net.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let used = if threads == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { threads };
        let mut result = bitsim::bench(&name, &compiled, &batch, threads, repeats)?;
        result.threads = used;
        csv.push_str(&result.csv_row());
        csv.push('\n');
    }
    match out {
        Some(path) => {
            write(&path, &csv)?;
            let mut rm = RunManifest::new("bench", json!({ "samples": samples, "repeats": repeats }), Some(seed)).input(net);
            rm.outputs.push(path);
            rm.write()
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn diag_cmd(ckpt: &Path, out: &Path, data_dir: Option<PathBuf>, samples: usize, split_seed: u64) -> Result<(), CliError> {
    let (net, m) = train::load_checkpoint(ckpt)?;
    std::fs::create_dir_all(out).map_err(CliError::io(out))?;
    let splits = load_splits(&net.spec, data_dir.as_deref(), split_seed)?;
    let inputs: Vec<Vec<f32>> = (0..splits.val.len().min(samples))
        .map(|n| splits.val.sample(n).iter().map(|&b| b as f32).collect())
        .collect();
    let act = out.join("activations.csv");
    write(&act, train::activation_csv(&train::activation_stats(&net, &inputs)))?;
    let gates = out.join("gate_histogram.csv");
    write(&gates, discrete::histogram_csv(&discrete::model_gate_histogram(&net)))?;
    let decay = out.join("gradient_decay.csv");
    let mut csv = String::from("init,seed,layer,norm_ratio,local_derivative\n");
    for (name, init) in [("gaussian", Init::Gaussian), ("residual", Init::default())] {
        for seed in 0..10 {
            let g = train::gradient_decay(10, 256, 32, init, seed);
            for (l, (r, d)) in g.norm_ratio.iter().zip(&g.local).enumerate() {
                csv.push_str(&format!("{name},{seed},{l},{r:.6},{d:.6}\n"));
            }
        }
    }
    write(&decay, csv)?;
    println!("wrote {}, {}, {}", act.display(), gates.display(), decay.display());
    let mut rm = RunManifest::new("diag", json!({ "samples": samples, "split_seed": split_seed }), Some(m.seed)).input(ckpt);
    rm.outputs = vec![act, gates, decay];
    rm.write()
}
