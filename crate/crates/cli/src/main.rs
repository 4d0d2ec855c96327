use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use lgm::imaging::{
    denoise, load_image, psnr, save_image, train_denoiser, DenoiserModel, DenoiserTrainConfig,
    Image,
};
use lgm::linalg::read_matrix;
use lgm::pursuit::{
    batch_omp, derive_seed, gcmp, mp, omp, rand_omp, sp, CscDictionary, Dictionary, PursuitConfig,
    PursuitResult,
};
use lgm::synthetic::{
    dictionary_distance, evaluate_methods, gen_dataset, load_dataset, make_dct_dictionary,
    save_dataset, write_results_csv, EvalSettings, Method, SyntheticSpec, TrainedModels,
};
use lgm::training::{train, Model, TrainConfig};

#[derive(Parser, Serialize)]
#[command(
    name = "lgm",
    version,
    about = "Greedy sparse pursuits and learned greedy networks"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic planted dataset.
    GenData(GenDataArgs),
    /// Run a pursuit engine on every column of a signal matrix.
    Pursuit(PursuitArgs),
    /// Train a synthetic model or an image denoiser.
    Train(TrainArgs),
    /// Compare estimators on a synthetic test set.
    Eval(EvalArgs),
    /// Denoise a PGM image.
    Denoise(DenoiseArgs),
    /// Distance between two dictionaries.
    DictDist(DictDistArgs),
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    /// JSON dataset spec; missing fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Algo {
    Omp,
    Mp,
    Sp,
    BatchOmp,
    RandOmp,
    Gcmp,
}

#[derive(Args, Serialize)]
struct PursuitArgs {
    #[arg(long, value_enum)]
    algo: Algo,
    /// Dictionary matrix stem (local filters for gcmp).
    #[arg(long)]
    dict: PathBuf,
    /// Signal matrix stem, one signal per column.
    #[arg(long)]
    signals: PathBuf,
    /// Cardinality bound (support size for sp).
    #[arg(long)]
    s: usize,
    /// Residual threshold (ignored by sp).
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Threshold factor for rand-omp.
    #[arg(long, default_value_t = 0.8)]
    tau: f64,
    /// Seed for rand-omp; signal `j` uses a seed derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// JSON training config (synthetic or denoiser, depending on the data).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic dataset directory.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    data: Option<PathBuf>,
    /// Noise level of the synthetic split to train on (default: the first).
    #[arg(long, requires = "data")]
    sigma: Option<f64>,
    /// Directory of PGM training images (trains a denoiser).
    #[arg(long)]
    images: Option<PathBuf>,
    /// Directory of PGM test images for the denoiser.
    #[arg(long, requires = "images")]
    test_images: Option<PathBuf>,
    /// Denoiser patch size.
    #[arg(long, default_value_t = 8)]
    patch: usize,
    /// Denoiser layer count.
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the history, checkpoint and config snapshot.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated method names; the oracle row is always added.
    #[arg(long, value_delimiter = ',', default_value = "omp-true-dict")]
    methods: Vec<String>,
    #[arg(long)]
    lgm: Option<PathBuf>,
    #[arg(long)]
    lgm_mmse: Option<PathBuf>,
    #[arg(long)]
    lista: Option<PathBuf>,
    /// JSON evaluation settings.
    #[arg(long)]
    settings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct DenoiseArgs {
    /// Trained denoiser checkpoint; without it an untrained DCT model is used.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    patch: usize,
    #[arg(long, default_value_t = 10)]
    layers: usize,
    #[arg(long)]
    input: PathBuf,
    /// Adds Gaussian noise of this σ (0..=255 scale) to the input first.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clean reference for PSNR reporting.
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the PSNR report as CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DictDistArgs {
    /// Reference dictionary stem.
    reference: PathBuf,
    /// Approximation stem.
    approx: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Core(#[from] lgm::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) if e.is_numerical() => 3,
            Failure::Core(lgm::Error::Io { .. }) | Failure::Io { .. } => 1,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |source| Failure::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Writes `{"command": ..., "config": ...}` so a run can be repeated.
fn snapshot(path: &Path, command: &Command, config: impl Serialize) -> CliResult<()> {
    let value = json!({ "command": command, "config": config });
    let text = serde_json::to_string_pretty(&value).map_err(lgm::Error::from)?;
    write_file(path, text + "\n")
}

/// Snapshot path for a single-file output: `out.csv` → `out.config.json`.
fn snapshot_for(out: &Path) -> PathBuf {
    out.with_extension("config.json")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::GenData(a) => gen_data_cmd(command, a),
        Command::Pursuit(a) => pursuit_cmd(command, a),
        Command::Train(a) => train_cmd(command, a),
        Command::Eval(a) => eval_cmd(command, a),
        Command::Denoise(a) => denoise_cmd(command, a),
        Command::DictDist(a) => {
            let d = dictionary_distance(&read_matrix(&a.reference)?, &read_matrix(&a.approx)?)?;
            println!("{d}");
            Ok(())
        }
    }
}

fn gen_data_cmd(command: &Command, a: &GenDataArgs) -> CliResult<()> {
    let mut spec: SyntheticSpec = read_json(a.spec.as_deref())?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let d_true = make_dct_dictionary(spec.n, spec.m);
    let data = gen_dataset(&spec, &d_true)?;
    save_dataset(&a.out, &spec, &d_true, &data)?;
    snapshot(&a.out.join("config.json"), command, &spec)
}

fn pursuit_cmd(command: &Command, a: &PursuitArgs) -> CliResult<()> {
    let atoms = read_matrix(&a.dict)?;
    let signals = read_matrix(&a.signals)?;
    let cfg = PursuitConfig::new(a.s, a.eps);
    let columns = |n: usize| -> CliResult<()> {
        if signals.rows() != n {
            return Err(Failure::Usage(format!(
                "signals have {} rows, the dictionary expects {n}",
                signals.rows()
            )));
        }
        Ok(())
    };
    let results: Vec<PursuitResult> = match a.algo {
        Algo::Gcmp => {
            let csc = CscDictionary::new(&atoms, signals.rows())?;
            (0..signals.cols())
                .map(|j| gcmp(&csc, &signals.col(j), &cfg))
                .collect::<Result<_, _>>()?
        }
        Algo::BatchOmp => {
            let dict = Dictionary::new(atoms)?;
            columns(dict.n())?;
            batch_omp(&dict, &signals, &cfg)?
        }
        algo => {
            let dict = Dictionary::new(atoms)?;
            columns(dict.n())?;
            (0..signals.cols())
                .map(|j| {
                    let x = signals.col(j);
                    match algo {
                        Algo::Omp => omp(&dict, &x, &cfg),
                        Algo::Mp => mp(&dict, &x, &cfg),
                        Algo::Sp => sp(&dict, &x, a.s),
                        Algo::RandOmp => {
                            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(a.seed, j as u64));
                            rand_omp(&dict, &x, &cfg, a.tau, &mut rng)
                        }
                        Algo::BatchOmp | Algo::Gcmp => unreachable!(),
                    }
                })
                .collect::<Result<_, _>>()?
        }
    };
    write_file(&a.out, pursuit_csv(&results))?;
    snapshot(&snapshot_for(&a.out), command, &cfg)
}

fn join<T: ToString>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

/// One row per signal; support and coefficients are space-separated lists.
fn pursuit_csv(results: &[PursuitResult]) -> String {
    let mut s = String::from("signal,iterations,residual_norm,support,coeffs\n");
    for (j, r) in results.iter().enumerate() {
        let _ = writeln!(
            s,
            "{j},{},{},{},{}",
            r.iterations,
            r.final_residual_norm(),
            join(&r.code.support),
            join(&r.code.coeffs)
        );
    }
    s
}

fn train_cmd(command: &Command, a: &TrainArgs) -> CliResult<()> {
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    match (&a.data, &a.images) {
        (Some(data), None) => train_synthetic(command, a, data),
        (None, Some(images)) => train_images(command, a, images),
        _ => Err(Failure::Usage(
            "give exactly one of --data and --images".into(),
        )),
    }
}

fn train_synthetic(command: &Command, a: &TrainArgs, dir: &Path) -> CliResult<()> {
    let mut cfg: TrainConfig = read_json(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let (_, d_true, data) = load_dataset(dir)?;
    let pick = |sets: &[lgm::synthetic::LabeledDataset]| -> CliResult<usize> {
        match a.sigma {
            None if !sets.is_empty() => Ok(0),
            None => Err(Failure::Usage("dataset has no noise levels".into())),
            Some(sigma) => sets
                .iter()
                .position(|d| (d.sigma - sigma).abs() <= 1e-12 * sigma.abs().max(1.0))
                .ok_or_else(|| Failure::Usage(format!("dataset has no split with σ = {sigma}"))),
        }
    };
    let k = pick(&data.train)?;
    let (train_set, test_set) = (&data.train[k], &data.test[k]);
    let model = Model::init(&cfg, d_true.rows(), d_true.cols())?;
    let (trained, run) = train(&cfg, model, train_set, test_set, Some(&d_true))?;
    write_file(&a.out.join("history.csv"), run.to_csv())?;
    trained.save(&a.out.join("model"))?;
    snapshot(&a.out.join("config.json"), command, &cfg)
}

fn pgm_dir(dir: &Path) -> CliResult<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Usage(format!(
            "no .pgm images in {}",
            dir.display()
        )));
    }
    Ok(paths
        .iter()
        .map(|p| load_image(p))
        .collect::<Result<_, _>>()?)
}

fn train_images(command: &Command, a: &TrainArgs, dir: &Path) -> CliResult<()> {
    let mut cfg: DenoiserTrainConfig = read_json(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let images = pgm_dir(dir)?;
    let tests = match &a.test_images {
        Some(t) => pgm_dir(t)?,
        None => Vec::new(),
    };
    let model = DenoiserModel::dct(a.patch, a.layers, cfg.seed)?;
    let (trained, history) = train_denoiser(model, &cfg, &images, &tests, |e| {
        eprintln!(
            "epoch {} lr {} loss {} psnr {}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.test_psnr.map_or("-".into(), |v| format!("{v:.3}"))
        );
    })?;
    let mut csv = String::from("epoch,lr,train_loss,test_psnr\n");
    for e in &history {
        let psnr = e.test_psnr.map_or(String::new(), |v| v.to_string());
        let _ = writeln!(csv, "{},{},{},{psnr}", e.epoch, e.lr, e.train_loss);
    }
    write_file(&a.out.join("history.csv"), csv)?;
    trained.save(&a.out.join("model"))?;
    let resolved = json!({ "train": cfg, "patch": a.patch, "layers": a.layers });
    snapshot(&a.out.join("config.json"), command, resolved)
}

fn eval_cmd(command: &Command, a: &EvalArgs) -> CliResult<()> {
    let mut settings: EvalSettings = read_json(a.settings.as_deref())?;
    if let Some(s) = a.seed {
        settings.seed = s;
    }
    let methods: Vec<Method> = a
        .methods
        .iter()
        .map(|m| m.trim().parse())
        .collect::<Result<_, _>>()?;
    let load = |p: &Option<PathBuf>| p.as_deref().map(Model::load).transpose();
    let (lgm, lgm_mmse, lista) = (load(&a.lgm)?, load(&a.lgm_mmse)?, load(&a.lista)?);
    let models = TrainedModels {
        lgm: lgm.as_ref(),
        lgm_mmse: lgm_mmse.as_ref(),
        lista: lista.as_ref(),
    };
    let (_, d_true, data) = load_dataset(&a.data)?;
    let rows = evaluate_methods(&data.test, &d_true, &methods, &models, &settings)?;
    write_results_csv(&a.out, &rows)?;
    snapshot(&snapshot_for(&a.out), command, &settings)
}

fn denoise_cmd(command: &Command, a: &DenoiseArgs) -> CliResult<()> {
    let model = match &a.model {
        Some(p) => DenoiserModel::load(p)?,
        None => DenoiserModel::dct(a.patch, a.layers, 0)?,
    };
    let mut input = load_image(&a.input)?;
    if let Some(sigma) = a.noise {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Failure::Usage(format!(
                "noise level {sigma} must be non-negative"
            )));
        }
        input = input.with_noise(sigma, a.seed);
    }
    let out = denoise(&model, &input)?.map(|v| v.round().clamp(0.0, 255.0));
    save_image(&out, &a.out)?;
    if let Some(clean) = &a.clean {
        let clean = load_image(clean)?;
        let before = psnr(&input, &clean, 255.0)?;
        let after = psnr(&out, &clean, 255.0)?;
        println!("psnr_input {before:.4}");
        println!("psnr_output {after:.4}");
        if let Some(report) = &a.report {
            write_file(
                report,
                format!(
                    "input,psnr_input,psnr_output\n{},{before},{after}\n",
                    a.input.display()
                ),
            )?;
        }
    } else if a.report.is_some() {
        return Err(Failure::Usage("--report needs --clean".into()));
    }
    snapshot(
        &snapshot_for(&a.out),
        command,
        json!({ "patch": model.patch, "layers": model.layers() }),
    )
}
