use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use multical::auditor::{check_al_multicalibration, multi_ae_violations};
use multical::bestinclass::{postprocess as run_postprocess, PostprocessParams, PredictorFamily};
use multical::bridge::{
    correlation, learn_via_wal, wal_from_multicalibration, wal_sample_size, ExactMcLearner, ExhaustiveWeakLearner,
    Labeling, WalContract, WalParams,
};
use multical::io;
use multical::learners::{
    bound_check, default_sample_size, learn_multi_ae, learn_multicalibrated, LearnTrace, LearnerConfig, MultiAeParams,
};
use multical::oracles::{
    EmpiricalGuessCheck, EmpiricalSq, ExactGuessCheck, ExactSq, GuessCheck, OracleFlavor, PrivateOracle, SampleStore,
};
use multical::population::{
    generate_synthetic, sample_outcomes, BoundCollection, CollectionSpec, GroundTruth, Population, SubsetCollection,
    SyntheticConfig, TruthSpec,
};
use multical::predictor::{DiscretizationGrid, UpdateProgram};

use crate::manifest::RunManifest;
use crate::{exit, AlgorithmArg, AuditArgs, GenArgs, LearnArgs, OracleArg, Overrides, PostprocessArgs, Preset};
use crate::{ReduceArgs, ReportArgs};

pub const POPULATION_FILE: &str = "population.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const COLLECTION_FILE: &str = "collection.json";
pub const OUTCOMES_FILE: &str = "outcomes.csv";

type CmdResult = anyhow::Result<u8>;

/// Per-round labeled examples drawn by default for the weak-agnostic
/// learner, in multiples of N.
const WAL_SAMPLE_CAP: usize = 100;

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// ---------------------------------------------------------------------------
// gen

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenConfig {
    pub seed: u64,
    #[serde(flatten)]
    pub instance: SyntheticConfig,
}

fn preset(p: Preset) -> GenConfig {
    match p {
        Preset::HalfQualified => GenConfig {
            seed: 0,
            instance: SyntheticConfig {
                n: 200,
                boolean_features: 0,
                real_features: 0,
                gamma: 0.25,
                truth: TruthSpec::HalfQualified {
                    set_size: 100,
                    outside: 0.5,
                },
                collection: CollectionSpec::default(),
            },
        },
        Preset::Constant => GenConfig {
            seed: 0,
            instance: SyntheticConfig {
                n: 100,
                boolean_features: 0,
                real_features: 0,
                gamma: 1.0,
                truth: TruthSpec::Constant { value: 0.5 },
                collection: CollectionSpec {
                    include_all: true,
                    ..CollectionSpec::default()
                },
            },
        },
    }
}

pub fn gen(args: GenArgs) -> CmdResult {
    let mut config = match (&args.config, args.preset) {
        (Some(path), _) => io::read_json::<GenConfig>(path)?,
        (None, Some(p)) => preset(p),
        (None, None) => bail!("either --config or --preset is required"),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let instance = generate_synthetic(&config.instance, config.seed)?;
    create_dir(&args.out)?;
    let mut manifest = RunManifest::start("gen", &config)?;
    manifest.seed("instance", config.seed).seed("outcomes", config.seed);
    if let Some(path) = &args.config {
        manifest.input(path);
    }
    let paths = [POPULATION_FILE, TRUTH_FILE, COLLECTION_FILE, OUTCOMES_FILE].map(|f| args.out.join(f));
    io::write_population(&paths[0], &instance.population)?;
    io::write_truth(&paths[1], &instance.truth)?;
    io::write_json(&paths[2], &instance.collection)?;
    io::write_outcomes(&paths[3], &sample_outcomes(&instance.truth, config.seed))?;
    for p in &paths {
        manifest.output(p);
    }
    manifest.finish(&args.out)?;
    Ok(exit::OK)
}

// ---------------------------------------------------------------------------
// instances and oracles

struct Instance {
    population: Population,
    truth: GroundTruth,
    collection: SubsetCollection,
    inputs: Vec<PathBuf>,
}

impl Instance {
    fn read(dir: &Path) -> anyhow::Result<Self> {
        let paths = [POPULATION_FILE, TRUTH_FILE, COLLECTION_FILE].map(|f| dir.join(f));
        let population = io::read_population(&paths[0]).with_context(|| format!("reading {}", paths[0].display()))?;
        let truth = io::read_truth(&paths[1]).with_context(|| format!("reading {}", paths[1].display()))?;
        if truth.len() != population.len() {
            return Err(multical::Error::Schema(format!(
                "truth covers {} ids, population has {}",
                truth.len(),
                population.len()
            ))
            .into());
        }
        let collection: SubsetCollection = io::read_json(&paths[2])?;
        Ok(Self {
            population,
            truth,
            collection,
            inputs: paths.to_vec(),
        })
    }

    fn bind(&self) -> anyhow::Result<BoundCollection> {
        Ok(self.collection.bind(&self.population)?)
    }
}

fn apply_overrides(config: &mut LearnerConfig, o: &Overrides) {
    if let Some(v) = o.seed {
        config.seed = v;
    }
    if let Some(v) = o.alpha {
        config.alpha = v;
    }
    if let Some(v) = o.lambda {
        config.lambda = v;
    }
    if let Some(v) = o.gamma {
        config.gamma = v;
    }
    if let Some(v) = o.oracle {
        config.oracle.flavor = match v {
            OracleArg::Exact => OracleFlavor::Exact,
            OracleArg::Empirical => OracleFlavor::Empirical,
            OracleArg::Private => OracleFlavor::Private,
        };
    }
}

/// Builds the configured guess-and-check oracle and hands it to `f`.
/// `smallest_window` is the smallest window the caller will request.
fn with_guess_check<R>(
    config: &LearnerConfig,
    truth: &GroundTruth,
    sets: usize,
    smallest_window: f64,
    manifest: &mut RunManifest,
    f: impl FnOnce(&mut dyn GuessCheck) -> multical::Result<R>,
) -> anyhow::Result<R> {
    let oc = &config.oracle;
    manifest.seed("oracle", oc.seed);
    let default_n = || default_sample_size(sets, config.alpha, config.lambda, config.gamma);
    Ok(match oc.flavor {
        OracleFlavor::Exact => {
            let mut gc = ExactGuessCheck::new(truth, oc.window_min).with_policy(oc.gray_zone);
            f(&mut gc)?
        }
        OracleFlavor::Empirical => {
            let store = SampleStore::draw(truth, oc.samples.unwrap_or_else(default_n), oc.seed)?;
            let mut gc = EmpiricalGuessCheck::new(&store, oc.window_min).with_policy(oc.gray_zone);
            f(&mut gc)?
        }
        OracleFlavor::Private => {
            let min_window = oc.window_min.max(smallest_window);
            let budget = oc.budget();
            let needed = PrivateOracle::required_samples(&budget, min_window, oc.xi).max(default_n());
            let store = SampleStore::draw(truth, oc.samples.unwrap_or(needed), oc.seed)?;
            let mut gc = PrivateOracle::new(&store, budget, min_window, oc.xi, oc.noise, oc.seed)?;
            f(&mut gc)?
        }
    })
}

fn write_trace(path: &Path, trace: &LearnTrace) -> anyhow::Result<()> {
    fs::write(path, trace.to_jsonl()?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// learn

pub fn learn(args: LearnArgs) -> CmdResult {
    let mut config: LearnerConfig = io::read_json(&args.config)?;
    apply_overrides(&mut config, &args.overrides);
    let instance = Instance::read(&args.instance)?;
    let mut manifest = RunManifest::start("learn", &config)?;
    manifest.seed("learner", config.seed).input(&args.config);
    for p in &instance.inputs {
        manifest.input(p);
    }
    create_dir(&args.out)?;
    let predictor_path = args.out.join("predictor.csv");
    let trace_path = args.out.join("trace.jsonl");

    match args.algorithm {
        AlgorithmArg::Multicalibration => {
            let coll = instance.bind()?;
            let params = config.multicalibration_params();
            let out = with_guess_check(
                &config,
                &instance.truth,
                coll.len(),
                params.smallest_window(),
                &mut manifest,
                |gc| learn_multicalibrated(&coll, gc, &params, Some(&instance.truth)),
            )?;
            let program_path = args.out.join("program.json");
            io::write_predictor(&predictor_path, &out.predictor)?;
            io::write_json(&program_path, &out.program)?;
            write_trace(&trace_path, &out.trace)?;
            manifest.output(&program_path);
        }
        AlgorithmArg::MultiAe => {
            let coll = instance.bind()?;
            let oc = &config.oracle;
            manifest.seed("oracle", oc.seed);
            let params = MultiAeParams {
                guard_factor: config.max_rounds_factor,
                ..MultiAeParams::new(config.alpha, config.gamma)
            };
            let (x, trace) = match oc.flavor {
                OracleFlavor::Exact => {
                    // The configured tolerance is capped at the learner's requirement.
                    let tolerance = oc.tolerance.min(config.alpha * config.gamma / 4.0);
                    let mut sq = ExactSq::new(&instance.truth, tolerance)?;
                    learn_multi_ae(&coll, &mut sq, &params, Some(&instance.truth))?
                }
                OracleFlavor::Empirical => {
                    let n = oc
                        .samples
                        .unwrap_or_else(|| default_sample_size(coll.len(), config.alpha, config.lambda, config.gamma));
                    let store = SampleStore::draw(&instance.truth, n, oc.seed)?;
                    learn_multi_ae(
                        &coll,
                        &mut EmpiricalSq { store: &store },
                        &params,
                        Some(&instance.truth),
                    )?
                }
                OracleFlavor::Private => {
                    return Err(multical::Error::invalid(
                        "the multi-AE learner takes statistical queries; use the exact or empirical oracle",
                    )
                    .into())
                }
            };
            io::write_predictor(&predictor_path, &x)?;
            write_trace(&trace_path, &trace)?;
        }
        AlgorithmArg::WeakAgnostic => {
            let coll = instance
                .collection
                .bind_unchecked(&instance.population)?
                .dense_subcollection(config.gamma);
            let mut params = WalParams::new(config.alpha, config.lambda, config.gamma);
            params.guard_factor = config.max_rounds_factor;
            let grid = DiscretizationGrid::new(config.lambda)?;
            params.labeling = match config.oracle.flavor {
                OracleFlavor::Exact => Labeling::Exact,
                _ => Labeling::Sampled {
                    size: config.oracle.samples.map(|s| s as usize).unwrap_or_else(|| {
                        wal_sample_size(coll.len() + 2, grid.cells(), params.effective_tau(), config.oracle.xi)
                            .min(WAL_SAMPLE_CAP * instance.population.len())
                    }),
                    seed: config.oracle.seed,
                },
            };
            manifest.seed("oracle", config.oracle.seed);
            let mut learner = ExhaustiveWeakLearner::new(&coll);
            let (x, trace) = learn_via_wal(&mut learner, &instance.truth, &params)?;
            io::write_predictor(&predictor_path, &x)?;
            write_trace(&trace_path, &trace)?;
        }
    }
    manifest.output(&predictor_path).output(&trace_path);
    manifest.finish(&args.out)?;
    Ok(exit::OK)
}

// ---------------------------------------------------------------------------
// audit

#[derive(Debug, Serialize)]
struct AuditFile {
    #[serde(flatten)]
    report: multical::AuditReport,
    multi_ae_violations: Vec<(usize, f64)>,
}

pub fn audit(args: AuditArgs) -> CmdResult {
    let instance = Instance::read(&args.instance)?;
    let coll = instance.bind()?;
    let (x, source) = match (&args.predictor, &args.program) {
        (Some(path), _) => (io::read_predictor(path)?, path.clone()),
        (None, Some(path)) => {
            let program: UpdateProgram = io::read_json(path)?;
            (program.eval_all(&instance.population)?, path.clone())
        }
        (None, None) => bail!("either --predictor or --program is required"),
    };
    if x.len() != instance.population.len() {
        return Err(multical::Error::Schema(format!(
            "predictor covers {} ids, population has {}",
            x.len(),
            instance.population.len()
        ))
        .into());
    }
    let grid = DiscretizationGrid::new(args.lambda)?;
    if !(args.alpha > 0.0) {
        return Err(multical::Error::invalid("alpha must be positive").into());
    }
    let report = check_al_multicalibration(&x, &instance.truth, &coll, args.alpha, &grid);
    let clean = report.is_clean();
    let file = AuditFile {
        multi_ae_violations: multi_ae_violations(&x, &instance.truth, &coll, args.alpha),
        report,
    };
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("audit.json");
            io::write_json(&path, &file)?;
            let mut manifest = RunManifest::start(
                "audit",
                &serde_json::json!({ "alpha": args.alpha, "lambda": args.lambda }),
            )?;
            manifest.input(&source).output(&path);
            for p in &instance.inputs {
                manifest.input(p);
            }
            manifest.finish(dir)?;
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            serde_json::to_writer_pretty(&mut stdout, &file)?;
            writeln!(stdout)?;
        }
    }
    Ok(if clean { exit::OK } else { exit::VIOLATION })
}

// ---------------------------------------------------------------------------
// postprocess

fn read_family(dir: &Path, pop: &Population) -> anyhow::Result<(PredictorFamily, Vec<PathBuf>)> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .collect();
    entries.sort();
    let mut family = PredictorFamily::new();
    for path in &entries {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("h").to_string();
        if path.extension().and_then(|e| e.to_str()) == Some("csv") {
            family.push(name, io::read_predictor(path)?);
        } else {
            let program: UpdateProgram = io::read_json(path)?;
            family.push_program(name, &program, pop)?;
        }
    }
    if family.is_empty() {
        return Err(multical::Error::invalid(format!("{} holds no candidate predictors", dir.display())).into());
    }
    Ok((family, entries))
}

pub fn postprocess(args: PostprocessArgs) -> CmdResult {
    let mut config: LearnerConfig = io::read_json(&args.config)?;
    apply_overrides(&mut config, &args.overrides);
    let instance = Instance::read(&args.instance)?;
    let coll = instance.bind()?;
    let (family, members) = read_family(&args.family, &instance.population)?;
    let mut manifest = RunManifest::start("postprocess", &config)?;
    manifest.seed("learner", config.seed).input(&args.config);
    for p in instance.inputs.iter().chain(&members) {
        manifest.input(p);
    }
    let params = PostprocessParams {
        alpha: config.alpha,
        lambda: config.lambda,
        gamma: config.gamma,
    };
    // Level sets can be as small as αλN, so the smallest window is α·α²λ/4.
    let smallest = config.alpha * config.alpha * config.alpha * config.lambda / 4.0;
    let sets = coll.len() + family.len() * DiscretizationGrid::new(config.lambda)?.cells();
    let out = with_guess_check(&config, &instance.truth, sets, smallest, &mut manifest, |gc| {
        run_postprocess(&coll, &family, &params, gc, Some(&instance.truth))
    })?;
    create_dir(&args.out)?;
    let paths = ["predictor.csv", "program.json", "trace.jsonl", "report.json"].map(|f| args.out.join(f));
    io::write_predictor(&paths[0], &out.predictor)?;
    io::write_json(&paths[1], &out.program)?;
    write_trace(&paths[2], &out.trace)?;
    io::write_json(&paths[3], &out.report)?;
    for p in &paths {
        manifest.output(p);
    }
    manifest.finish(&args.out)?;
    Ok(exit::OK)
}

// ---------------------------------------------------------------------------
// reduce

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub rho: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
}

#[derive(Debug, Serialize)]
struct ReduceSummary {
    branch: String,
    correlation: f64,
    target: f64,
}

pub fn reduce(args: ReduceArgs) -> CmdResult {
    let config: ReduceConfig = io::read_json(&args.config)?;
    let population_path = args.instance.join(POPULATION_FILE);
    let collection_path = args.instance.join(COLLECTION_FILE);
    let pop = io::read_population(&population_path)?;
    let collection: SubsetCollection = io::read_json(&collection_path)?;
    let coll = collection.bind_unchecked(&pop)?;
    let labels = io::read_labels(&args.labels)?;
    let contract = WalContract::new(config.rho, config.tau)?;
    let (h, branch) = wal_from_multicalibration(
        &mut ExactMcLearner,
        &coll,
        &labels,
        contract,
        config.gamma,
        config.alpha,
    )?;
    let corr = correlation(&h.values(&pop)?, labels.values());

    create_dir(&args.out)?;
    let hypothesis_path = args.out.join("hypothesis.json");
    let summary_path = args.out.join("reduce.json");
    io::write_hypothesis(&hypothesis_path, &h)?;
    io::write_json(
        &summary_path,
        &ReduceSummary {
            branch: format!("{branch:?}"),
            correlation: corr,
            target: config.rho / 4.0 - 4.0 * config.alpha,
        },
    )?;
    let mut manifest = RunManifest::start("reduce", &config)?;
    manifest
        .input(&args.labels)
        .input(&population_path)
        .input(&collection_path)
        .input(&args.config)
        .output(&hypothesis_path)
        .output(&summary_path);
    manifest.finish(&args.out)?;
    Ok(exit::OK)
}

// ---------------------------------------------------------------------------
// report

/// Columns of the `report` table, in order.
pub const REPORT_COLUMNS: [&str; 12] = [
    "trace",
    "algorithm",
    "alpha",
    "lambda",
    "gamma",
    "n",
    "updates",
    "accepted",
    "queries",
    "bound",
    "within_bound",
    "potential_curve",
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn report(args: ReportArgs) -> CmdResult {
    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(sink, "{}", REPORT_COLUMNS.join(","))?;
    for path in &args.traces {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let trace = LearnTrace::from_jsonl(&text)?;
        let t = &trace.totals;
        let check = bound_check(&trace, t.alpha, t.lambda.unwrap_or(1.0), t.gamma);
        let curve: Vec<String> = trace.potential_curve().iter().map(|v| format!("{v:.6}")).collect();
        let algorithm = serde_json::to_value(t.algorithm)?;
        writeln!(
            sink,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            path.display(),
            algorithm.as_str().unwrap_or_default(),
            t.alpha,
            opt(t.lambda),
            t.gamma,
            t.n,
            t.updates,
            t.accepted,
            t.queries,
            check.bound,
            check.within,
            curve.join(";")
        )?;
    }
    sink.flush()?;
    Ok(exit::OK)
}
