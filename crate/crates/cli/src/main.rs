mod manifest;
mod stream;

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use helmx_core::distiller::{
    evaluate, fidelity, fit_tree, samples_from_trace, DecisionTree, FitParams, Sample,
};
use helmx_core::explainer::{AnnotatedFeatures, EventDetector};
use helmx_core::helm_sim::Scenario;
use helmx_core::telemetry::{read_trace, write_trace, FeatureSchema, TraceParser, TraceRecord};
use helmx_core::verbalizer::{Lexicon, Realizer, Style, TemplateRealizer, TimeMode};

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "helmx",
    version,
    about = "Distil a behaviour helm into a decision tree and explain its switches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for anything random; overrides the scenario's own seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file of overrides for the subcommand's configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Where to write the run manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its labelled trace.
    Simulate {
        scenario: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a decision tree to one or more labelled traces.
    Distill {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        max_depth: Option<usize>,
        #[arg(long)]
        min_samples_leaf: Option<usize>,
        #[arg(long)]
        min_impurity_decrease: Option<f64>,
        /// Comma-separated feature names; defaults to the standard schema.
        #[arg(long, value_delimiter = ',')]
        schema: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Replay or follow a telemetry stream and print explanation events.
    Explain {
        tree: PathBuf,
        /// Trace file, or `-` for stdin.
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = TimeArg::Mission)]
        time: TimeArg,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StyleArg::Declarative)]
        style: StyleArg,
        /// Keep reading as the file grows.
        #[arg(long)]
        follow: bool,
        #[arg(long, default_value_t = 200)]
        poll_ms: u64,
        /// With --follow, stop after this many ms without new data.
        #[arg(long)]
        idle_timeout_ms: Option<u64>,
        /// Ticks a new prediction must persist before it is reported.
        #[arg(long, default_value_t = 0)]
        min_dwell: usize,
        /// Expected feature names; refused if the tree disagrees.
        #[arg(long, value_delimiter = ',')]
        schema: Option<Vec<String>>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a tree against a labelled trace.
    Evaluate {
        tree: PathBuf,
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TimeArg {
    Mission,
    Wall,
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Declarative,
    Question,
}

/// Usage and configuration problems exit 2; everything else exits 1.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.command {
        Command::Simulate {
            scenario,
            out,
            common,
        } => simulate(&scenario, &out, &common),
        Command::Distill {
            traces,
            out,
            max_depth,
            min_samples_leaf,
            min_impurity_decrease,
            schema,
            common,
        } => {
            let flags = ParamFlags {
                max_depth,
                min_samples_leaf,
                min_impurity_decrease,
            };
            distill(&traces, &out, flags, schema.as_deref(), &common)
        }
        Command::Explain {
            tree,
            input,
            time,
            lexicon,
            style,
            follow,
            poll_ms,
            idle_timeout_ms,
            min_dwell,
            schema,
            common,
        } => {
            let opts = ExplainOpts {
                time: match time {
                    TimeArg::Mission => TimeMode::Mission,
                    TimeArg::Wall => TimeMode::Wall,
                },
                lexicon,
                style: match style {
                    StyleArg::Declarative => Style::Declarative,
                    StyleArg::Question => Style::Interrogative,
                },
                follow: follow.then(|| stream::Follow {
                    poll: Duration::from_millis(poll_ms),
                    idle_timeout: idle_timeout_ms.map(Duration::from_millis),
                }),
                min_dwell,
                schema,
            };
            explain(&tree, &input, &opts, &common)
        }
        Command::Evaluate {
            tree,
            trace,
            common,
        } => evaluate_cmd(&tree, &trace, &common),
    };
    match result.and_then(|(m, path)| m.write(&path, started).runtime()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("helmx: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("helmx: {e:#}");
            ExitCode::from(1)
        }
    }
}

type Outcome = Result<(RunManifest, PathBuf), Failure>;

fn read_config(common: &Common) -> Result<Option<Value>, Failure> {
    let Some(path) = &common.config else {
        return Ok(None);
    };
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))
        .usage()?;
    let v: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))
        .usage()?;
    if !v.is_object() {
        return Err(Failure::Usage(anyhow!(
            "config {} must be a JSON object",
            path.display()
        )));
    }
    Ok(Some(v))
}

fn reject_config(common: &Common, subcommand: &str) -> Result<(), Failure> {
    match &common.config {
        Some(_) => Err(Failure::Usage(anyhow!(
            "--config has no effect on {subcommand}"
        ))),
        None => Ok(()),
    }
}

/// Overlays the keys of `overrides` onto `base`'s JSON form.
fn merge<T>(base: &T, overrides: &Value) -> anyhow::Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut v = serde_json::to_value(base)?;
    if let (Some(dst), Some(src)) = (v.as_object_mut(), overrides.as_object()) {
        for (k, val) in src {
            dst.insert(k.clone(), val.clone());
        }
    }
    Ok(serde_json::from_value(v)?)
}

fn simulate(path: &Path, out: &Path, common: &Common) -> Outcome {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading scenario {}", path.display()))
        .usage()?;
    let mut scenario = Scenario::from_json(&text)
        .with_context(|| format!("scenario {}", path.display()))
        .usage()?;
    let mut manifest = RunManifest::new("simulate");
    manifest.input(path);
    if let Some(overrides) = read_config(common)? {
        scenario.helm = merge(&scenario.helm, &overrides)
            .context("helm overrides")
            .usage()?;
        manifest.set("helm", &overrides);
        scenario.validate().usage()?;
    }
    let seed = common.seed.unwrap_or(scenario.seed);
    let run = scenario.run_with_seed(seed);
    if run.timed_out {
        eprintln!("helmx: scenario stopped at max_duration before completing");
    }
    let file = fs::File::create(out)
        .with_context(|| format!("creating {}", out.display()))
        .runtime()?;
    let mut w = BufWriter::new(file);
    write_trace(&mut w, &run.records)
        .and_then(|_| w.flush())
        .runtime()?;

    manifest.output(out);
    manifest.seed = Some(seed);
    manifest.records = Some(run.records.len());
    let mpath = common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(out, None));
    Ok((manifest, mpath))
}

fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, Failure> {
    let file = stream::open(path)
        .with_context(|| format!("opening trace {}", path.display()))
        .usage()?;
    read_trace(BufReader::new(file))
        .with_context(|| format!("trace {}", path.display()))
        .runtime()
}

fn labelled_samples(
    schema: &FeatureSchema,
    records: &[TraceRecord],
    path: &Path,
) -> Result<Vec<Sample>, Failure> {
    if records.is_empty() {
        return Err(Failure::Usage(anyhow!("trace {} is empty", path.display())));
    }
    samples_from_trace(schema, records)
        .with_context(|| format!("trace {} must be labelled", path.display()))
        .usage()
}

#[derive(Clone, Copy)]
struct ParamFlags {
    max_depth: Option<usize>,
    min_samples_leaf: Option<usize>,
    min_impurity_decrease: Option<f64>,
}

fn distill(
    traces: &[PathBuf],
    out: &Path,
    flags: ParamFlags,
    schema: Option<&[String]>,
    common: &Common,
) -> Outcome {
    let mut manifest = RunManifest::new("distill");
    let mut params = FitParams::default();
    if let Some(overrides) = read_config(common)? {
        params = merge(&params, &overrides)
            .context("fit parameter overrides")
            .usage()?;
        manifest.set("config", &overrides);
    }
    if let Some(d) = flags.max_depth {
        params.max_depth = d;
        manifest.set("max_depth", d);
    }
    if let Some(m) = flags.min_samples_leaf {
        params.min_samples_leaf = m;
        manifest.set("min_samples_leaf", m);
    }
    if let Some(m) = flags.min_impurity_decrease {
        params.min_impurity_decrease = m;
        manifest.set("min_impurity_decrease", m);
    }
    params.validate().usage()?;
    let schema = match schema {
        Some(names) => {
            manifest.set("schema", names);
            FeatureSchema::from_names(names).usage()?
        }
        None => FeatureSchema::standard(),
    };

    let mut samples = Vec::new();
    for path in traces {
        let records = load_trace(path)?;
        samples.extend(labelled_samples(&schema, &records, path)?);
        manifest.input(path);
    }
    let tree = fit_tree(&schema, &samples, &params).runtime()?;
    let fid = fidelity(&tree, &samples).runtime()?;
    fs::write(out, tree.to_json() + "\n")
        .with_context(|| format!("writing {}", out.display()))
        .runtime()?;
    println!("fidelity={fid:.6}");

    manifest.output(out);
    manifest.seed = common.seed;
    manifest.records = Some(samples.len());
    let mpath = common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(out, None));
    Ok((manifest, mpath))
}

fn load_tree(path: &Path) -> Result<DecisionTree, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading tree {}", path.display()))
        .usage()?;
    DecisionTree::from_json(&text)
        .with_context(|| format!("tree {}", path.display()))
        .usage()
}

struct ExplainOpts {
    time: TimeMode,
    lexicon: Option<PathBuf>,
    style: Style,
    follow: Option<stream::Follow>,
    min_dwell: usize,
    schema: Option<Vec<String>>,
}

fn explain(tree_path: &Path, input: &Path, opts: &ExplainOpts, common: &Common) -> Outcome {
    let mut manifest = RunManifest::new("explain");
    reject_config(common, "explain")?;
    let tree = load_tree(tree_path)?;
    manifest.input(tree_path);
    if let Some(names) = &opts.schema {
        let expected = FeatureSchema::from_names(names).usage()?;
        if expected.fingerprint() != tree.schema().fingerprint() {
            return Err(Failure::Usage(anyhow!(
                "schema mismatch: tree {} has {}, stream declares {}",
                tree_path.display(),
                tree.schema().fingerprint_hex(),
                expected.fingerprint_hex()
            )));
        }
        manifest.set("schema", names);
    }
    let lexicon = match &opts.lexicon {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading lexicon {}", p.display()))
                .usage()?;
            manifest.input(p);
            Lexicon::from_json(&text)
                .with_context(|| format!("lexicon {}", p.display()))
                .usage()?
        }
        None => Lexicon::english(),
    };
    let realizer = TemplateRealizer::new(lexicon, opts.time).with_style(opts.style);
    let source = stream::open(input)
        .with_context(|| format!("opening {}", input.display()))
        .usage()?;
    manifest.input(input);
    manifest.set("time", format!("{:?}", opts.time).to_lowercase());
    manifest.set("follow", opts.follow.is_some());
    manifest.set("min_dwell", opts.min_dwell);

    let lines = stream::spawn_reader(source, opts.follow);
    let mut parser = TraceParser::new();
    let mut detector = EventDetector::with_min_dwell(&tree, opts.min_dwell);
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut ticks = 0usize;
    for line in lines {
        let line = line.context("reading stream").runtime()?;
        let Some(record) = parser.push_line(&line).runtime()? else {
            continue;
        };
        ticks += 1;
        let fv = tree.schema().featurize(&record.state);
        let Some(mut event) = detector
            .push(&record.state, &AnnotatedFeatures::from(fv))
            .runtime()?
        else {
            continue;
        };
        event.sentence = Some(realizer.realize(&event.concept_set).runtime()?.text);
        writeln!(out, "{}", event.to_json_line())
            .and_then(|_| out.flush())
            .runtime()?;
    }

    manifest.seed = common.seed;
    manifest.records = Some(ticks);
    let mpath = common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(tree_path, Some("explain")));
    Ok((manifest, mpath))
}

fn evaluate_cmd(tree_path: &Path, trace: &Path, common: &Common) -> Outcome {
    let mut manifest = RunManifest::new("evaluate");
    reject_config(common, "evaluate")?;
    let tree = load_tree(tree_path)?;
    let records = load_trace(trace)?;
    let samples = labelled_samples(tree.schema(), &records, trace)?;
    let e = evaluate(&tree, &samples).runtime()?;

    let mut out = String::new();
    out.push_str(&format!("records={}\n", e.records));
    out.push_str(&format!("fidelity={:.6}\n", e.fidelity));
    out.push_str(&format!("transitions={}\n", e.transitions));
    match e.transition_fidelity {
        Some(f) => out.push_str(&format!("transition_fidelity={f:.6}\n")),
        None => out.push_str("transition_fidelity=nan\n"),
    }
    for (label, r) in &e.recall {
        out.push_str(&format!("recall.{label}={r:.6}\n"));
    }
    print!("{out}");

    manifest.input(tree_path);
    manifest.input(trace);
    manifest.seed = common.seed;
    manifest.records = Some(e.records);
    let mpath = common
        .manifest
        .clone()
        .unwrap_or_else(|| manifest::default_path(tree_path, Some("evaluate")));
    Ok((manifest, mpath))
}
