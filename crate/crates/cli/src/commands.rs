use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Map, Value};

use sepkit::bounds::{self, BoundKind, BoundResult, LogConcaveConstants, LogConcavity, SmacFamily};
use sepkit::corrector::{fit_cascade, fit_corrector, ErrorFilter, Filter, LegacyDecision};
use sepkit::io::{self, LabelColumn, ReportFormat};
use sepkit::neurosim::{run_association_experiment, AssociationConfig};
use sepkit::preprocess::{apply_whitening, effective_dimension, fit_whitening, fit_whitening_components, project_sphere};
use sepkit::separability::{analyze, AnalyzeOptions, SeparabilityTable};
use sepkit::verify::{verify, VerifySpec};
use sepkit::{DistributionSpec, Error, PointCloud, Seed};

#[derive(Debug, Parser)]
#[command(name = "sepkit", version, about = "Fisher separability, stochastic separation bounds, correctors and neuron simulation")]
pub struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Seed for every random draw; generated and printed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report format.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Shorthand for `--format json`.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw points from a distribution family.
    Sample(SampleArgs),
    /// Fit and apply PCA whitening.
    Whiten(WhitenArgs),
    /// Fisher separability statistics for a point cloud.
    Analyze(AnalyzeArgs),
    /// Evaluate a closed-form bound.
    Bound(BoundArgs),
    /// Compare a bound with a Monte Carlo frequency.
    Verify(VerifyArgs),
    /// Fit or apply an error corrector.
    #[command(subcommand)]
    Corrector(CorrectorCommand),
    /// Learning by association with a plastic threshold neuron.
    Neurosim(NeurosimArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Dist {
    Ball,
    Sphere,
    Cube,
    Gaussian,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_enum)]
    dist: Dist,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    count: usize,
    /// Cube side length.
    #[arg(long, default_value_t = 1.0)]
    side: f64,
    /// Write column names c0..c{n-1}.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// The input file starts with a header row.
    #[arg(long)]
    header: bool,
    /// Label column: zero-based index, header name, or `last`.
    #[arg(long)]
    label_column: Option<String>,
}

#[derive(Debug, Args)]
struct WhitenArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Largest admissible ratio of retained eigenvalues.
    #[arg(long, default_value_t = sepkit::preprocess::DEFAULT_KAPPA_MAX, conflicts_with = "components")]
    kappa: f64,
    /// Keep a fixed number of principal components instead.
    #[arg(long)]
    components: Option<usize>,
    /// Project the whitened points on the unit sphere.
    #[arg(long)]
    sphere: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to store the fitted model.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated thresholds in (0, 1).
    #[arg(long, value_delimiter = ',', required = true)]
    alphas: Vec<f64>,
    /// File with one class label per point.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Also analyze the points projected on the unit sphere.
    #[arg(long)]
    sphere: bool,
    /// Name of the data set in block titles.
    #[arg(long, default_value = "data")]
    title: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BoundArgs {
    /// prop1, theorem1, ball-single, ball-pairs, ball-angles, ball-capacity-single,
    /// ball-capacity-pairs, cube-single, cube-pairs, sphere, sphere-exact,
    /// cluster-rejection, quasiortho-miss, robust-capacity, logconcave,
    /// strongly-logconcave, gaussian-logconcave, smac, effective-dimension
    #[arg(long)]
    formula: String,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "cardY", alias = "card-y")]
    card_y: Option<f64>,
    #[arg(long = "M", alias = "m")]
    m: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Coordinate standard deviations; one value is repeated n times.
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long = "C", alias = "c")]
    c: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    /// Growth base γ or η of the log-concave estimates.
    #[arg(long)]
    base: Option<f64>,
    /// SmAC family: ball, perturbed or cube.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Mean fraction of inseparable points, for effective-dimension.
    #[arg(long = "p-bar")]
    p_bar: Option<f64>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// prop1, ball-single, ball-pairs, ball-angles, cube-single, cube-pairs,
    /// cluster-rejection, quasiortho-miss, selective-neuron
    #[arg(long)]
    formula: String,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "cardY", alias = "card-y")]
    card_y: Option<usize>,
    #[arg(long = "M", alias = "m")]
    m: Option<usize>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum CorrectorCommand {
    /// Fit a corrector (or a cascade with --clusters > 1).
    Fit(FitArgs),
    /// Run legacy decisions through a fitted corrector.
    Apply(ApplyArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Feature vectors of correctly handled inputs.
    #[arg(long)]
    correct: PathBuf,
    /// Feature vectors of the legacy system's errors.
    #[arg(long)]
    errors: PathBuf,
    /// Principal components kept before whitening.
    #[arg(long)]
    pca: usize,
    /// Split the errors into this many clusters, one corrector each.
    #[arg(long, default_value_t = 1)]
    clusters: usize,
    /// Input files start with a header row.
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Rows of features followed by the legacy score.
    #[arg(long = "in")]
    input: PathBuf,
    /// Scores above this are positive decisions.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    legacy_threshold: f64,
    #[arg(long)]
    header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct NeurosimArgs {
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    background: usize,
    /// Relevant stimuli, the known one included.
    #[arg(long, default_value_t = 2)]
    relevant: usize,
    #[arg(long, default_value_t = 0.2)]
    theta: f64,
    #[arg(long, default_value_t = 0.6)]
    theta0: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    window: f64,
    #[arg(long, default_value_t = 0.02)]
    dt: f64,
    #[arg(long, default_value_t = 2.0)]
    pre: f64,
    #[arg(long, default_value_t = 10.0)]
    epoch: f64,
    #[arg(long, default_value_t = 2.0)]
    period: f64,
    #[arg(long, default_value_t = 2.0)]
    post: f64,
    /// Keep every k-th step in the trace.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Plot-ready trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure as reported on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub exit: u8,
    pub location: Option<(u64, Option<usize>)>,
    pub path: Option<String>,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: "usage".into(),
            message: message.into(),
            exit: 2,
            location: None,
            path: None,
        }
    }

    fn missing(flag: &str, formula: &str) -> Self {
        Self::usage(format!("--{flag} is required for {formula}"))
    }

    fn at(mut self, path: &Path) -> Self {
        self.path = Some(path.display().to_string());
        self
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            code: e.code().to_string(),
            message: e.to_string(),
            exit: e.exit_code() as u8,
            location: e.location(),
            path: None,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Sample(a) => sample(g, a),
        Command::Whiten(a) => whiten(g, a),
        Command::Analyze(a) => analyze_cmd(g, a),
        Command::Bound(a) => bound(g, a),
        Command::Verify(a) => verify_cmd(g, a),
        Command::Corrector(CorrectorCommand::Fit(a)) => corrector_fit(g, a),
        Command::Corrector(CorrectorCommand::Apply(a)) => corrector_apply(a),
        Command::Neurosim(a) => neurosim(g, a),
    }
}

impl Global {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            let s: u64 = rand::random();
            eprintln!("{}", json!({ "seed": s }));
            s
        })
    }

    fn format(&self, default: Format) -> Format {
        if self.json {
            Format::Json
        } else {
            self.format.unwrap_or(default)
        }
    }

    fn report_format(&self) -> ReportFormat {
        match self.format(Format::Json) {
            Format::Csv => ReportFormat::Csv(Some(io::CSV_DIGITS)),
            _ => ReportFormat::Json,
        }
    }
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| CliError::from(e).at(p)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn read_cloud(input: &InputArgs) -> CliResult<PointCloud<f64>> {
    let label = input.label_column.as_deref().map(str::parse::<LabelColumn>).transpose()?;
    io::ingest_csv(&input.input, input.header, label.as_ref()).map_err(|e| CliError::from(e).at(&input.input))
}

fn read_plain(path: &Path, header: bool) -> CliResult<PointCloud<f64>> {
    io::ingest_csv(path, header, None).map_err(|e| CliError::from(e).at(path))
}

fn cloud_bytes(cloud: &PointCloud<f64>, header: bool) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    io::write_csv(cloud, &mut buf, header)?;
    Ok(buf)
}

fn sample(g: &Global, a: &SampleArgs) -> CliResult<()> {
    let seed = g.seed();
    let spec = match a.dist {
        Dist::Ball => DistributionSpec::UnitBall { dim: a.n },
        Dist::Sphere => DistributionSpec::UnitSphere { dim: a.n },
        Dist::Cube => DistributionSpec::ProductCube { dim: a.n, side: a.side },
        Dist::Gaussian => DistributionSpec::IsotropicGaussian { dim: a.n },
    };
    let cloud: PointCloud<f64> = spec.sample(a.count, Seed(seed))?;
    write_output(a.out.as_deref(), &cloud_bytes(&cloud, a.header)?)
}

fn whiten(g: &Global, a: &WhitenArgs) -> CliResult<()> {
    let data = read_cloud(&a.input)?;
    let model = match a.components {
        Some(k) => fit_whitening_components(&data, k)?,
        None => fit_whitening(&data, a.kappa)?,
    };
    let mut white = apply_whitening(&model, &data)?;
    if a.sphere {
        white = project_sphere(&white)?;
    }
    if let Some(path) = &a.model {
        fs::write(path, model.to_json()? + "\n").map_err(|e| CliError::from(e).at(path))?;
    }
    write_output(a.out.as_deref(), &cloud_bytes(&white, a.input.header)?)?;
    if a.out.is_some() {
        let summary = json!({
            "input_dim": model.input_dim(),
            "retained": model.retained(),
            "condition_number": model.condition_number,
            "points": white.len(),
        });
        write_output(None, &io::emit_report(&summary, g.report_format())?)?;
    }
    Ok(())
}

fn analyze_cmd(g: &Global, a: &AnalyzeArgs) -> CliResult<()> {
    let mut data = read_cloud(&a.input)?;
    if let Some(path) = &a.labels {
        let file = fs::File::open(path).map_err(|e| CliError::from(e).at(path))?;
        let labels = io::read_labels(file, false).map_err(|e| CliError::from(e).at(path))?;
        data = data.with_labels(labels).map_err(|e| CliError::from(e).at(path))?;
    }
    let options = AnalyzeOptions {
        class_aware: data.labels().is_some(),
        ..Default::default()
    };
    let mut table = SeparabilityTable::new(data.len(), data.dim(), &a.alphas);
    table.push_reports(&a.title, &analyze(&data, &a.alphas, options)?);
    if a.sphere {
        let projected = project_sphere(&data)?;
        table.push_reports(
            &format!("{} on the unit sphere", a.title),
            &analyze(&projected, &a.alphas, options)?,
        );
    }
    let bytes = match g.report_format() {
        ReportFormat::Json => io::to_canonical_json(&table)?,
        csv => io::emit_table(&table, csv)?,
    };
    write_output(a.out.as_deref(), &bytes)
}

fn need<T: Copy>(v: Option<T>, flag: &str, formula: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::missing(flag, formula))
}

fn bound(g: &Global, a: &BoundArgs) -> CliResult<()> {
    let f = a.formula.as_str();
    let n = || need(a.n, "n", f);
    let alpha = || need(a.alpha, "alpha", f);
    let m = || need(a.m, "M", f);
    let r = || need(a.r, "r", f);
    let psi = || need(a.psi, "psi", f);
    let result: Value = match f {
        "prop1" => json!(bounds::prop1_failure(need(a.card_y, "cardY", f)?, alpha()?, n()?)?),
        "theorem1" => json!(bounds::theorem1_failure(
            need(a.c, "C", f)?,
            r()?,
            need(a.b, "b", f)?,
            alpha()?,
            n()?
        )?),
        "ball-single" | "ball-pairs" | "ball-angles" => {
            let b = bounds::ball_bounds(m()?, n()?, r()?)?;
            json!(match f {
                "ball-single" => b.single,
                "ball-pairs" => b.pairs,
                _ => b.angles,
            })
        }
        "ball-capacity-single" | "ball-capacity-pairs" => {
            let b = bounds::ball_capacity(r()?, n()?, need(a.theta, "theta", f)?)?;
            json!(if f == "ball-capacity-single" { b.single } else { b.pairs })
        }
        "cube-single" | "cube-pairs" => {
            let sigma = match (a.sigma.as_slice(), a.n) {
                ([], _) => return Err(CliError::missing("sigma", f)),
                ([s], Some(n)) => vec![*s; n as usize],
                (list, _) => list.to_vec(),
            };
            let b = bounds::cube_bounds(&sigma, need(a.delta, "delta", f)?, m()?)?;
            json!(if f == "cube-single" { b.single } else { b.pairs })
        }
        "sphere" => {
            let (alpha, n) = (alpha()?, n()?);
            json!(BoundResult::new("sphere", BoundKind::Estimate, bounds::sphere_p(alpha, n)?))
        }
        "sphere-exact" => {
            let (alpha, n) = (alpha()?, n()?);
            json!(BoundResult::new("sphere-exact", BoundKind::Estimate, bounds::exact_cap_oracle(alpha, n)?))
        }
        "cluster-rejection" => json!(bounds::cluster_rejection(need(a.h, "h", f)?, need(a.rho, "rho", f)?, n()?)?),
        "quasiortho-miss" => json!(bounds::quasiortho_miss(n()?, need(a.k, "k", f)?)?),
        "robust-capacity" => json!(bounds::robust_capacity(alpha()?, need(a.xi, "xi", f)?, n()?, psi()?)?),
        "logconcave" | "strongly-logconcave" | "gaussian-logconcave" => {
            let family = match f {
                "logconcave" => LogConcavity::General,
                "strongly-logconcave" => LogConcavity::Strong,
                _ => LogConcavity::Gaussian,
            };
            let constants = LogConcaveConstants {
                a: need(a.a, "a", f)?,
                base: need(a.base, "base", f)?,
                c: a.c,
            };
            let psi = if family == LogConcavity::General { a.psi.unwrap_or(0.5) } else { psi()? };
            json!(bounds::logconcave_capacity(constants, n()?, family, psi)?)
        }
        "smac" => {
            let family = match a.family.as_deref() {
                Some("ball") => SmacFamily::Ball,
                Some("perturbed") => SmacFamily::Perturbed {
                    epsilon: need(a.epsilon, "epsilon", f)?,
                },
                Some("cube") => SmacFamily::Cube,
                Some(other) => {
                    return Err(CliError::usage(format!("unknown family {other:?}")))
                }
                None => return Err(CliError::missing("family", f)),
            };
            json!(bounds::smac_params(family)?)
        }
        "effective-dimension" => {
            let n_eff = effective_dimension(need(a.p_bar, "p-bar", f)?, alpha()?)?;
            json!({ "formula_id": "effective-dimension", "value": n_eff })
        }
        other => {
            return Err(CliError::usage(format!("unknown formula {other:?}")));
        }
    };
    let bytes = match g.format(Format::Text) {
        Format::Text => {
            let mut text = match (&result["value"], &result["c"]) {
                (Value::Number(v), _) => io::format_significant(v.as_f64().unwrap_or(f64::NAN), io::CSV_DIGITS),
                (_, Value::Number(c)) => format!(
                    "C={} r={}",
                    io::format_significant(c.as_f64().unwrap_or(f64::NAN), io::CSV_DIGITS),
                    io::format_significant(result["r"].as_f64().unwrap_or(f64::NAN), io::CSV_DIGITS)
                ),
                _ => result.to_string(),
            };
            if result["vacuous"] == Value::Bool(true) {
                text.push_str(" (vacuous)");
            }
            text.push('\n');
            text.into_bytes()
        }
        Format::Json => io::to_canonical_json(&result)?,
        Format::Csv => io::emit_report(&result, ReportFormat::Csv(Some(io::CSV_DIGITS)))?,
    };
    write_output(None, &bytes)
}

fn verify_cmd(g: &Global, a: &VerifyArgs) -> CliResult<()> {
    let mut fields = Map::new();
    fields.insert("formula".into(), json!(a.formula));
    let numeric: [(&str, Option<Value>); 9] = [
        ("n", a.n.map(Value::from)),
        ("alpha", a.alpha.map(Value::from)),
        ("card_y", a.card_y.map(Value::from)),
        ("m", a.m.map(Value::from)),
        ("r", a.r.map(Value::from)),
        ("delta", a.delta.map(Value::from)),
        ("h", a.h.map(Value::from)),
        ("rho", a.rho.map(Value::from)),
        ("k", a.k.map(Value::from)),
    ];
    for (k, v) in numeric {
        if let Some(v) = v {
            fields.insert(k.into(), v);
        }
    }
    let spec: VerifySpec = serde_json::from_value(Value::Object(fields))
        .map_err(|e| CliError::usage(format!("{}: {e}", a.formula)))?;
    let seed = g.seed();
    let report = verify(&spec, a.trials, Seed(seed))?;
    write_output(None, &io::emit_report(&report, g.report_format())?)
}

fn corrector_fit(g: &Global, a: &FitArgs) -> CliResult<()> {
    let correct = read_plain(&a.correct, a.header)?;
    let errors = read_plain(&a.errors, a.header)?;
    let filter = if a.clusters > 1 {
        let seed = g.seed();
        Filter::Cascade(fit_cascade(&correct, &errors, a.clusters, a.pca, Seed(seed))?)
    } else {
        Filter::Single(fit_corrector(&correct, &errors, a.pca)?)
    };
    write_output(a.out.as_deref(), (filter.to_json()? + "\n").as_bytes())
}

fn corrector_apply(a: &ApplyArgs) -> CliResult<()> {
    let text = fs::read_to_string(&a.model).map_err(|e| CliError::from(e).at(&a.model))?;
    let filter: Filter<f64> = Filter::from_json(&text).map_err(|e| CliError::from(e).at(&a.model))?;
    let rows = read_plain(&a.input, a.header)?;
    let dim = filter.input_dim();
    if rows.dim() != dim + 1 {
        return Err(CliError::from(Error::DimensionMismatch {
            expected: dim + 1,
            found: rows.dim(),
        })
        .at(&a.input));
    }
    let mut out = Vec::new();
    {
        let mut wtr = std::io::BufWriter::new(&mut out);
        if a.header {
            let mut names: Vec<String> = (0..dim).map(|i| format!("c{i}")).collect();
            names.extend(["score", "corrected_score", "positive", "suppressed"].map(String::from));
            writeln!(wtr, "{}", names.join(","))?;
        }
        for row in rows.rows() {
            let feature = DVector::from_column_slice(&row[..dim]);
            let decision = LegacyDecision::new(feature, row[dim], a.legacy_threshold);
            let corrected = filter.apply(&decision, a.legacy_threshold)?;
            let cells: Vec<String> = row.iter().map(f64::to_string).collect();
            writeln!(
                wtr,
                "{},{},{},{}",
                cells.join(","),
                corrected.score,
                u8::from(corrected.decided_positive),
                u8::from(decision.decided_positive && !corrected.decided_positive)
            )?;
        }
    }
    write_output(a.out.as_deref(), &out)
}

fn neurosim(g: &Global, a: &NeurosimArgs) -> CliResult<()> {
    let seed = g.seed();
    let config = AssociationConfig {
        n: a.n,
        background: a.background,
        relevant: a.relevant,
        theta: a.theta,
        theta0: a.theta0,
        alpha_rate: a.alpha_rate,
        window: a.window,
        pre: a.pre,
        epoch: a.epoch,
        period: a.period,
        post: a.post,
        dt: a.dt,
        record_stride: a.stride,
        seed,
    };
    let run = run_association_experiment(&config)?;
    if let Some(path) = &a.trace {
        let bytes = io::trace_csv(&run.trace, None)?;
        fs::write(path, bytes).map_err(|e| CliError::from(e).at(path))?;
    }
    let report = json!({ "config": config, "outcome": run.outcome, "seed": seed });
    write_output(a.out.as_deref(), &io::emit_report(&report, g.report_format())?)
}
