//! The subcommands behind the command line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use czlab_core::corpus::{generate_many, CorpusInstance, GeneratorSpec};
use czlab_core::czd::{cuculescu, cz_decompose};
use czlab_core::field::OperatorField;
use czlab_core::grid::DyadicDomain;
use czlab_core::norms::{self, omega_distribution, Side, SpectralDistribution};
use czlab_core::operators::{self, LevelRange, SignPattern};
use czlab_core::verify::{oracle, run_check, CheckContext, CheckReport, Instance};

use crate::bundle::Bundle;
use crate::config::{Boundary, ConfigFile};
use crate::fieldio;
use crate::output::write_outputs;
use crate::runner::execute_suite;

/// Usage, config and input errors: exit status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl UsageError {
    fn from(e: impl std::fmt::Display) -> Self {
        Self(e.to_string())
    }
}

/// Whether every check passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    fn of(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Default output directory when neither the flag nor the config names one;
/// the `CZLAB_OUTPUT_DIR` variable overrides both.
pub const DEFAULT_OUTPUT_DIR: &str = "czlab-out";

pub fn run(config: &Path, out: Option<PathBuf>, seed: Option<u64>, jobs: Option<usize>) -> Result<Verdict, UsageError> {
    let suite = ConfigFile::load(config).map_err(UsageError::from)?;
    let dir = std::env::var_os("CZLAB_OUTPUT_DIR")
        .map(PathBuf::from)
        .or(out)
        .or_else(|| suite.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    let outcomes = execute_suite(&suite, jobs, seed).map_err(UsageError::from)?;
    write_outputs(&dir, &outcomes).map_err(UsageError::from)?;
    let mut pass = true;
    for o in &outcomes {
        let failed = o.reports.iter().filter(|r| !r.pass).count();
        eprintln!("{:<32} {:>6} reports {:>5} failed", o.run, o.reports.len(), failed);
        for r in o.reports.iter().filter(|r| !r.pass).take(5) {
            eprintln!("  FAIL {} {} seed {}: {}", r.check_id, r.part, r.instance.seed, describe(r));
        }
        pass &= failed == 0;
    }
    eprintln!("reports written to {}", dir.display());
    Ok(Verdict::of(pass))
}

fn describe(r: &CheckReport) -> String {
    match &r.error {
        Some(e) => e.clone(),
        None => format!("measured {:e} against {:?}", r.measured, r.bound),
    }
}

/// Input of `gen`: a grid, a generator and how many fields to draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub d: u32,
    #[serde(rename = "K")]
    pub depth: u32,
    pub n: usize,
    #[serde(default)]
    pub boundary_mode: Boundary,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub count: usize,
    pub generator: GeneratorSpec,
    /// When present, also writes the decomposition at this multiple of
    /// `‖E_0 f‖_∞` as a bundle.
    #[serde(default)]
    pub bundle_lambda: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Serialize)]
struct GenRecord<'a> {
    file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bundle: Option<String>,
    instance: &'a Instance,
}

pub fn gen(spec: &Path, out: &Path, seed: Option<u64>) -> Result<Verdict, UsageError> {
    let text = std::fs::read_to_string(spec).map_err(|e| UsageError(format!("{}: {e}", spec.display())))?;
    let spec: GenSpec = serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", spec.display())))?;
    let cfg = crate::config::RunConfig {
        name: String::new(),
        d: spec.d,
        depth: spec.depth,
        n: spec.n,
        lambda_grid: vec![1.0],
        lambda: spec.bundle_lambda.unwrap_or(1.0),
        level_range: None,
        seed: 0,
        corpus: vec![crate::config::CorpusEntry { spec: spec.generator.clone(), count: spec.count }],
        checks: vec!["cz_reconstruction".into()],
        output_dir: None,
        boundary_mode: spec.boundary_mode,
        omega_mode: czlab_core::verify::OmegaMode::Exhaustive,
        p_list: vec![2.0],
        tolerances: BTreeMap::new(),
        jobs: None,
    };
    cfg.validate().map_err(UsageError::from)?;
    let dom = cfg.domain().map_err(UsageError::from)?;
    let instances = generate_many(&spec.generator, dom, spec.n, spec.count, seed.unwrap_or(spec.seed)).map_err(UsageError::from)?;
    std::fs::create_dir_all(out).map_err(UsageError::from)?;
    let mut index = std::fs::File::create(out.join("instances.jsonl")).map_err(UsageError::from)?;
    for (i, ci) in instances.iter().enumerate() {
        let stem = format!("{}_{i:03}", ci.family);
        let file = format!("{stem}.czf");
        fieldio::write(&out.join(&file), &ci.field).map_err(UsageError::from)?;
        let inst = Instance::of(ci);
        let bundle = match spec.bundle_lambda {
            Some(factor) => {
                let lam = factor * mean_norm(&ci.field).map_err(UsageError::from)?;
                let b = cz_decompose(&ci.field, lam).map_err(UsageError::from)?;
                let name = format!("{stem}.czb");
                Bundle::from_cz(&b, inst.clone()).write(&out.join(&name)).map_err(UsageError::from)?;
                Some(name)
            }
            None => None,
        };
        let line = serde_json::to_string(&GenRecord { file, bundle, instance: &inst }).map_err(UsageError::from)?;
        writeln!(index, "{line}").map_err(UsageError::from)?;
    }
    eprintln!("{} fields written to {}", instances.len(), out.display());
    Ok(Verdict::Pass)
}

fn mean_norm(f: &OperatorField) -> czlab_core::Result<f64> {
    Ok(czlab_core::algebra::op_norm(&operators::cond_exp(f, 0)?.values()[0]))
}

/// Loaded input of `check`: a bundle, or a bare field checked at the default height.
fn load_input(path: &Path) -> Result<(CorpusInstance, CheckContext, Option<Bundle>), UsageError> {
    let bytes = std::fs::read(path).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
    let mut ctx = CheckContext::default();
    if bytes.starts_with(crate::bundle::MAGIC) {
        let b = Bundle::decode(&bytes).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let f = b.field("f").ok_or_else(|| UsageError("bundle has no field f".into()))?.clone();
        let src = &b.manifest.source;
        ctx.lambda = Some(b.manifest.lambda);
        ctx.range = src.range;
        let ci = CorpusInstance { family: src.family.clone(), seed: src.seed, field: f, params: src.params.clone() };
        Ok((ci, ctx, Some(b)))
    } else {
        let f = fieldio::decode(&bytes).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        Ok((CorpusInstance { family: "file".into(), seed: 0, field: f, params: BTreeMap::new() }, ctx, None))
    }
}

/// Runs one check on a bundle or field file. A bundle must first reproduce
/// byte for byte from its own `f` and `λ`.
pub fn check(input: &Path, check_id: &str, out: Option<&Path>) -> Result<Verdict, UsageError> {
    if czlab_core::verify::info(check_id).is_none() {
        return Err(UsageError(format!("unknown check {check_id}")));
    }
    let (ci, ctx, bundle) = load_input(input)?;
    let mut reports = Vec::new();
    if let Some(b) = &bundle {
        let inst = Instance::of(&ci).with_lambda(b.manifest.lambda);
        let rebuilt = cz_decompose(&ci.field, b.manifest.lambda)
            .map(|cz| Bundle::from_cz(&cz, b.manifest.source.clone()).encode() == b.encode());
        reports.push(match rebuilt {
            Ok(same) => CheckReport::residual("bundle_consistency", "", &inst, if same { 0.0 } else { 1.0 }, 0.0),
            Err(e) => CheckReport::failed("bundle_consistency", &inst, e.to_string()),
        });
    }
    match run_check(check_id, &ci, &ctx) {
        Ok(r) => reports.extend(r),
        Err(e) => reports.push(CheckReport::failed(check_id, &Instance::of(&ci), e.to_string())),
    }
    let mut text = String::new();
    for r in &reports {
        text.push_str(&serde_json::to_string(r).map_err(UsageError::from)?);
        text.push('\n');
    }
    emit(out, &text)?;
    Ok(Verdict::of(reports.iter().all(|r| r.pass)))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), UsageError> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(UsageError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Agreement required between the oracle and the matrix code.
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Serialize)]
struct OracleOutput {
    op: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stopped: Option<Vec<Vec<bool>>>,
    /// Largest difference from the matrix implementation, when it has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    max_diff: Option<f64>,
}

fn parse_args(op: &str) -> (&str, Vec<&str>) {
    let mut it = op.split(':');
    let name = it.next().unwrap_or("");
    (name, it.collect())
}

fn num<T: std::str::FromStr>(op: &str, args: &[&str], i: usize) -> Result<T, UsageError> {
    args.get(i).and_then(|a| a.parse().ok()).ok_or_else(|| UsageError(format!("operation {op}: argument {} missing or malformed", i + 1)))
}

fn levels(op: &str, args: &[&str], dom: &DyadicDomain) -> Result<LevelRange, UsageError> {
    if args.is_empty() {
        return LevelRange::full(dom).map_err(UsageError::from);
    }
    LevelRange::new(dom, num(op, args, 0)?, num(op, args, 1)?).map_err(UsageError::from)
}

fn diff(a: &[f64], f: &OperatorField) -> f64 {
    let fine = f.finest();
    a.iter().zip(fine.values()).fold(0.0, |m, (x, v)| m.max((x - v[(0, 0)].re).abs()).max(v[(0, 0)].im.abs()))
}

/// Evaluates a scalar oracle operation on a `1 x 1` field and compares it
/// with the matrix implementation where there is one.
///
/// Operations: `cond_exp:k`, `ball_avg:k`, `tk:k`, `mkn:k:n`,
/// `square_function[:lo:hi]`, `lp_norm:p`, `distribution:λ`, `weak_norm`,
/// `weak_rademacher[:lo:hi]`, `stopping_times:λ`, `hl_maximal[:lo:hi]`.
pub fn oracle_op(field: &Path, op: &str, out: Option<&Path>) -> Result<Verdict, UsageError> {
    let f = fieldio::read(field).map_err(|e| UsageError(format!("{}: {e}", field.display())))?;
    let v = oracle::scalar_values(&f).map_err(UsageError::from)?;
    let dom = *f.domain();
    let g = oracle::ScalarGrid::of(&dom);
    let fine = f.finest();
    let (name, args) = parse_args(op);
    let mut o = OracleOutput { op: op.into(), values: None, value: None, stopped: None, max_diff: None };
    let e = UsageError::from;
    match name {
        "cond_exp" | "ball_avg" | "tk" => {
            let k: u32 = num(op, &args, 0)?;
            let (vals, m) = match name {
                "cond_exp" => (oracle::cond_exp(&g, &v, k), operators::cond_exp(&fine, k).map_err(e)?),
                "ball_avg" => (oracle::ball_avg(&g, &v, k), operators::ball_avg(&fine, k).map_err(e)?),
                _ => (oracle::tk(&g, &v, k), operators::tk(&fine, k).map_err(e)?),
            };
            o.max_diff = Some(diff(&vals, &m));
            o.values = Some(vals);
        }
        "mkn" => {
            let (k, n): (u32, u32) = (num(op, &args, 0)?, num(op, &args, 1)?);
            let m = operators::mkn(&fine, k, n).map_err(e)?;
            let vals = oracle::mkn(&g, &v, k, n);
            o.max_diff = Some(diff(&vals, &m));
            o.values = Some(vals);
        }
        "square_function" => {
            let r = levels(op, &args, &dom)?;
            let ks: Vec<u32> = r.levels().collect();
            let vals = oracle::square_function(&g, &v, &ks);
            let fam = operators::t_family(&fine, &r).map_err(e)?;
            o.max_diff = Some(diff(&vals, &norms::square_function(&fam, Side::Col).map_err(e)?));
            o.values = Some(vals);
        }
        "lp_norm" => {
            let p: f64 = num(op, &args, 0)?;
            let x = oracle::lp_norm(&g, &v, p);
            o.max_diff = Some((x - norms::lp_norm(&fine, p).map_err(e)?).abs());
            o.value = Some(x);
        }
        "distribution" => {
            let lam: f64 = num(op, &args, 0)?;
            let x = oracle::distribution(&g, &v, lam);
            o.max_diff = Some((x - norms::distribution(&fine, lam)).abs());
            o.value = Some(x);
        }
        "weak_norm" => {
            let x = oracle::weak_norm(&g, &v);
            o.max_diff = Some((x - SpectralDistribution::of(&fine).weak_norm()).abs());
            o.value = Some(x);
        }
        "weak_rademacher" => {
            let r = levels(op, &args, &dom)?;
            let ks: Vec<u32> = r.levels().collect();
            let x = oracle::weak_norm_rademacher(&g, &v, &ks);
            let fam = operators::t_family(&fine, &r).map_err(e)?;
            let signs = SignPattern::enumerate(ks.len()).map_err(e)?;
            o.max_diff = Some((x - omega_distribution(&fam, &signs).map_err(e)?.weak_norm()).abs());
            o.value = Some(x);
        }
        "stopping_times" => {
            let lam: f64 = num(op, &args, 0)?;
            let st = oracle::stopping_times(&g, &v, lam);
            let cu = cuculescu(&fine, lam).map_err(e)?;
            let mut worst: f64 = 0.0;
            for (k, alive) in st.iter().enumerate() {
                let q = cu.q[k].field().refine(dom.depth()).map_err(e)?;
                for (x, &a) in alive.iter().enumerate() {
                    worst = worst.max((q.at(x)[(0, 0)].re - if a { 1.0 } else { 0.0 }).abs());
                }
            }
            o.max_diff = Some(worst);
            o.stopped = Some(st);
        }
        "hl_maximal" => {
            let r = levels(op, &args, &dom)?;
            let ks: Vec<u32> = r.levels().collect();
            o.values = Some(oracle::hl_maximal(&g, &v, &ks));
        }
        _ => return Err(UsageError(format!("unknown oracle operation {op}"))),
    }
    emit(out, &(serde_json::to_string(&o).map_err(UsageError::from)? + "\n"))?;
    Ok(Verdict::of(o.max_diff.is_none_or(|d| d <= ORACLE_TOL)))
}
