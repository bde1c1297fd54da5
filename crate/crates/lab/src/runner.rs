//! Executes runs: corpus generation, then every (instance, check) pair on a
//! worker pool. Results come back in job order whatever the pool size.

use rayon::prelude::*;

use czlab_core::corpus::{generate_many, instance_seed, CorpusInstance};
use czlab_core::verify::{run_check, CheckReport, Instance};

use crate::config::{ConfigError, RunConfig, Suite};

/// Reports of one run, in (corpus entry, instance, check) order.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run: String,
    pub reports: Vec<CheckReport>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(|r| r.pass)
    }
}

/// The instances of a run. Entry `i` draws from seed `instance_seed(seed, i)`.
pub fn corpus(run: &RunConfig) -> Result<Vec<CorpusInstance>, ConfigError> {
    let dom = run.domain()?;
    let per_entry: Vec<_> = run
        .corpus
        .par_iter()
        .enumerate()
        .map(|(i, e)| generate_many(&e.spec, dom, run.n, e.count, instance_seed(run.seed, i as u64)))
        .collect();
    let mut out = Vec::new();
    for r in per_entry {
        out.extend(r.map_err(|e| ConfigError::Invalid { run: run.label(), message: e.to_string() })?);
    }
    Ok(out)
}

pub fn execute(run: &RunConfig) -> Result<RunOutcome, ConfigError> {
    let instances = corpus(run)?;
    let ctx = run.context();
    let jobs: Vec<(&CorpusInstance, &str)> =
        instances.iter().flat_map(|ci| run.checks.iter().map(move |c| (ci, c.as_str()))).collect();
    let reports: Vec<Vec<CheckReport>> = jobs
        .par_iter()
        .map(|&(ci, id)| {
            let reports = match run_check(id, ci, &ctx) {
                Ok(r) => r,
                Err(e) => vec![CheckReport::failed(id, &Instance::of(ci), e.to_string())],
            };
            match run.tolerances.get(id) {
                Some(&t) => reports.into_iter().map(|r| r.with_tolerance(t)).collect(),
                None => reports,
            }
        })
        .collect();
    Ok(RunOutcome { run: run.label(), reports: reports.into_iter().flatten().collect() })
}

/// Runs every run of the suite on a pool of `jobs` workers (all cores when
/// absent); a seed override replaces the seed of every run.
pub fn execute_suite(suite: &Suite, jobs: Option<usize>, seed: Option<u64>) -> Result<Vec<RunOutcome>, ConfigError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.or(suite.jobs).unwrap_or(0))
        .build()
        .map_err(|e| ConfigError::Invalid { run: String::new(), message: format!("worker pool: {e}") })?;
    pool.install(|| {
        suite
            .runs
            .iter()
            .map(|r| match seed {
                Some(s) => execute(&RunConfig { seed: s, ..r.clone() }),
                None => execute(r),
            })
            .collect()
    })
}
