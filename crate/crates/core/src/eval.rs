//! Pool construction for the robustness settings, routing-accuracy
//! evaluation over repeated runs, and result tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::{CandidateBank, CandidatePool, PoolError, ValidationError};
use crate::router::{RouteRequest, Router};
use crate::supervision::{DatasetRecord, RoutingInstance};
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSetting {
    Clean,
    Multi,
    PlusMutation,
    PlusExternal,
}

impl PoolSetting {
    pub const ALL: [PoolSetting; 4] = [
        PoolSetting::Clean,
        PoolSetting::Multi,
        PoolSetting::PlusMutation,
        PoolSetting::PlusExternal,
    ];

    /// Column header used in reports.
    pub fn label(self) -> &'static str {
        match self {
            PoolSetting::Clean => "Clean",
            PoolSetting::Multi => "Multi",
            PoolSetting::PlusMutation => "+Mutation",
            PoolSetting::PlusExternal => "+External",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoolSetting::Clean => "clean",
            PoolSetting::Multi => "multi",
            PoolSetting::PlusMutation => "plus_mutation",
            PoolSetting::PlusExternal => "plus_external",
        }
    }
}

impl fmt::Display for PoolSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoolSetting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s || p.label() == s)
            .ok_or_else(|| format!("unknown pool setting `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pool setting {setting} needs {parameter}")]
    MissingParameter {
        setting: PoolSetting,
        parameter: &'static str,
    },
    #[error("label `{label}` was evicted from the {setting} pool")]
    LabelEvicted { label: String, setting: PoolSetting },
    #[error("number of runs must be at least 1")]
    BadRunCount,
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error("catalogs conflict: {0}")]
    Catalog(#[from] ValidationError),
    #[error("dataset record {index}: {message}")]
    Record { index: usize, message: String },
}

/// Candidate sources the wider settings draw on.
#[derive(Debug, Clone, Default)]
pub struct PoolSources {
    /// Every server's bank; their union forms the multi-server pool.
    pub server_banks: Vec<Arc<CandidateBank>>,
    /// Mutants added as non-callable distractors.
    pub mutants: Option<Arc<CandidateBank>>,
    pub external: Option<Arc<CandidateBank>>,
}

impl PoolSources {
    fn check(&self, setting: PoolSetting) -> Result<(), EvalError> {
        let missing = |parameter| Err(EvalError::MissingParameter { setting, parameter });
        if setting >= PoolSetting::Multi && self.server_banks.is_empty() {
            return missing("server banks");
        }
        if setting >= PoolSetting::PlusMutation && self.mutants.is_none() {
            return missing("a mutation source");
        }
        if setting >= PoolSetting::PlusExternal && self.external.is_none() {
            return missing("an external bank");
        }
        Ok(())
    }
}

/// Builds pools for a setting, merging each base bank with the sources once.
pub struct PoolBuilder {
    sources: PoolSources,
    catalogs: Mutex<HashMap<(usize, PoolSetting), Arc<CandidateBank>>>,
}

impl PoolBuilder {
    pub fn new(sources: PoolSources) -> Self {
        Self {
            sources,
            catalogs: Mutex::new(HashMap::new()),
        }
    }

    pub fn sources(&self) -> &PoolSources {
        &self.sources
    }

    fn catalog(&self, base: &Arc<CandidateBank>, setting: PoolSetting) -> Result<Arc<CandidateBank>, EvalError> {
        let key = (Arc::as_ptr(base) as usize, setting);
        if let Some(c) = self.catalogs.lock().unwrap().get(&key) {
            return Ok(c.clone());
        }
        let mut bank = (**base).clone();
        for b in &self.sources.server_banks {
            bank = bank.merged(b)?;
        }
        if setting >= PoolSetting::PlusMutation {
            if let Some(m) = &self.sources.mutants {
                bank = bank.merged(m)?;
            }
        }
        if setting >= PoolSetting::PlusExternal {
            if let Some(e) = &self.sources.external {
                bank = bank.merged(e)?;
            }
        }
        let bank = Arc::new(bank);
        self.catalogs.lock().unwrap().insert(key, bank.clone());
        Ok(bank)
    }

    /// Clean keeps `base`; each wider setting adds to the previous one.
    pub fn build(&self, base: &CandidatePool, setting: PoolSetting) -> Result<CandidatePool, EvalError> {
        self.sources.check(setting)?;
        if setting == PoolSetting::Clean {
            let mut pool = base.clone();
            pool.setting = PoolSetting::Clean;
            return Ok(pool);
        }
        let catalog = self.catalog(base.bank(), setting)?;
        let names = |b: &CandidateBank| b.names().map(str::to_string).collect::<Vec<_>>();
        let servers: Vec<String> = self.sources.server_banks.iter().flat_map(|b| names(b)).collect();
        let mut pool = base.extended(catalog.clone(), servers, false, PoolSetting::Multi)?;
        if setting >= PoolSetting::PlusMutation {
            let mutants = self.sources.mutants.as_deref().map(names).unwrap_or_default();
            pool = pool.extended(catalog.clone(), mutants, true, PoolSetting::PlusMutation)?;
        }
        if setting >= PoolSetting::PlusExternal {
            let external = self.sources.external.as_deref().map(names).unwrap_or_default();
            pool = pool.extended(catalog, external, false, PoolSetting::PlusExternal)?;
        }
        Ok(pool)
    }

    /// Builds the pool and checks that `label` survived.
    pub fn build_for(
        &self,
        base: &CandidatePool,
        label: &str,
        setting: PoolSetting,
    ) -> Result<CandidatePool, EvalError> {
        let pool = self.build(base, setting)?;
        if !pool.contains(label) {
            return Err(EvalError::LabelEvicted {
                label: label.to_string(),
                setting,
            });
        }
        Ok(pool)
    }
}

pub fn build_pool(
    base: &CandidatePool,
    setting: PoolSetting,
    sources: &PoolSources,
) -> Result<CandidatePool, EvalError> {
    PoolBuilder::new(sources.clone()).build(base, setting)
}

/// Rebuilds routing instances from dataset records against `bank`.
pub fn instances_from_records(
    records: &[DatasetRecord],
    bank: Arc<CandidateBank>,
) -> Result<Vec<RoutingInstance>, EvalError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            r.to_instance(bank.clone()).map_err(|e| EvalError::Record {
                index,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_run: Vec<f64>,
    pub avg_at_k: f64,
    pub per_group: BTreeMap<String, f64>,
    pub n_instances: usize,
    pub abstentions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub setting: PoolSetting,
    pub run: usize,
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    pub abstained: usize,
    pub accuracy: f64,
    pub mean_pool_size: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub runs: Vec<RunRecord>,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Runs `k` independent passes. Abstentions count as wrong.
pub fn evaluate(
    router: &dyn Router,
    instances: &[RoutingInstance],
    setting: PoolSetting,
    pools: &PoolBuilder,
    k: usize,
    seed: u64,
) -> Result<Evaluation, EvalError> {
    if k == 0 {
        return Err(EvalError::BadRunCount);
    }
    let built: Vec<CandidatePool> = instances
        .par_iter()
        .map(|inst| pools.build_for(&inst.pool, &inst.label, setting))
        .collect::<Result<_, _>>()?;
    let mean_pool_size = mean(&built.iter().map(|p| p.len() as f64).collect::<Vec<_>>());
    let mut per_run = Vec::with_capacity(k);
    let mut runs = Vec::with_capacity(k);
    let mut group_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut abstentions = 0;
    for run in 0..k {
        let run_seed = derive_seed(seed, &format!("run/{run}"));
        let outcomes: Vec<(bool, bool)> = instances
            .par_iter()
            .zip(built.par_iter())
            .enumerate()
            .map(|(i, (inst, pool))| {
                let decision = router.route(&RouteRequest {
                    query: &inst.query,
                    history: &inst.history,
                    pool,
                    label: Some(&inst.label),
                    seed: derive_seed(run_seed, &format!("instance/{i}")),
                });
                (decision.is_correct(&inst.label), decision.abstained)
            })
            .collect();
        let correct = outcomes.iter().filter(|(c, _)| *c).count();
        let abstained = outcomes.iter().filter(|(_, a)| *a).count();
        abstentions += abstained;
        for (inst, (c, _)) in instances.iter().zip(&outcomes) {
            let entry = group_hits.entry(inst.group.clone()).or_default();
            entry.0 += usize::from(*c);
            entry.1 += 1;
        }
        let accuracy = if instances.is_empty() {
            0.0
        } else {
            correct as f64 / instances.len() as f64
        };
        per_run.push(accuracy);
        runs.push(RunRecord {
            method: router.name(),
            setting,
            run,
            seed: run_seed,
            correct,
            total: instances.len(),
            abstained,
            accuracy,
            mean_pool_size,
        });
    }
    let metrics = Metrics {
        avg_at_k: mean(&per_run),
        per_run,
        per_group: group_hits
            .into_iter()
            .map(|(g, (c, n))| (g, c as f64 / n as f64))
            .collect(),
        n_instances: instances.len(),
        abstentions,
    };
    Ok(Evaluation { metrics, runs })
}

pub fn render_runs(runs: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in runs {
        out.push_str(&serde_json::to_string(r).expect("run records serialize"));
        out.push('\n');
    }
    out
}

/// Methods as rows, columns in the order given; absent cells show "-".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

pub const MISSING_CELL: &str = "-";

impl Report {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    /// One column per setting present, in Clean, Multi, +Mutation, +External order.
    pub fn by_setting(entries: &[(String, PoolSetting, f64)]) -> Self {
        let present: Vec<PoolSetting> = PoolSetting::ALL
            .into_iter()
            .filter(|s| entries.iter().any(|(_, es, _)| es == s))
            .collect();
        let mut report = Self::new(present.iter().map(|s| s.label().to_string()).collect());
        for (method, setting, value) in entries {
            let col = present.iter().position(|s| s == setting).expect("setting is present");
            report.set(method, col, *value);
        }
        report
    }

    /// One column per group, sorted by name.
    pub fn by_group(entries: &[(String, &Metrics)]) -> Self {
        let groups: Vec<String> = entries
            .iter()
            .flat_map(|(_, m)| m.per_group.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut report = Self::new(groups.clone());
        for (method, metrics) in entries {
            for (g, v) in &metrics.per_group {
                let col = groups.iter().position(|x| x == g).expect("group is present");
                report.set(method, col, *v);
            }
        }
        report
    }

    pub fn set(&mut self, method: &str, column: usize, value: f64) {
        let width = self.columns.len();
        let row = match self.rows.iter().position(|(m, _)| m == method) {
            Some(i) => i,
            None => {
                self.rows.push((method.to_string(), vec![None; width]));
                self.rows.len() - 1
            }
        };
        self.rows[row].1[column] = Some(value);
    }

    fn cells(&self) -> Vec<Vec<String>> {
        let mut out = vec![std::iter::once("method".to_string())
            .chain(self.columns.iter().cloned())
            .collect()];
        for (method, values) in &self.rows {
            out.push(
                std::iter::once(method.clone())
                    .chain(
                        values
                            .iter()
                            .map(|v| v.map_or_else(|| MISSING_CELL.to_string(), |v| format!("{v:.4}"))),
                    )
                    .collect(),
            );
        }
        out
    }

    pub fn render_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..cells[0].len())
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &cells {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    let pad = w - cell.chars().count();
                    if i == 0 {
                        format!("{cell}{}", " ".repeat(pad))
                    } else {
                        format!("{}{cell}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let escape = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        };
        self.cells()
            .iter()
            .map(|row| row.iter().map(|c| escape(c)).collect::<Vec<_>>().join(",") + "\n")
            .collect()
    }
}
