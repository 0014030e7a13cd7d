//! The three synthetic benchmark tables: preset configurations, condition
//! grids and table-shaped rate output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{LabelKind, NoiseReading, NoisySpec};
use crate::training::Baseline;

use super::config::{DataSource, ExperimentConfig, Metric};
use super::experiment::{run_experiment, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Table {
    Table1,
    Table2,
    Table3,
}

impl FromStr for Table {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(Table::Table1),
            "table2" => Ok(Table::Table2),
            "table3" => Ok(Table::Table3),
            _ => Err(Error::Config(format!(
                "unknown table `{s}` (expected table1, table2 or table3)"
            ))),
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Table::Table1 => "table1",
            Table::Table2 => "table2",
            Table::Table3 => "table3",
        })
    }
}

/// Cost scale applied to the table-1 feature costs.
pub const TABLE1_LAMBDA: f64 = 2.5e-4;
/// Cost scale for table 2 (true features cost 1, noisy ones `c`).
pub const TABLE2_LAMBDA: f64 = 4e-3;
/// Cost scale for table 3.
pub const TABLE3_LAMBDA: f64 = 2e-3;
/// Noisy-feature cost in table 3, relative to a true-feature cost of 1.
pub const TABLE3_NOISY_COST: f64 = 0.2;

/// Settings shared by every preset.
fn base(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.set("seed", &seed.to_string()).expect("valid key");
    if let DataSource::Synthetic(s) = &mut cfg.data {
        s.process.steps = 10;
        s.process.episodes = 2000;
        s.label.noise = 0.1;
        s.label.reading = NoiseReading::StdDev;
        s.noisy_reading = NoiseReading::StdDev;
    }
    cfg.hidden = 32;
    cfg.training.batch_size = 16;
    cfg.training.samples_per_decision = 4;
    cfg.training.iterations = 5000;
    cfg.training.selector_lr = 2e-3;
    cfg.training.predictor_lr = 3e-3;
    cfg.training.baseline = Baseline::LeaveOneOut;
    cfg.training.warmup_iterations = 300;
    cfg
}

fn synth(cfg: &mut ExperimentConfig) -> &mut crate::synth::SyntheticSpec {
    match &mut cfg.data {
        DataSource::Synthetic(s) => s,
        DataSource::Csv { .. } => unreachable!("presets are synthetic"),
    }
}

/// `phi = 0, 0.1, ..., 0.9`, exp-sum label, uniform feature cost `cost`.
pub fn table1_config(cost: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = base(seed);
    let s = synth(&mut cfg);
    s.process.phi = (0..10).map(|i| i as f64 / 10.0).collect();
    s.label.kind = LabelKind::ExpSum;
    cfg.feature_cost = cost;
    cfg.lambda = TABLE1_LAMBDA;
    cfg.metrics = vec![Metric::Rmse];
    cfg
}

/// `phi = 0.5`, weighted label, noisy copies with noise `gamma` costing `noisy_cost`.
pub fn table2_config(gamma: f64, noisy_cost: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = base(seed);
    let s = synth(&mut cfg);
    s.process.phi = vec![0.5; 10];
    s.label.kind = LabelKind::Weighted;
    s.noisy = Some(NoisySpec {
        gamma,
        cost: noisy_cost,
    });
    cfg.feature_cost = 1.0;
    cfg.lambda = TABLE2_LAMBDA;
    cfg.training.warmup_iterations = 1500;
    cfg.training.iterations = 6000;
    cfg.metrics = vec![Metric::Rmse];
    cfg
}

/// `phi = 0.9`, binary label, noisy copies with `gamma = 0.4`, cost scaled
/// by `eta` at steps with `y = 1`.
pub fn table3_config(eta: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = base(seed);
    let s = synth(&mut cfg);
    s.process.phi = vec![0.9; 10];
    s.label.kind = LabelKind::BinaryYdep;
    s.noisy = Some(NoisySpec {
        gamma: 0.4,
        cost: TABLE3_NOISY_COST,
    });
    cfg.feature_cost = 1.0;
    cfg.lambda = TABLE3_LAMBDA;
    cfg.eta = eta;
    cfg.adverse_label = 1.0;
    cfg.metrics = vec![Metric::Auroc, Metric::Auprc];
    cfg
}

/// One column group of a table: the parameters that vary between runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Condition {
    Cost(f64),
    Noise { gamma: f64, noisy_cost: f64 },
    Eta(f64),
}

impl Condition {
    pub fn config(self, seed: u64) -> ExperimentConfig {
        match self {
            Condition::Cost(c) => table1_config(c, seed),
            Condition::Noise { gamma, noisy_cost } => table2_config(gamma, noisy_cost, seed),
            Condition::Eta(e) => table3_config(e, seed),
        }
    }

    pub fn label(self) -> String {
        match self {
            Condition::Cost(c) => format!("cost={c}"),
            Condition::Noise { gamma, noisy_cost } => format!("gamma={gamma} c={noisy_cost}"),
            Condition::Eta(e) => format!("eta={e}"),
        }
    }

    fn slug(self) -> String {
        self.label().replace([' ', '='], "_")
    }
}

pub fn default_grid(table: Table) -> Vec<Condition> {
    match table {
        Table::Table1 => (1..=5).map(|c| Condition::Cost(c as f64)).collect(),
        Table::Table2 => [0.2, 0.4, 0.6]
            .iter()
            .flat_map(|&gamma| {
                [0.1, 0.2, 0.5]
                    .iter()
                    .map(move |&noisy_cost| Condition::Noise { gamma, noisy_cost })
            })
            .collect(),
        Table::Table3 => [0.1, 0.3, 0.5].iter().map(|&e| Condition::Eta(e)).collect(),
    }
}

/// Parse a grid: costs (`1,3,5`) for table 1, `gamma:c` pairs
/// (`0.2:0.1,0.6:0.5`) for table 2, etas (`0.1,0.5`) for table 3.
pub fn parse_grid(table: Table, text: &str) -> Result<Vec<Condition>> {
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("grid entry `{s}` is not a number")))
    };
    let grid: Vec<Condition> = text
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|item| match table {
            Table::Table1 => Ok(Condition::Cost(num(item)?)),
            Table::Table3 => Ok(Condition::Eta(num(item)?)),
            Table::Table2 => {
                let (g, c) = item
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("table2 grid entry `{item}` must be gamma:c")))?;
                Ok(Condition::Noise {
                    gamma: num(g)?,
                    noisy_cost: num(c)?,
                })
            }
        })
        .collect::<Result<_>>()?;
    if grid.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    Ok(grid)
}

/// A labelled grid of optional cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl RateTable {
    fn new(corner: &str, columns: Vec<String>, rows: Vec<String>) -> Self {
        let cells = vec![vec![None; columns.len()]; rows.len()];
        Self {
            corner: corner.into(),
            columns,
            rows,
            cells,
        }
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|x| x == column)?;
        self.cells[r][c]
    }

    fn set(&mut self, row: &str, column: &str, v: f64) {
        let r = self.rows.iter().position(|x| x == row).expect("row");
        let c = self.columns.iter().position(|x| x == column).expect("column");
        self.cells[r][c] = Some(v);
    }

    pub fn to_csv(&self) -> String {
        let mut out = std::iter::once(self.corner.as_str())
            .chain(self.columns.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(",");
        out.push('\n');
        for (name, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(name);
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&crate::fmt_real(*v));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn dedup(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Arrange per-condition reports in the layout of the corresponding table.
pub fn build_table(table: Table, results: &[(Condition, Report)]) -> RateTable {
    match table {
        Table::Table1 => {
            let cols: Vec<String> = results.iter().map(|(c, _)| c.label()).collect();
            let phis: Vec<String> = (0..10)
                .map(|i| format!("x{} (phi={})", i + 1, i as f64 / 10.0))
                .collect();
            let mut rows = phis.clone();
            rows.push("rmse".into());
            let mut t = RateTable::new("feature", cols, rows);
            for (c, r) in results {
                let col = c.label();
                for (i, row) in phis.iter().enumerate() {
                    t.set(row, &col, r.rates_mean[i]);
                }
                if let Some(&v) = r.metrics_mean.get("rmse") {
                    t.set("rmse", &col, v);
                }
            }
            t
        }
        Table::Table2 => {
            let costs = dedup(results.iter().filter_map(|(c, _)| match c {
                Condition::Noise { noisy_cost, .. } => Some(*noisy_cost),
                _ => None,
            }));
            let gammas = dedup(results.iter().filter_map(|(c, _)| match c {
                Condition::Noise { gamma, .. } => Some(*gamma),
                _ => None,
            }));
            let cols: Vec<String> = costs
                .iter()
                .flat_map(|c| [format!("c={c} true"), format!("c={c} noisy")])
                .collect();
            let rows: Vec<String> = gammas
                .iter()
                .flat_map(|g| (1..=4).map(move |i| format!("gamma={g} x{i}")))
                .collect();
            let mut t = RateTable::new("row", cols, rows);
            for (c, r) in results {
                if let Condition::Noise { gamma, noisy_cost } = c {
                    let d = r.feature_names.len() / 2;
                    for i in 0..4 {
                        let row = format!("gamma={gamma} x{}", i + 1);
                        t.set(&row, &format!("c={noisy_cost} true"), r.rates_mean[i]);
                        t.set(&row, &format!("c={noisy_cost} noisy"), r.rates_mean[d + i]);
                    }
                }
            }
            t
        }
        Table::Table3 => {
            let cols: Vec<String> = results
                .iter()
                .flat_map(|(c, _)| [format!("{} true", c.label()), format!("{} noisy", c.label())])
                .collect();
            let mut t = RateTable::new("label", cols, vec!["y=1".into(), "y=0".into()]);
            for (c, r) in results {
                let d = r.feature_names.len() / 2;
                for y in ["y=1", "y=0"] {
                    let per_run: Vec<(f64, f64)> = r
                        .runs
                        .iter()
                        .filter_map(|run| run.conditional_rates.get(y))
                        .map(|rates| (mean(&rates[..d]), mean(&rates[d..])))
                        .collect();
                    if per_run.is_empty() {
                        continue;
                    }
                    let n = per_run.len() as f64;
                    t.set(
                        y,
                        &format!("{} true", c.label()),
                        per_run.iter().map(|p| p.0).sum::<f64>() / n,
                    );
                    t.set(
                        y,
                        &format!("{} noisy", c.label()),
                        per_run.iter().map(|p| p.1).sum::<f64>() / n,
                    );
                }
            }
            t
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableReport {
    pub table: Table,
    pub seed: u64,
    pub rates: RateTable,
    pub conditions: Vec<(String, Report)>,
    pub wall_clock_seconds: f64,
}

/// Run every condition of `grid` with the preset for `table`, applying
/// `overrides` (`key`, `value`) on top of each preset. When `out` is given,
/// each condition writes its own files under `out/<condition>/` and the
/// table-level `rates.csv` and `report.json` go in `out`.
pub fn reproduce(
    table: Table,
    seed: u64,
    grid: &[Condition],
    overrides: &[(String, String)],
    out: Option<&Path>,
) -> Result<TableReport> {
    let started = Instant::now();
    let configs: Vec<(Condition, ExperimentConfig)> = grid
        .iter()
        .map(|&c| {
            let mut cfg = c.config(seed);
            for (k, v) in overrides {
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            Ok((c, cfg))
        })
        .collect::<Result<_>>()?;
    let results: Vec<(Condition, Report)> = configs
        .into_par_iter()
        .map(|(c, cfg)| {
            let dir = out.map(|o| o.join(c.slug()));
            run_experiment(&cfg, dir.as_deref()).map(|o| (c, o.report))
        })
        .collect::<Result<_>>()?;
    let rates = build_table(table, &results);
    let report = TableReport {
        table,
        seed,
        rates,
        conditions: results.into_iter().map(|(c, r)| (c.label(), r)).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("rates.csv");
        std::fs::write(&p, report.rates.to_csv()).map_err(|e| Error::io(p, e))?;
        let p = dir.join("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(p, e))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for table in [Table::Table1, Table::Table2, Table::Table3] {
            for c in default_grid(table) {
                c.config(3).validate().unwrap();
            }
        }
        assert_eq!(table2_config(0.2, 0.1, 0).features(), Some(20));
        assert_eq!(table2_config(0.2, 0.1, 0).cost_model(20).unwrap().costs[15], 0.1);
    }

    #[test]
    fn grids_parse() {
        assert_eq!(parse_grid(Table::Table1, "1, 3,5").unwrap().len(), 3);
        assert_eq!(
            parse_grid(Table::Table2, "0.2:0.1").unwrap(),
            vec![Condition::Noise {
                gamma: 0.2,
                noisy_cost: 0.1
            }]
        );
        assert!(parse_grid(Table::Table2, "0.2").is_err());
        assert!(parse_grid(Table::Table3, "").is_err());
        assert!("table4".parse::<Table>().is_err());
    }

    #[test]
    fn table_shapes_follow_the_grid() {
        let tiny = [
            ("synth.episodes", "10"),
            ("synth.steps", "3"),
            ("training.iterations", "1"),
            ("training.batch_size", "2"),
            ("model.hidden", "2"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string()));
        let t1 = reproduce(Table::Table1, 1, &default_grid(Table::Table1), &tiny, None).unwrap();
        assert_eq!(t1.rates.columns.len(), 5);
        assert_eq!(t1.rates.rows.len(), 11);
        assert!(t1.rates.cells.iter().flatten().all(Option::is_some));

        let grid = parse_grid(Table::Table2, "0.2:0.1,0.6:0.5").unwrap();
        let t2 = reproduce(Table::Table2, 1, &grid, &tiny, None).unwrap();
        assert_eq!(
            t2.rates.columns,
            ["c=0.1 true", "c=0.1 noisy", "c=0.5 true", "c=0.5 noisy"]
        );
        assert_eq!(t2.rates.rows.len(), 8);
        assert!(t2.rates.get("gamma=0.2 x1", "c=0.5 true").is_none());
        assert!(t2.rates.get("gamma=0.6 x4", "c=0.5 noisy").is_some());
    }
}
