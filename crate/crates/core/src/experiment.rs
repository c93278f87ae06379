//! Simulation study: a grid of (noise, C setup, B setup) cells, each fitted by
//! CP and PARAFAC2 on `n_datasets` seeded datasets, summarized as mean scores.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cp::{cp_als_runs, select_best, FitOptions, FitReport};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{
    clustering_accuracy, fms, fms_evolving, match_components, stack_windows, uniqueness_check, RunFactors,
};
use crate::numerics::Seed;
use crate::parafac2::{pf2_als_runs, pf2_constraint_gap};
use crate::simgen::{gen_dataset, BSetup, CSetup, SimConfig, SimDataset};
use crate::tensor::DenseTensor3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cp,
    Parafac2,
}

impl Method {
    fn tag(self) -> u64 {
        match self {
            Method::Cp => 0,
            Method::Parafac2 => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Cp => "CP",
            Method::Parafac2 => "PF2",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(Method::Cp),
            "parafac2" | "pf2" => Ok(Method::Parafac2),
            other => Err(Error::Argument(format!("unknown method `{other}`, expected cp or parafac2"))),
        }
    }
}

/// One grid cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub noise: f64,
    pub c_setup: CSetup,
    pub b_setup: BSetup,
}

impl Cell {
    /// Seed key; depends on the cell's content, not its position in the grid.
    fn key(&self) -> [u64; 3] {
        let c = match self.c_setup {
            CSetup::Random => 0,
            CSetup::Trends => 1,
        };
        let b = match self.b_setup {
            BSetup::Random => 0,
            BSetup::Network => 1,
        };
        [self.noise.to_bits(), c, b]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Seed,
    pub n_datasets: usize,
    pub noise_levels: Vec<f64>,
    pub c_setups: Vec<CSetup>,
    pub b_setups: Vec<BSetup>,
    /// Explicit cells; when present they replace the product grid above.
    pub cells: Option<Vec<Cell>>,
    pub methods: Vec<Method>,
    /// Template for every cell; its noise, setups and seed are overwritten.
    pub sim: SimConfig,
    pub cp: FitOptions,
    pub parafac2: FitOptions,
    /// Non-negativity on `C` for PARAFAC2.
    pub nonneg_c: bool,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: Seed(20190512),
            n_datasets: 20,
            noise_levels: vec![0.0, 0.33],
            c_setups: vec![CSetup::Random, CSetup::Trends],
            b_setups: vec![BSetup::Network, BSetup::Random],
            cells: None,
            methods: vec![Method::Cp, Method::Parafac2],
            sim: SimConfig::default(),
            cp: FitOptions::default(),
            parafac2: FitOptions::default(),
            nonneg_c: true,
            workers: 0,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grid cells in table order: noise, then C setup, then B setup.
    pub fn cells(&self) -> Vec<Cell> {
        if let Some(cells) = &self.cells {
            return cells.clone();
        }
        let mut out = Vec::new();
        for &noise in &self.noise_levels {
            for &c_setup in &self.c_setups {
                for &b_setup in &self.b_setups {
                    out.push(Cell { noise, c_setup, b_setup });
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_datasets == 0 {
            return Err(Error::Config("n_datasets must be at least 1".into()));
        }
        let cells = self.cells();
        for c in &cells {
            if !(c.noise >= 0.0 && c.noise.is_finite()) {
                return Err(Error::Config(format!("noise must be finite and >= 0, got {}", c.noise)));
            }
        }
        for (n, a) in cells.iter().enumerate() {
            if cells[..n].iter().any(|b| b.key() == a.key()) {
                return Err(Error::Config(format!("duplicate cell {a:?}")));
            }
        }
        let mut methods = self.methods.clone();
        methods.sort();
        methods.dedup();
        if methods.len() != self.methods.len() {
            return Err(Error::Config("methods must not repeat".into()));
        }
        let mut sim = self.sim.clone();
        for c in &cells {
            sim.noise = c.noise;
            sim.b_setup = c.b_setup;
            sim.c_setup = c.c_setup;
            sim.validate().map_err(|e| Error::Config(format!("sim: {e}")))?;
        }
        self.cp.validate().map_err(|e| Error::Config(format!("cp: {e}")))?;
        self.parafac2
            .validate()
            .map_err(|e| Error::Config(format!("parafac2: {e}")))?;
        Ok(())
    }

    fn options(&self, m: Method) -> &FitOptions {
        match m {
            Method::Cp => &self.cp,
            Method::Parafac2 => &self.parafac2,
        }
    }

    /// Simulation settings of dataset `index` in `cell`.
    pub fn dataset_config(&self, cell: &Cell, index: usize) -> SimConfig {
        let [n, c, b] = cell.key();
        SimConfig {
            noise: cell.noise,
            c_setup: cell.c_setup,
            b_setup: cell.b_setup,
            seed: self.seed.derive(&[n, c, b, index as u64]),
            ..self.sim.clone()
        }
    }
}

/// Reads and validates a TOML experiment file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml_str(&fs::read_to_string(path)?)
}

/// Scores of one method on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: Cell,
    pub dataset: usize,
    pub method: Method,
    pub seed: Seed,
    pub fit: f64,
    pub clustering_acc: f64,
    pub fms_a: f64,
    pub fms_b: f64,
    pub fms_c: f64,
    pub unique: bool,
    pub uniqueness_min_fms: f64,
    pub n_starts_ok: usize,
    /// PARAFAC2 constraint gap of the selected model; 0 for CP.
    pub constraint_gap: f64,
    /// Largest loss increase over every start's trace, relative to `‖X‖²`.
    pub max_rel_loss_increase: f64,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// Mean scores of one (cell, method) pair over its successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub cell: Cell,
    pub method: Method,
    pub n_runs: usize,
    pub n_failed: usize,
    pub fit: f64,
    pub clustering_acc: f64,
    pub fms_a: f64,
    pub fms_b: f64,
    pub fms_c: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultsRow>,
    pub records: Vec<RunRecord>,
}

impl ResultsTable {
    pub fn row(&self, cell: &Cell, method: Method) -> Option<&ResultsRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.cell.key() == cell.key())
    }

    /// Table-1 layout: one line per cell with CP and PF2 side by side.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let metrics = ["fit", "clustering_acc", "fms_a", "fms_b", "fms_c"];
        let mut header = vec!["noise".to_string(), "c_setup".into(), "b_setup".into()];
        for m in metrics {
            header.push(format!("{m}_cp"));
            header.push(format!("{m}_pf2"));
        }
        header.push("failed_cp".into());
        header.push("failed_pf2".into());
        w.write_record(&header).map_err(to_io)?;

        let mut seen: Vec<Cell> = Vec::new();
        for r in &self.rows {
            if !seen.iter().any(|c| c.key() == r.cell.key()) {
                seen.push(r.cell);
            }
        }
        for cell in seen {
            let cp = self.row(&cell, Method::Cp);
            let pf2 = self.row(&cell, Method::Parafac2);
            let fmt = |r: Option<&ResultsRow>, f: fn(&ResultsRow) -> f64| {
                r.map(|r| format!("{:.4}", f(r))).unwrap_or_default()
            };
            let mut rec = vec![
                format!("{}", cell.noise),
                format!("{:?}", cell.c_setup).to_lowercase(),
                format!("{:?}", cell.b_setup).to_lowercase(),
            ];
            let getters: [fn(&ResultsRow) -> f64; 5] =
                [|r| r.fit, |r| r.clustering_acc, |r| r.fms_a, |r| r.fms_b, |r| r.fms_c];
            for g in getters {
                rec.push(fmt(cp, g));
                rec.push(fmt(pf2, g));
            }
            rec.push(cp.map(|r| r.n_failed.to_string()).unwrap_or_default());
            rec.push(pf2.map(|r| r.n_failed.to_string()).unwrap_or_default());
            w.write_record(&rec).map_err(to_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `table1.csv` and `records.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join("table1.csv"))?)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(e.to_string()))?;
        fs::write(dir.join("records.json"), json)?;
        Ok(())
    }
}

fn to_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Runs every (cell, dataset, method) of the grid. Fitting failures are
/// recorded in the affected rows and never abort the grid.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultsTable> {
    cfg.validate()?;
    let cells = cfg.cells();
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.n_datasets).map(move |d| (c, d)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;

    let per_task: Vec<Vec<RunRecord>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, d)| run_dataset(cfg, &cells[c], d))
            .collect()
    });

    let mut records: Vec<RunRecord> = per_task.into_iter().flatten().collect();
    records.sort_by_key(|r| {
        let pos = cells.iter().position(|c| c.key() == r.cell.key()).unwrap_or(usize::MAX);
        (pos, r.method, r.dataset)
    });
    let rows = aggregate(&cells, &cfg.methods, &records);
    Ok(ResultsTable { rows, records })
}

/// Records of one dataset; each method sees the same simulated tensor.
pub fn run_dataset(cfg: &ExperimentConfig, cell: &Cell, index: usize) -> Vec<RunRecord> {
    let sim = cfg.dataset_config(cell, index);
    let data = gen_dataset(&sim);
    cfg.methods
        .iter()
        .map(|&method| {
            let opts = FitOptions {
                seed: sim.seed.derive(&[100 + method.tag()]),
                ..*cfg.options(method)
            };
            let mut rec = RunRecord {
                cell: *cell,
                dataset: index,
                method,
                seed: opts.seed,
                fit: f64::NAN,
                clustering_acc: f64::NAN,
                fms_a: f64::NAN,
                fms_b: f64::NAN,
                fms_c: f64::NAN,
                unique: false,
                uniqueness_min_fms: f64::NAN,
                n_starts_ok: 0,
                constraint_gap: f64::NAN,
                max_rel_loss_increase: f64::NAN,
                iterations: 0,
                converged: false,
                error: None,
            };
            let outcome = data
                .as_ref()
                .map_err(|e| Error::Numeric(format!("simulation: {e}")))
                .and_then(|d| score_method(d, method, &opts, cfg.nonneg_c, &sim, &mut rec));
            if let Err(e) = outcome {
                rec.error = Some(e.to_string());
            }
            rec
        })
        .collect()
}

struct Fitted {
    a: DMatrix<f64>,
    bk: Vec<DMatrix<f64>>,
    c: DMatrix<f64>,
    report: FitReport,
    starts: Vec<RunFactors>,
    traces_max_increase: f64,
}

fn fit_method(t: &DenseTensor3, method: Method, opts: &FitOptions, nonneg_c: bool) -> Result<Fitted> {
    let max_inc = |reports: &mut dyn Iterator<Item = &FitReport>| {
        reports.map(|r| r.max_loss_increase()).fold(f64::NEG_INFINITY, f64::max)
    };
    match method {
        Method::Cp => {
            let runs = cp_als_runs(t, opts)?;
            let traces_max_increase = max_inc(&mut runs.iter().map(|r| &r.report));
            let starts = runs
                .iter()
                .map(|r| RunFactors {
                    fit: r.report.fit,
                    factors: vec![r.model.a.as_matrix().clone(), r.model.b.as_matrix().clone(), r.model.c.as_matrix().clone()],
                })
                .collect();
            let best = select_best(runs, |r| (r.report.fit, r.report.seed)).expect("non-empty runs");
            Ok(Fitted {
                bk: best.model.evolving_b(),
                a: best.model.a.into_inner(),
                c: best.model.c.into_inner(),
                report: best.report,
                starts,
                traces_max_increase,
            })
        }
        Method::Parafac2 => {
            let runs = pf2_als_runs(t, opts, nonneg_c)?;
            let traces_max_increase = max_inc(&mut runs.iter().map(|r| &r.report));
            let mut starts = Vec::with_capacity(runs.len());
            for r in &runs {
                starts.push(RunFactors {
                    fit: r.report.fit,
                    factors: vec![r.model.a.as_matrix().clone(), stack_windows(&r.model.b_k())?, r.model.c.as_matrix().clone()],
                });
            }
            let best = select_best(runs, |r| (r.report.fit, r.report.seed)).expect("non-empty runs");
            Ok(Fitted {
                bk: best.model.b_k(),
                a: best.model.a.into_inner(),
                c: best.model.c.into_inner(),
                report: best.report,
                starts,
                traces_max_increase,
            })
        }
    }
}

fn score_method(
    data: &SimDataset,
    method: Method,
    opts: &FitOptions,
    nonneg_c: bool,
    sim: &SimConfig,
    rec: &mut RunRecord,
) -> Result<()> {
    let f = fit_method(&data.noisy, method, opts, nonneg_c)?;
    rec.fit = f.report.fit;
    rec.iterations = f.report.iterations;
    rec.converged = f.report.converged;
    rec.max_rel_loss_increase = f.traces_max_increase / data.noisy.squared_norm();
    rec.n_starts_ok = f.starts.len();
    rec.constraint_gap = match method {
        Method::Cp => 0.0,
        Method::Parafac2 => pf2_constraint_gap(&f.bk),
    };

    let b_true = stack_windows(&data.b)?;
    let b_est = stack_windows(&f.bk)?;
    let matching = match_components(
        &[data.a.as_matrix(), &b_true, data.c.as_matrix()],
        &[&f.a, &b_est, &f.c],
    )?;
    rec.fms_a = fms(data.a.as_matrix(), &f.a, &matching)?;
    rec.fms_b = fms_evolving(&data.b, &f.bk, &matching)?;
    rec.fms_c = fms(data.c.as_matrix(), &f.c, &matching)?;
    rec.clustering_acc = clustering_accuracy(
        &f.a,
        &data.labels,
        sim.cluster_sizes.len(),
        sim.seed.derive(&[200 + method.tag()]),
    )?;
    let u = uniqueness_check(&f.starts)?;
    rec.unique = u.unique;
    rec.uniqueness_min_fms = u.min_fms;
    Ok(())
}

fn aggregate(cells: &[Cell], methods: &[Method], records: &[RunRecord]) -> Vec<ResultsRow> {
    let mut groups: BTreeMap<(usize, Method), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if let Some(pos) = cells.iter().position(|c| c.key() == r.cell.key()) {
            groups.entry((pos, r.method)).or_default().push(r);
        }
    }
    let mut rows = Vec::new();
    for (pos, cell) in cells.iter().enumerate() {
        for &method in methods {
            let recs = groups.get(&(pos, method)).map(Vec::as_slice).unwrap_or(&[]);
            let ok: Vec<&&RunRecord> = recs.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&RunRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            rows.push(ResultsRow {
                cell: *cell,
                method,
                n_runs: recs.len(),
                n_failed: recs.len() - ok.len(),
                fit: mean(|r| r.fit),
                clustering_acc: mean(|r| r.clustering_acc),
                fms_a: mean(|r| r.fms_a),
                fms_b: mean(|r| r.fms_b),
                fms_c: mean(|r| r.fms_c),
            });
        }
    }
    rows
}

/// Outcome of [`fit_command`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub method: Method,
    pub rank: usize,
    pub nonneg_c: bool,
    pub constraint_gap: f64,
    pub report: FitReport,
}

/// Fits a `TNS3` file and writes `A.csv`, `C.csv`, `B.csv` (stacked `B_k`;
/// for CP the shared `B` repeated per slice), for PARAFAC2 also `H.csv`, and
/// `report.json` into `out_dir`.
pub fn fit_command(
    tensor_path: impl AsRef<Path>,
    method: Method,
    opts: &FitOptions,
    nonneg_c: bool,
    out_dir: impl AsRef<Path>,
) -> Result<FitSummary> {
    let t = io::load_tns3(tensor_path)?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out)?;
    let csv_file = |name: &str| fs::File::create(out.join(name));
    let summary = match method {
        Method::Cp => {
            let (model, report) = crate::cp::cp_als(&t, opts)?;
            io::write_factor_csv(model.a.as_matrix(), csv_file("A.csv")?)?;
            io::write_factor_csv(model.c.as_matrix(), csv_file("C.csv")?)?;
            io::write_stacked_csv(&model.evolving_b(), csv_file("B.csv")?)?;
            FitSummary { method, rank: opts.rank, nonneg_c: false, constraint_gap: 0.0, report }
        }
        Method::Parafac2 => {
            let (model, report) = crate::parafac2::pf2_als(&t, opts, nonneg_c)?;
            let bk = model.b_k();
            io::write_factor_csv(model.a.as_matrix(), csv_file("A.csv")?)?;
            io::write_factor_csv(model.c.as_matrix(), csv_file("C.csv")?)?;
            io::write_factor_csv(model.h.as_matrix(), csv_file("H.csv")?)?;
            io::write_stacked_csv(&bk, csv_file("B.csv")?)?;
            FitSummary { method, rank: opts.rank, nonneg_c, constraint_gap: pf2_constraint_gap(&bk), report }
        }
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Numeric(e.to_string()))?;
    fs::write(out.join("report.json"), json)?;
    Ok(summary)
}
