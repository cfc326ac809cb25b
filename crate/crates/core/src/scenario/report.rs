//! CSV tables, SVG charts and the run manifest. Everything is rendered in
//! memory first, so a failed report leaves no files behind.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::benchmark::BenchmarkReport;
use super::svg::{bar_chart, line_chart, Series};
use super::sweep::SweepResult;
use super::ScenarioSpec;
use crate::equilibrium::EquilibriumState;
use crate::error::{Error, Result};
use crate::market::Market;
use crate::mc::ValidationRow;
use crate::optimizer::OptReport;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Shortest round-trip decimal form; infinities as `inf` / `-inf`.
pub fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportSet {
    pub tables: Vec<Table>,
    /// `(file stem, svg document)`.
    pub charts: Vec<(String, String)>,
}

impl ReportSet {
    pub fn extend(&mut self, other: ReportSet) {
        self.tables.extend(other.tables);
        self.charts.extend(other.charts);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub seed: u64,
    /// SHA-256 of the scenario serialized as JSON, solver block included.
    pub config_sha256: String,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, spec: &ScenarioSpec) -> Result<Self> {
        Ok(Manifest {
            command: command.into(),
            scenario: spec.name.clone(),
            seed: spec.solver.seed,
            config_sha256: config_hash(spec)?,
            files: Vec::new(),
        })
    }
}

pub fn config_hash(spec: &ScenarioSpec) -> Result<String> {
    let json = serde_json::to_string(spec)?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes every table and chart plus `manifest.json` into `outdir`.
pub fn emit_reports(set: &ReportSet, manifest: &Manifest, outdir: &Path) -> Result<Vec<PathBuf>> {
    if set.tables.is_empty() {
        return Err(Error::InvalidInput("nothing to report".into()));
    }
    let mut files: Vec<(String, String)> = Vec::new();
    for t in &set.tables {
        files.push((format!("{}.csv", t.name), t.to_csv()?));
    }
    for (name, svg) in &set.charts {
        files.push((format!("{name}.svg"), svg.clone()));
    }
    let mut manifest = manifest.clone();
    manifest.files = files.iter().map(|f| f.0.clone()).collect();
    files.push(("manifest.json".into(), serde_json::to_string_pretty(&manifest)? + "\n"));
    std::fs::create_dir_all(outdir)?;
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = outdir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}

fn flag(b: bool) -> String {
    if b { "true" } else { "false" }.into()
}

pub fn sweep_report(res: &SweepResult) -> Result<ReportSet> {
    let rows = &res.rows;
    if rows.is_empty() {
        return Err(Error::InvalidInput("sweep has no levels".into()));
    }
    let mut set = ReportSet::default();

    let mut t = Table::new(
        "sweep",
        &[
            "level",
            "profit",
            "drivers",
            "wage",
            "passenger_rate",
            "customer_rate",
            "flexible_rate",
            "ondemand_rate",
            "avg_flexible_fare",
            "avg_ondemand_fare",
            "residual",
            "negative_flexible_fare",
        ],
    );
    for r in rows {
        t.push(vec![
            num(r.level),
            num(r.profit),
            num(r.drivers),
            num(r.wage),
            num(r.passenger_rate),
            num(r.customer_rate),
            num(r.flexible_rate),
            num(r.ondemand_rate),
            num(r.avg_flexible_fare),
            num(r.avg_ondemand_fare),
            num(r.residual),
            flag(r.negative_flexible_fare),
        ]);
    }
    set.tables.push(t);

    let trends = res.trends();
    let mut t = Table::new("sweep_trends", &["trend", "holds"]);
    t.push(vec!["profit_nondecreasing".into(), flag(trends.profit_nondecreasing)]);
    t.push(vec!["drivers_nondecreasing".into(), flag(trends.drivers_nondecreasing)]);
    t.push(vec!["passengers_nondecreasing".into(), flag(trends.passengers_nondecreasing)]);
    set.tables.push(t);

    let first = &rows[0];
    let last = &rows[rows.len() - 1];
    let zones = first.idle.len();
    let mut t = Table::new("zones", &["level", "zone", "idle", "idle_change", "flexible_attracted", "ondemand_attracted"]);
    for r in rows {
        for z in 0..zones {
            t.push(vec![
                num(r.level),
                (z + 1).to_string(),
                num(r.idle[z]),
                num(r.idle[z] - first.idle[z]),
                num(r.flexible_by_zone[z]),
                num(r.ondemand_by_zone[z]),
            ]);
        }
    }
    set.tables.push(t);

    let line = |name: &str, f: &dyn Fn(&super::sweep::LevelSummary) -> f64| Series {
        name: name.into(),
        points: rows.iter().map(|r| (r.level, f(r))).collect(),
    };
    set.charts.push(("profit".into(), line_chart("Platform profit", "demand level", "$/min", &[line("profit", &|r| r.profit)])));
    set.charts.push(("drivers".into(), line_chart("Drivers", "demand level", "drivers", &[line("drivers", &|r| r.drivers)])));
    set.charts.push((
        "arrivals".into(),
        line_chart(
            "Arrival rates",
            "demand level",
            "orders/min",
            &[
                line("passengers", &|r| r.passenger_rate),
                line("flexible", &|r| r.flexible_rate),
                line("on-demand", &|r| r.ondemand_rate),
            ],
        ),
    ));
    let cats: Vec<String> = (1..=zones).map(|z| z.to_string()).collect();
    let change: Vec<f64> = (0..zones).map(|z| last.idle[z] - first.idle[z]).collect();
    set.charts.push((
        "idle_change".into(),
        bar_chart(
            &format!("Idle drivers, level {} vs {}", num(last.level), num(first.level)),
            "zone",
            "change in idle drivers",
            &cats,
            &[("idle change".into(), change)],
        ),
    ));
    set.charts.push((
        "demand_split".into(),
        bar_chart(
            &format!("Parcels attracted by zone, level {}", num(last.level)),
            "zone",
            "orders/min",
            &cats,
            &[("flexible".into(), last.flexible_by_zone.clone()), ("on-demand".into(), last.ondemand_by_zone.clone())],
        ),
    ));
    Ok(set)
}

pub fn benchmark_report(b: &BenchmarkReport) -> ReportSet {
    let mut set = ReportSet::default();
    let mut t = Table::new(
        "benchmark",
        &["case", "level", "profit", "drivers", "passenger_rate", "customer_rate", "avg_flexible_fare", "avg_ondemand_fare", "warning"],
    );
    let mut summary = |name: &str, s: &super::sweep::LevelSummary| {
        t.push(vec![
            name.into(),
            num(b.level),
            num(s.profit),
            num(s.drivers),
            num(s.passenger_rate),
            num(s.customer_rate),
            num(s.avg_flexible_fare),
            num(s.avg_ondemand_fare),
            flag(false),
        ]);
    };
    summary("integrated", &b.integrated);
    summary("ondemand_only", &b.ondemand_only);
    summary("ride_only", &b.ride_only);
    let sep = &b.separate;
    t.push(vec![
        "separate".into(),
        num(b.level),
        num(sep.profit()),
        num(sep.drivers()),
        num(sep.passenger_rate()),
        num(sep.customer_rate()),
        num(f64::NAN),
        num(f64::NAN),
        flag(sep.warning),
    ]);
    set.tables.push(t);

    let mut t = Table::new("separate_platforms", &["platform", "profit", "drivers", "wage", "passenger_rate", "customer_rate"]);
    for (name, p) in [("ride", &sep.ride), ("delivery", &sep.delivery)] {
        t.push(vec![name.into(), num(p.profit), num(p.drivers), num(p.wage), num(p.passenger_rate), num(p.customer_rate)]);
    }
    set.tables.push(t);

    let i = &b.integrated;
    let mut t = Table::new("benchmark_checks", &["check", "lhs", "rhs", "holds"]);
    let mut check = |name: &str, lhs: f64, rhs: f64, holds: bool| t.push(vec![name.into(), num(lhs), num(rhs), flag(holds)]);
    let floor = b.ondemand_only.profit - 0.01 * b.ondemand_only.profit.abs();
    check("integrated_profit_vs_ondemand_only", i.profit, floor, i.profit >= floor);
    check("integrated_customers_vs_separate", i.customer_rate, sep.customer_rate(), i.customer_rate > sep.customer_rate());
    check("integrated_passengers_vs_separate", i.passenger_rate, sep.passenger_rate(), i.passenger_rate >= sep.passenger_rate());
    check("integrated_profit_vs_separate", i.profit, sep.profit(), i.profit >= sep.profit());
    check("flexible_fare_vs_ondemand_fare", i.avg_flexible_fare, i.avg_ondemand_fare, i.avg_flexible_fare < i.avg_ondemand_fare);
    set.tables.push(t);

    let cats = ["integrated", "separate", "ondemand_only", "ride_only"].map(String::from);
    set.charts.push((
        "benchmark_profit".into(),
        bar_chart(
            &format!("Profit by market structure, level {}", num(b.level)),
            "case",
            "$/min",
            &cats,
            &[("profit".into(), vec![i.profit, sep.profit(), b.ondemand_only.profit, b.ride_only.profit])],
        ),
    ));
    set.charts.push((
        "benchmark_rates".into(),
        bar_chart(
            &format!("Arrival rates by market structure, level {}", num(b.level)),
            "case",
            "orders/min",
            &cats,
            &[
                (
                    "passengers".into(),
                    vec![i.passenger_rate, sep.passenger_rate(), b.ondemand_only.passenger_rate, b.ride_only.passenger_rate],
                ),
                (
                    "parcels".into(),
                    vec![i.customer_rate, sep.customer_rate(), b.ondemand_only.customer_rate, b.ride_only.customer_rate],
                ),
            ],
        ),
    ));
    set
}

/// One row per optimization run; failed runs keep their error message.
pub fn runs_table(name: &str, runs: &[Result<OptReport>]) -> Table {
    let mut t = Table::new(
        name,
        &["run", "method", "profit", "approx_profit", "residual", "converged", "diverged", "outer_rounds", "evaluations", "error"],
    );
    for (k, r) in runs.iter().enumerate() {
        match r {
            Ok(r) => t.push(vec![
                k.to_string(),
                r.method.clone(),
                num(r.profit),
                r.approx_profit.map(num).unwrap_or_default(),
                num(r.residual),
                flag(r.converged),
                flag(r.diverged),
                r.outer_rounds.to_string(),
                r.evaluations.to_string(),
                String::new(),
            ]),
            Err(e) => {
                let mut row = vec![k.to_string()];
                row.extend(std::iter::repeat(String::new()).take(8));
                row.push(e.to_string());
                t.push(row);
            }
        }
    }
    t
}

/// Full equilibrium dump: one table per zone, one per OD pair, one per chain state.
pub fn state_report(market: &Market, state: &EquilibriumState) -> ReportSet {
    let d = &state.demand;
    let m = market.zones();
    let mut set = ReportSet::default();

    let mut t = Table::new("summary", &["quantity", "value"]);
    for (k, v) in [
        ("profit", state.profit),
        ("ride_revenue", state.ride_revenue),
        ("flex_revenue", state.flex_revenue),
        ("labor_cost", state.labor_cost),
        ("drivers", state.required_drivers),
        ("wage", state.q),
        ("passenger_rate", state.passenger_rate()),
        ("flexible_rate", state.flexible_rate()),
        ("ondemand_rate", state.ondemand_delivery_rate()),
        ("avg_flexible_fare", state.avg_flexible_fare()),
        ("avg_ondemand_fare", state.avg_ondemand_fare(market)),
        ("residual", state.residuals.max_abs()),
    ] {
        t.push(vec![k.into(), num(v)]);
    }
    t.push(vec!["negative_flexible_fare".into(), flag(state.has_negative_flexible_fare())]);
    set.tables.push(t);

    let mut t = Table::new(
        "state_zones",
        &[
            "zone", "fare_rate", "n_idle", "n_bar", "n_ig", "w_r", "w_idle", "w_dg", "w_df", "tbar_g", "drop_succ", "pick_succ_w",
            "pick_succ_t", "idle_residual", "wait_residual",
        ],
    );
    for z in 0..m {
        t.push(vec![
            (z + 1).to_string(),
            num(d.r_r[z]),
            num(d.n_idle[z]),
            num(state.n_bar[z]),
            num(state.n_ig[z]),
            num(d.w_r[z]),
            num(d.w_idle[z]),
            num(state.w_dg[z]),
            num(state.w_df[z]),
            num(state.tbar_g[z]),
            num(state.rates.drop_succ[z]),
            num(state.rates.pick_succ_w[z]),
            num(state.rates.pick_succ_t[z]),
            num(state.residuals.idle[z]),
            num(state.residuals.wait[z]),
        ]);
    }
    set.tables.push(t);

    let mut t = Table::new(
        "state_od",
        &["origin", "dest", "lambda_r", "lambda_df", "lambda_do", "c_df", "r_df", "t_df", "first_passage", "p_move"],
    );
    for i in 0..m {
        for j in 0..m {
            t.push(vec![
                (i + 1).to_string(),
                (j + 1).to_string(),
                num(d.lambda_r[(i, j)]),
                num(d.lambda_df[(i, j)]),
                num(d.lambda_do[(i, j)]),
                num(d.c_df[(i, j)]),
                num(state.r_df[(i, j)]),
                num(d.t_df[(i, j)]),
                num(d.zone_chain.et[(i, j)]),
                num(d.zone_chain.p[(i, j)]),
            ]);
        }
    }
    set.tables.push(t);

    let mut t = Table::new("state_chain", &["zone", "parcels", "pi", "hold"]);
    for (k, (z, n)) in state.ctmc.states().into_iter().enumerate() {
        t.push(vec![(z + 1).to_string(), n.to_string(), num(state.ctmc.pi[k]), num(state.ctmc.hold[k])]);
    }
    set.tables.push(t);
    set
}

pub fn validation_table(rows: &[ValidationRow]) -> Table {
    let mut t = Table::new("validate", &["quantity", "index", "analytic", "monte_carlo", "std_err", "rel_err", "pass"]);
    for r in rows {
        t.push(vec![
            r.quantity.clone(),
            r.index.clone(),
            num(r.analytic),
            num(r.monte_carlo),
            num(r.std_err),
            num(r.rel_err()),
            flag(r.pass),
        ]);
    }
    t
}
