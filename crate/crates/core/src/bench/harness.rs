//! Warm-up plus timed replications over instance × configuration cells.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bench::synthetic::{gen_conditioned_instance, gen_uniform_instance, stress_profiles};
use crate::driver::{solve, SolveReport, SolverConfig};
use crate::error::{MvskError, Result};
use crate::instance::{CoefficientOrigin, PreferenceCoefficients, ReturnPanel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Uniform,
    Conditioned,
}

fn default_replications() -> usize {
    3
}

fn default_warmup() -> usize {
    1
}

fn default_configs() -> Vec<String> {
    vec!["small".into(), "large".into()]
}

/// A benchmark sweep. Uniform sweeps use `profiles` (the three stress
/// profiles when empty); conditioned sweeps use CRRA(`gamma`) at each of
/// `kappa_targets`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub family: Family,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default)]
    pub profiles: Vec<PreferenceCoefficients>,
    #[serde(default)]
    pub kappa_targets: Vec<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    pub seed: u64,
    /// Preset names to run; `small` and `large` by default.
    #[serde(default = "default_configs")]
    pub configs: Vec<String>,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(MvskError::Domain("replications must be at least 1".into()));
        }
        if self.n == 0 || self.t < 2 {
            return Err(MvskError::Dimension(format!("invalid sweep shape n = {}, T = {}", self.n, self.t)));
        }
        if self.family == Family::Conditioned {
            if self.kappa_targets.is_empty() {
                return Err(MvskError::Domain("conditioned sweep needs kappa_targets".into()));
            }
            if (self.n - 1).min(self.t - 1) < 1 {
                return Err(MvskError::Dimension("rank budget min(n-1, T-1) must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// The preset configurations named in `configs`.
    pub fn solver_configs(&self) -> Result<Vec<(String, SolverConfig)>> {
        self.configs.iter().map(|name| Ok((name.clone(), SolverConfig::preset(name.parse()?)))).collect()
    }
}

/// One timed run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub instance: String,
    pub config: String,
    pub rep: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub kappa: Option<f64>,
    pub profile: String,
    pub wall_seconds: f64,
    pub kkt: f64,
    pub f_star: f64,
    pub iters: usize,
    pub status: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub instance: String,
    pub profile: String,
    pub config: String,
    pub replications: usize,
    pub median_wall_seconds: f64,
    pub median_kkt: f64,
    pub median_f_star: f64,
    pub statuses: Vec<String>,
}

/// Median runtime of `numerator` over `denominator` on one instance/profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRatio {
    pub instance: String,
    pub profile: String,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub spec: BenchmarkSpec,
    pub cells: Vec<CellSummary>,
    pub ratios: Vec<RuntimeRatio>,
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub records: Vec<BenchRecord>,
    /// Full report for each record, `None` when the solve failed.
    pub reports: Vec<Option<SolveReport>>,
    pub summary: BenchSummary,
}

/// Lower median: the order statistic at `(len - 1) / 2`. NaN for empty input.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v[(v.len() - 1) / 2]
}

struct Instance {
    id: String,
    kappa: Option<f64>,
    panel: ReturnPanel,
    profiles: Vec<(String, PreferenceCoefficients)>,
}

fn profile_label(c: &PreferenceCoefficients) -> String {
    match &c.origin {
        CoefficientOrigin::Profile { name } => name.clone(),
        CoefficientOrigin::Crra { gamma } => format!("crra{gamma}"),
        CoefficientOrigin::Custom => format!("c{}_{}_{}_{}", c.c1, c.c2, c.c3, c.c4),
    }
}

fn instances(spec: &BenchmarkSpec) -> Result<Vec<Instance>> {
    match spec.family {
        Family::Uniform => {
            let panel = gen_uniform_instance(spec.n, spec.t, spec.seed)?;
            let profiles = if spec.profiles.is_empty() { stress_profiles() } else { spec.profiles.clone() };
            Ok(vec![Instance {
                id: format!("uniform-n{}-T{}-s{}", spec.n, spec.t, spec.seed),
                kappa: None,
                panel,
                profiles: profiles.into_iter().map(|c| (profile_label(&c), c)).collect(),
            }])
        }
        Family::Conditioned => {
            let gamma = spec.gamma.unwrap_or(6.0);
            spec.kappa_targets
                .iter()
                .map(|&kappa| {
                    let (panel, c) = gen_conditioned_instance(spec.n, spec.t, kappa, gamma, spec.seed)?;
                    Ok(Instance {
                        id: format!("conditioned-n{}-T{}-k{}-s{}", spec.n, spec.t, kappa, spec.seed),
                        kappa: Some(kappa),
                        panel,
                        profiles: vec![(profile_label(&c), c)],
                    })
                })
                .collect()
        }
    }
}

/// Runs every cell sequentially: `warmup` discarded solves, then
/// `replications` timed ones. Solver errors become records with an `error`
/// status instead of aborting the sweep.
pub fn run_benchmark(spec: &BenchmarkSpec, configs: &[(String, SolverConfig)]) -> Result<BenchOutcome> {
    spec.validate()?;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut cells = Vec::new();
    let mut ratios = Vec::new();
    for inst in instances(spec)? {
        for (plabel, coeffs) in &inst.profiles {
            let mut medians: Vec<(String, f64)> = Vec::new();
            for (clabel, config) in configs {
                for _ in 0..spec.warmup {
                    let _ = solve(&inst.panel, coeffs, None, config);
                }
                let mut walls = Vec::new();
                let mut kkts = Vec::new();
                let mut fs = Vec::new();
                let mut statuses = Vec::new();
                for rep in 0..spec.replications {
                    let base = BenchRecord {
                        instance: inst.id.clone(),
                        config: clabel.clone(),
                        rep,
                        n: inst.panel.assets(),
                        t: inst.panel.periods(),
                        kappa: inst.kappa,
                        profile: plabel.clone(),
                        wall_seconds: f64::NAN,
                        kkt: f64::NAN,
                        f_star: f64::NAN,
                        iters: 0,
                        status: String::new(),
                    };
                    let rec = match solve(&inst.panel, coeffs, None, config) {
                        Ok(r) => {
                            let rec = BenchRecord {
                                wall_seconds: r.wall_seconds,
                                kkt: r.kkt_residual,
                                f_star: r.f_star,
                                iters: r.iterations,
                                status: r.status.to_string(),
                                ..base
                            };
                            reports.push(Some(r));
                            rec
                        }
                        Err(e) => {
                            reports.push(None);
                            BenchRecord { status: format!("error: {e}"), ..base }
                        }
                    };
                    walls.push(rec.wall_seconds);
                    kkts.push(rec.kkt);
                    fs.push(rec.f_star);
                    statuses.push(rec.status.clone());
                    records.push(rec);
                }
                let med = median(&walls);
                medians.push((clabel.clone(), med));
                cells.push(CellSummary {
                    instance: inst.id.clone(),
                    profile: plabel.clone(),
                    config: clabel.clone(),
                    replications: spec.replications,
                    median_wall_seconds: med,
                    median_kkt: median(&kkts),
                    median_f_star: median(&fs),
                    statuses,
                });
            }
            for i in 0..medians.len() {
                for j in 0..medians.len() {
                    if i != j {
                        ratios.push(RuntimeRatio {
                            instance: inst.id.clone(),
                            profile: plabel.clone(),
                            numerator: medians[i].0.clone(),
                            denominator: medians[j].0.clone(),
                            ratio: medians[i].1 / medians[j].1,
                        });
                    }
                }
            }
        }
    }
    Ok(BenchOutcome { records, reports, summary: BenchSummary { spec: spec.clone(), cells, ratios } })
}

/// Writes records with the header
/// `instance,config,rep,n,T,kappa,profile,wall_seconds,kkt,f_star,iters,status`.
pub fn write_records_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if records.is_empty() {
        wtr.write_record(["instance", "config", "rep", "n", "T", "kappa", "profile", "wall_seconds", "kkt", "f_star", "iters", "status"])
            .map_err(csv_err)?;
    }
    for r in records {
        wtr.serialize(r).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> MvskError {
    MvskError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_median() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn spec_json_defaults() {
        let s: BenchmarkSpec = serde_json::from_str(r#"{"family":"uniform","n":5,"T":20,"seed":1}"#).unwrap();
        assert_eq!((s.replications, s.warmup), (3, 1));
        assert_eq!(s.configs, vec!["small", "large"]);
        let bad = BenchmarkSpec { replications: 0, ..s.clone() };
        assert!(bad.validate().is_err());
        let cond = BenchmarkSpec { family: Family::Conditioned, ..s };
        assert!(cond.validate().is_err());
    }

    #[test]
    fn three_records_per_cell_and_identical_objectives() {
        let spec: BenchmarkSpec = serde_json::from_str(
            r#"{"family":"uniform","n":6,"T":30,"seed":9,"configs":["small"],"warmup":0,
                "profiles":[{"c1":1,"c2":1,"c3":1,"c4":2,"origin":{"kind":"custom"}}]}"#,
        )
        .unwrap();
        let out = run_benchmark(&spec, &spec.solver_configs().unwrap()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.summary.cells.len(), 1);
        let f0 = out.records[0].f_star;
        assert!(out.records.iter().all(|r| r.f_star.to_bits() == f0.to_bits()));
        let mut buf = Vec::new();
        write_records_csv(&out.records, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("instance,config,rep,n,T,kappa,profile,wall_seconds,kkt,f_star,iters,status\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
