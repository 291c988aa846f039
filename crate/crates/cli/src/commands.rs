use std::fs;
use std::time::Instant;

use log::{info, warn};
use lnared_core::balance::{self, Method, ReductionResult};
use lnared_core::gramian::{self, GramianError, GramianPair, SparsityPattern};
use lnared_core::linalg::{self, Matrix, Vector};
use lnared_core::matclass;
use lnared_core::network::{parse_network, LnaField, LnaModel, TransformedLna};
use lnared_core::ode::{self, OdeOptions};
use lnared_core::realization::Realization;
use lnared_core::simulate::{self, Comparison};
use lnared_core::timescale::{self, AveragedModel};
use serde::Serialize;

use crate::config::{Command, RunConfig};
use crate::error::CliError;
use crate::output::OutputDir;

/// Loaded model with its steady state and the reduction-order permutation.
struct Prepared {
    cfg: RunConfig,
    model: LnaModel,
    /// `(Π x)_k = x[perm[k]]`.
    pi: Matrix,
    x_ss: Vector,
    x0: Option<Vector>,
}

impl Prepared {
    fn load(command: &Command) -> Result<Self, CliError> {
        let args = command.args();
        let text = fs::read_to_string(&args.model)
            .map_err(|e| CliError::Model(format!("cannot read {}: {e}", args.model.display())))?;
        let network = parse_network(&text)?;
        let cfg = RunConfig::new(command.name(), args, &network.species, &text)?;
        let model = LnaModel::new(network);
        let n = model.dim();
        let x0 = match (&cfg.x0, cfg.x0_params.is_empty()) {
            (Some(v), _) => Some(Vector::from_vec(v.clone())),
            (None, false) => {
                let mut net = model.network.clone();
                for (name, value) in &cfg.x0_params {
                    let i = net
                        .parameter_names
                        .iter()
                        .position(|p| p == name)
                        .ok_or_else(|| CliError::Config(format!("--x0-params: unknown parameter `{name}`")))?;
                    net.parameter_values[i] = *value;
                }
                let alt = LnaModel { network: net, c: model.c.clone() };
                Some(alt.steady_state(&Vector::from_element(n, 1.0))?)
            }
            (None, true) => None,
        };
        let guess = x0.clone().unwrap_or_else(|| Vector::from_element(n, 1.0));
        let x_ss = model.steady_state(&guess)?;
        let perm = cfg.permutation();
        let mut pi = Matrix::zeros(n, n);
        for (k, &i) in perm.iter().enumerate() {
            pi[(k, i)] = 1.0;
        }
        Ok(Prepared { cfg, model, pi, x_ss, x0 })
    }

    fn field(&self) -> TransformedLna<'_, LnaModel> {
        TransformedLna { base: &self.model, t: self.pi.clone(), t_inv: self.pi.transpose() }
    }

    fn state_order(&self) -> Vec<String> {
        self.cfg.permutation().iter().map(|&i| self.cfg.species[i].clone()).collect()
    }

    /// Linearization at steady state in reduction order.
    fn realization(&self) -> Result<Realization, CliError> {
        let r = self.model.linearize(&self.x_ss)?;
        Ok(Realization::strictly_proper(
            &self.pi * &r.a * self.pi.transpose(),
            &self.pi * &r.b,
            &r.c * self.pi.transpose(),
        )?)
    }

    fn require_x0(&self) -> Result<Vector, CliError> {
        self.x0.clone().ok_or_else(|| CliError::Config(format!("{} needs --x0 or --x0-params", self.cfg.command)))
    }
}

#[derive(Debug, Clone, Serialize)]
struct Reduced {
    result_method: &'static str,
    solver_notes: Vec<String>,
    #[serde(skip)]
    result: ReductionResult,
}

/// Plain structured programme first; on conditioning trouble switch to the
/// seeded programme when an H-matrix certificate exists.
fn gramians(r: &Realization, pattern: &SparsityPattern, notes: &mut Vec<String>) -> Result<GramianPair, CliError> {
    match gramian::structured_gramians(r, pattern) {
        Ok(g) => Ok(g),
        Err(e @ (GramianError::Infeasible { .. } | GramianError::NoConvergence(_) | GramianError::VerificationFailed(_))) => {
            if matclass::diagonal_certificate(&r.a).is_ok() {
                warn!("structured programme failed ({e}); retrying with the seeded programme");
                notes.push(format!("structured programme failed: {e}"));
                notes.push("used the H-matrix seeded programme".into());
                Ok(gramian::seeded_structured_gramians(r, pattern)?)
            } else {
                Err(e.into())
            }
        }
        Err(e) => Err(e.into()),
    }
}

fn reduce_one(prep: &Prepared, r: &Realization, method: Method) -> Result<Reduced, CliError> {
    let cfg = &prep.cfg;
    let mut notes = Vec::new();
    let result = if method == Method::Timescale {
        let order = prep.state_order();
        let fast: Vec<usize> = cfg.fast.iter().map(|s| order.iter().position(|t| t == s).expect("validated")).collect();
        let slow: Vec<usize> = (0..order.len()).filter(|i| !fast.contains(i)).collect();
        balance::timescale_reduce(r, &slow, &fast)?
    } else {
        let sizes: Vec<usize> = cfg.groups.iter().map(Vec::len).collect();
        let pattern = SparsityPattern::preserved_and_groups(cfg.preserved.len(), &sizes);
        let g = gramians(r, &pattern, &mut notes)?;
        notes.push(format!("gramian provenance: {}", g.provenance.as_str()));
        balance::reduce_structured(r, &g, cfg.preserved.len(), &cfg.keep, method)?
    };
    Ok(Reduced { result_method: method.as_str(), solver_notes: notes, result })
}

fn methods(cfg: &RunConfig) -> Vec<Method> {
    let mut out: Vec<Method> = Vec::new();
    for m in &cfg.methods {
        if !out.contains(&m.method()) {
            out.push(m.method());
        }
    }
    out
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

#[derive(Serialize)]
struct Analysis {
    species: Vec<String>,
    steady_state: Vec<f64>,
    residual: f64,
    drift: Vec<Vec<f64>>,
    eigenvalues: Vec<[f64; 2]>,
    stable: bool,
    classification: matclass::MatrixClassReport,
    diagonal_certificate_available: bool,
    initial_state: Option<Vec<f64>>,
}

pub fn analyze(command: &Command) -> Result<(), CliError> {
    let prep = Prepared::load(command)?;
    let out = OutputDir::create(&command.args().out, prep.cfg.hash())?;
    let a = prep.model.jacobian(&prep.x_ss).map_err(|e| CliError::Model(e.to_string()))?;
    let g = prep.model.drift(&prep.x_ss).map_err(|e| CliError::Model(e.to_string()))?;
    let eig = linalg::eigenvalues(&a)?;
    let classification = matclass::classify(&a);
    let analysis = Analysis {
        species: prep.cfg.species.clone(),
        steady_state: prep.x_ss.iter().copied().collect(),
        residual: g.norm(),
        drift: rows(&a),
        eigenvalues: eig.iter().map(|z| [z.re, z.im]).collect(),
        stable: linalg::is_stable(&a),
        diagonal_certificate_available: classification.certificate.is_some(),
        classification,
        initial_state: prep.x0.as_ref().map(|v| v.iter().copied().collect()),
    };
    let path = out.write_json("analysis.json", &analysis)?;
    println!("steady state: {:?}", analysis.steady_state);
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ReductionFile<'a> {
    state_order: Vec<String>,
    preserved: &'a [String],
    lumped_regions: &'a [Vec<String>],
    keep: &'a [usize],
    fast: Option<&'a [String]>,
    solver_notes: &'a [String],
    #[serde(flatten)]
    result: balance::ReductionDoc,
}

fn sigma_csv(reduced: &[Reduced]) -> String {
    let mut s = String::from("method,index,sigma\n");
    for r in reduced {
        for (i, v) in r.result.sigma.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", r.result_method, i + 1, v));
        }
    }
    s
}

fn run_reductions(prep: &Prepared) -> Result<Vec<Reduced>, CliError> {
    let r = prep.realization()?;
    methods(&prep.cfg).into_iter().map(|m| reduce_one(prep, &r, m)).collect()
}

fn write_reductions(prep: &Prepared, out: &OutputDir, reduced: &[Reduced]) -> Result<(), CliError> {
    for red in reduced {
        let file = ReductionFile {
            state_order: prep.state_order(),
            preserved: &prep.cfg.preserved,
            lumped_regions: &prep.cfg.groups,
            keep: &prep.cfg.keep,
            fast: (red.result.method == Method::Timescale).then_some(prep.cfg.fast.as_slice()),
            solver_notes: &red.solver_notes,
            result: red.result.to_doc(),
        };
        let path = out.write_json(&format!("reduction_{}.json", red.result_method), &file)?;
        println!(
            "{}: {} -> {} states, bound {}",
            red.result_method,
            red.result.t.nrows(),
            red.result.reduced.states(),
            red.result.hankel_tail.map_or("none".to_string(), |b| format!("{b:e}"))
        );
        info!("wrote {}", path.display());
    }
    out.write_csv("sigma.csv", &sigma_csv(reduced))?;
    Ok(())
}

pub fn reduce(command: &Command) -> Result<(), CliError> {
    let prep = Prepared::load(command)?;
    let reduced = run_reductions(&prep)?;
    let out = OutputDir::create(&command.args().out, prep.cfg.hash())?;
    write_reductions(&prep, &out, &reduced)
}

fn row_label(prep: &Prepared, red: &ReductionResult) -> (String, String) {
    if red.method == Method::Timescale {
        (format!("{{{}}}", prep.cfg.fast.join(",")), "0".into())
    } else {
        let keep: Vec<String> = prep.cfg.keep.iter().map(usize::to_string).collect();
        (prep.cfg.lumped_label(), keep.join(" "))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn validate(command: &Command) -> Result<(), CliError> {
    let prep = Prepared::load(command)?;
    let x0 = prep.require_x0()?;
    let reduced = run_reductions(&prep)?;
    let field = prep.field();
    let c = &prep.model.c * prep.pi.transpose();
    let x0p = &prep.pi * &x0;
    let xssp = &prep.pi * &prep.x_ss;
    let grid = ode::uniform_grid(prep.cfg.horizon, prep.cfg.grid);
    let opts = OdeOptions::default();
    let mut comparisons: Vec<(String, Comparison)> = Vec::new();
    let mut table = String::from("method,lumped_regions,keep,l1,l2,linf\n");
    for red in &reduced {
        let start = Instant::now();
        let cmp = simulate::compare_models(&field, &c, &x0p, &xssp, &red.result, &grid, &opts)?;
        let (regions, keep) = row_label(&prep, &red.result);
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            red.result_method,
            csv_field(&regions),
            csv_field(&keep),
            cmp.report.l1,
            cmp.report.l2,
            cmp.report.linf
        ));
        println!(
            "{}: L1 {:.4e} L2 {:.4e} Linf {:.4e} ({:.2} s)",
            red.result_method,
            cmp.report.l1,
            cmp.report.l2,
            cmp.report.linf,
            start.elapsed().as_secs_f64()
        );
        comparisons.push((red.result_method.to_string(), cmp));
    }
    let out = OutputDir::create(&command.args().out, prep.cfg.hash())?;
    write_reductions(&prep, &out, &reduced)?;
    out.write_csv("validate_table.csv", &table)?;
    let p = c.nrows();
    for i in 0..p {
        for j in i..p {
            let mut s = String::from("t");
            for (name, _) in &comparisons {
                s.push_str(&format!(",{name}"));
            }
            s.push('\n');
            let errs: Vec<Vec<f64>> = comparisons.iter().map(|(_, cmp)| cmp.cov_error(i, j)).collect();
            for (k, t) in grid.iter().enumerate() {
                s.push_str(&t.to_string());
                for e in &errs {
                    s.push_str(&format!(",{}", e[k]));
                }
                s.push('\n');
            }
            out.write_csv(&format!("cov_error_{}_{}.csv", i + 1, j + 1), &s)?;
        }
    }
    // Sample-path demonstration of the full linearized fluctuations.
    let r = prep.model.linearize(&prep.x_ss)?;
    let em_grid = ode::uniform_grid(prep.cfg.horizon, 200);
    let h = prep.cfg.horizon / 200.0 / 10.0;
    let em = simulate::euler_maruyama(
        |_| r.a.clone(),
        |_| r.b.clone(),
        &Vector::zeros(r.states()),
        h,
        &em_grid,
        prep.cfg.paths,
        prep.cfg.seed,
    )?;
    out.write_csv("em_demo.csv", &em.output(&r.c).to_csv())?;
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    slow: Vec<String>,
    fast: &'a [String],
    mean_slope: f64,
    ms_slope: f64,
    a22_unstable_points: usize,
    rows: &'a [timescale::SweepRow],
}

pub fn sweep(command: &Command) -> Result<(), CliError> {
    let prep = Prepared::load(command)?;
    let x0 = prep.require_x0()?;
    let cfg = &prep.cfg;
    let fast: Vec<usize> = cfg.fast.iter().map(|s| cfg.species.iter().position(|t| t == s).expect("validated")).collect();
    let slow: Vec<usize> = (0..cfg.species.len()).filter(|i| !fast.contains(i)).collect();
    let avg = AveragedModel::new(&prep.model, slow.clone(), fast)?;
    let grid = ode::uniform_grid(cfg.horizon, cfg.grid);
    let res = timescale::epsilon_sweep(&avg, &x0, &cfg.epsilon, &grid, &OdeOptions::default())?;
    let out = OutputDir::create(&command.args().out, cfg.hash())?;
    out.write_csv("sweep.csv", &res.to_csv())?;
    let summary = SweepSummary {
        slow: slow.iter().map(|&i| cfg.species[i].clone()).collect(),
        fast: &cfg.fast,
        mean_slope: res.mean_slope,
        ms_slope: res.ms_slope,
        a22_unstable_points: res.a22_unstable_points,
        rows: &res.rows,
    };
    out.write_json("sweep_summary.json", &summary)?;
    for r in &res.rows {
        println!("ε = {:e}: mean_err {:.4e}, ms_err {:.4e}", r.epsilon, r.mean_err, r.ms_err);
    }
    println!("slopes: mean {:.3}, mean-square {:.3}", res.mean_slope, res.ms_slope);
    Ok(())
}
