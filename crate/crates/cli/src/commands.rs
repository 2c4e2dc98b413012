use std::path::{Path, PathBuf};
use std::time::Instant;

use lrvb::gmm::{factor_covariance_blocks, hessian_blocks};
use lrvb::influence::directional_influence;
use lrvb::lrvb::{lrvb_alpha, lrvb_full, lrvb_gmm, LrvbDiagnostics, LrvbResult};
use lrvb::mfvb::{elbo, fit as fit_mixture};
use lrvb::{
    gibbs_run, influence_for_fit, lrvb_mvn, mfvb_mvn, posterior_summary, random_truth, simulate as draw, Dataset, GmmTruth,
    Init, MvnTarget, Prefactor, SolverConfig, VariationalState,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io::{csv_writer, read_dataset, read_json, write_dataset, write_json, Provenance};
use crate::{
    Axis, CompareArgs, FitArgs, GibbsArgs, InfluenceArgs, InitKind, LrvbArgs, Method, MvnDemoArgs, ScalingArgs,
    SimulateArgs,
};

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn flush<W: std::io::Write>(w: &mut csv::Writer<W>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let truth: GmmTruth = read_json(&a.config)?;
    truth.validate()?;
    let seed = a.seed.unwrap_or(truth.seed);
    let data = draw(&truth, a.n, seed)?;
    let layout = lrvb::ParamLayout::new(truth.k(), truth.p(), a.n, false)?;
    let prov = Provenance::new("simulate", a, &[&a.config])?.with_layout(&layout);
    write_dataset(&a.out, &prov, &data)?;
    let labels_path = a
        .assignments_out
        .clone()
        .unwrap_or_else(|| sibling(&a.out, "truth-assignments.csv"));
    let mut w = csv_writer(&labels_path, &prov)?;
    w.write_record(["row", "component"])?;
    for (i, c) in data.labels.as_deref().unwrap_or_default().iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()])?;
    }
    flush(&mut w, &labels_path)?;
    println!("wrote {} rows of dimension {} to {}", a.n, truth.p(), a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitReport {
    converged: bool,
    iterations: usize,
    max_change: f64,
    elbo: f64,
    seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct StateBody {
    report: FitReport,
    state: VariationalState,
}

#[derive(Deserialize)]
struct StateFile {
    provenance: Provenance,
    #[serde(flatten)]
    body: StateBody,
}

fn solver_config(a: &FitArgs) -> CliResult<SolverConfig> {
    if let Some(path) = &a.config {
        return read_json(path);
    }
    let truth = a.truth.as_deref().map(read_json::<GmmTruth>).transpose()?;
    let k = match (a.k, &truth) {
        (Some(k), _) => k,
        (None, Some(t)) => t.k(),
        (None, None) => return Err(CliError::Validation("--k is required unless --truth or --config is given".into())),
    };
    let init = match a.init {
        InitKind::Kmeans => Init::Kmeans,
        InitKind::Random => Init::Random,
        InitKind::Truth => Init::Truth {
            truth: truth.ok_or_else(|| CliError::Validation("--init truth needs --truth".into()))?,
        },
    };
    let mut cfg = SolverConfig::new(k, init);
    cfg.tol = a.tol;
    cfg.max_iter = a.max_iter;
    cfg.seed = a.seed;
    Ok(cfg)
}

pub fn fit(a: &FitArgs) -> CliResult<()> {
    let data = read_dataset(&a.data)?;
    let cfg = solver_config(a)?;
    cfg.validate()?;
    let mut inputs: Vec<&Path> = vec![&a.data];
    inputs.extend(a.config.as_deref());
    inputs.extend(a.truth.as_deref());
    let start = Instant::now();
    let state = fit_mixture(&data, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let report = FitReport {
        converged: state.converged,
        iterations: state.iterations,
        max_change: state.max_change,
        elbo: elbo(&state, &data)?,
        seconds,
    };
    let mut prov = Provenance::new("fit", &(a, &cfg), &inputs)?.with_layout(&state.layout);
    if !state.converged {
        prov.warn(format!(
            "fit did not converge after {} sweeps (max change {:.3e}, tol {:.1e})",
            state.iterations, state.max_change, cfg.tol
        ));
    }
    write_json(&a.out, &prov, &StateBody { report: report.clone(), state })?;
    println!(
        "fit: {} sweeps, converged {}, ELBO {:.6}, {:.3}s -> {}",
        report.iterations,
        report.converged,
        report.elbo,
        seconds,
        a.out.display()
    );
    if !report.converged {
        return Err(CliError::Numerical(format!(
            "fit did not converge; the state was written to {} with a warning",
            a.out.display()
        )));
    }
    Ok(())
}

/// A fitted state and its data, with warnings to carry forward.
fn load_fit(state_path: &Path, data_path: &Path) -> CliResult<(VariationalState, Dataset, Vec<String>)> {
    let file: StateFile = read_json(state_path)?;
    let data = read_dataset(data_path)?;
    let st = file.body.state;
    if st.layout.n() != data.n() || st.layout.p() != data.p() {
        return Err(CliError::Validation(format!(
            "state was fit to {}x{} data, {} is {}x{}",
            st.layout.n(),
            st.layout.p(),
            data_path.display(),
            data.n(),
            data.p()
        )));
    }
    let mut warnings = file.provenance.warnings;
    if !st.converged && warnings.is_empty() {
        warnings.push("input fit did not converge".into());
    }
    Ok((st, data, warnings))
}

fn provenance_with(command: &str, args: &impl Serialize, inputs: &[&Path], warnings: Vec<String>) -> CliResult<Provenance> {
    let mut prov = Provenance::new(command, args, inputs)?;
    for w in warnings {
        prov.warn(w);
    }
    Ok(prov)
}

fn run_lrvb(method: Method, st: &VariationalState, data: &Dataset) -> CliResult<LrvbResult> {
    Ok(match method {
        Method::Gmm => lrvb_gmm(st, data)?,
        Method::Alpha | Method::Full => {
            let v = factor_covariance_blocks(&st.factors, &st.layout)?;
            let h = hessian_blocks(&st.m, data, &st.layout)?;
            if method == Method::Alpha {
                lrvb_alpha(&v, &h, &st.layout)?
            } else {
                lrvb_full(&v, &h)?
            }
        }
    })
}

#[derive(Serialize, Deserialize)]
struct LrvbBody {
    method: String,
    labels: Vec<String>,
    lrvb_sd: Vec<f64>,
    mfvb_sd: Vec<f64>,
    /// Row-major.
    sigma_alpha: Vec<Vec<f64>>,
    diagnostics: LrvbDiagnostics,
    seconds: f64,
}

#[derive(Deserialize)]
struct LrvbFile {
    provenance: Provenance,
    #[serde(flatten)]
    body: LrvbBody,
}

pub fn lrvb(a: &LrvbArgs) -> CliResult<()> {
    let (st, data, warnings) = load_fit(&a.state, &a.data)?;
    let prov = provenance_with("lrvb", a, &[&a.state, &a.data], warnings)?.with_layout(&st.layout);
    let start = Instant::now();
    let res = run_lrvb(a.method, &st, &data)?;
    let seconds = start.elapsed().as_secs_f64();
    let body = LrvbBody {
        method: serde_json::to_value(a.method)?.as_str().unwrap_or_default().to_string(),
        labels: res.labels.clone(),
        lrvb_sd: vec_of(&res.marginal_sds()),
        mfvb_sd: vec_of(&st.mfvb_sds()),
        sigma_alpha: rows(&res.sigma_alpha),
        diagnostics: res.diagnostics.clone(),
        seconds,
    };
    write_json(&a.out, &prov, &body)?;
    println!("{:<16} {:>12} {:>12}", "statistic", "mfvb_sd", "lrvb_sd");
    for ((l, m), s) in body.labels.iter().zip(&body.mfvb_sd).zip(&body.lrvb_sd) {
        println!("{l:<16} {m:>12.5e} {s:>12.5e}");
    }
    Ok(())
}

pub fn influence(a: &InfluenceArgs) -> CliResult<()> {
    let prefactor: Prefactor = a.prefactor.parse()?;
    let (st, data, warnings) = load_fit(&a.state, &a.data)?;
    let inf = influence_for_fit(&st, &data, prefactor)?;
    let prov = provenance_with("influence", a, &[&a.state, &a.data], warnings)?.with_layout(&inf.layout);
    let mut w = csv_writer(&a.out, &prov)?;
    w.write_record(["statistic", "point", "coordinate", "influence"])?;
    let p = data.p();
    for (col, label) in inf.col_labels.iter().enumerate() {
        if !a.second_order && col % inf.layout.x_stat_len() >= p {
            continue;
        }
        let (point, coord) = label.split_once(':').unwrap_or((label, ""));
        for (i, stat) in inf.row_labels.iter().enumerate() {
            w.write_record([stat.as_str(), point, coord, &format!("{:e}", inf.values[(i, col)])])?;
        }
    }
    flush(&mut w, &a.out)?;
    if let Some(path) = &a.directional_out {
        let mut w = csv_writer(path, &prov)?;
        w.write_record(["point", "component", "directional_influence"])?;
        let with_x = st.with_x(&data)?;
        for n in 0..data.n() {
            for k in 0..st.layout.k() {
                let d = directional_influence(&inf, &with_x, k, n)?;
                w.write_record([n.to_string(), k.to_string(), format!("{d:e}")])?;
            }
        }
        flush(&mut w, path)?;
    }
    println!("influence of {} data values on {} statistics -> {}", data.n() * p, inf.row_labels.len(), a.out.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct GibbsBody {
    labels: Vec<String>,
    iters: usize,
    burn: usize,
    seed: u64,
    draws: usize,
    seconds: f64,
    mean: Vec<f64>,
    sd: Vec<f64>,
    mc_se: Vec<f64>,
    ess: Vec<f64>,
    min_ess: f64,
    under_sampled: Vec<String>,
    /// Row-major.
    cov: Vec<Vec<f64>>,
    label_switch_fraction: f64,
    label_switched: bool,
}

#[derive(Deserialize)]
struct GibbsFile {
    provenance: Provenance,
    #[serde(flatten)]
    body: GibbsBody,
}

pub fn gibbs(a: &GibbsArgs) -> CliResult<()> {
    let data = read_dataset(&a.data)?;
    let init: GmmTruth = read_json(&a.init)?;
    let start = Instant::now();
    let chain = gibbs_run(&data, &init, a.iters, a.burn, a.seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let s = posterior_summary(&chain)?;
    let mut prov = Provenance::new("gibbs", a, &[&a.data, &a.init])?.with_layout(&chain.layout);
    if chain.label_switched {
        prov.warn(format!(
            "label switching detected in {:.1}% of draws",
            100.0 * chain.label_switch_fraction
        ));
    }
    if !s.well_sampled() {
        prov.warn(format!(
            "effective sample size below {} for: {}",
            lrvb::gibbs::MIN_ESS,
            s.under_sampled.join(", ")
        ));
    }
    let body = GibbsBody {
        labels: s.labels.clone(),
        iters: a.iters,
        burn: a.burn,
        seed: a.seed,
        draws: s.draws,
        seconds,
        mean: vec_of(&s.mean),
        sd: vec_of(&s.sd),
        mc_se: vec_of(&s.mc_se),
        ess: vec_of(&s.ess),
        min_ess: s.min_ess(),
        under_sampled: s.under_sampled.clone(),
        cov: rows(&s.cov),
        label_switch_fraction: chain.label_switch_fraction,
        label_switched: chain.label_switched,
    };
    write_json(&a.out, &prov, &body)?;
    if let Some(path) = &a.draws_out {
        let mut w = csv_writer(path, &prov)?;
        w.write_record(&chain.labels)?;
        for row in chain.stats.row_iter() {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        flush(&mut w, path)?;
    }
    println!(
        "gibbs: {} draws in {seconds:.2}s, min ESS {:.0} -> {}",
        s.draws,
        s.min_ess(),
        a.out.display()
    );
    Ok(())
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(";")
}

pub fn compare(a: &CompareArgs) -> CliResult<()> {
    let g: GibbsFile = read_json(&a.gibbs)?;
    let l: LrvbFile = read_json(&a.lrvb)?;
    let (g, gp, l, lp) = (g.body, g.provenance, l.body, l.provenance);
    if g.labels != l.labels {
        return Err(CliError::Validation("Gibbs and LRVB files describe different statistics".into()));
    }
    if gp.layout.as_ref().map(|x| (x.k, x.p, x.n)) != lp.layout.as_ref().map(|x| (x.k, x.p, x.n)) {
        return Err(CliError::Validation("Gibbs and LRVB files come from different layouts".into()));
    }
    let mut warnings: Vec<String> = gp.warnings.into_iter().chain(lp.warnings).collect();
    if !g.under_sampled.is_empty() {
        let msg = format!(
            "chain has effective sample size below {} (min {:.0}) for: {}",
            lrvb::gibbs::MIN_ESS,
            g.min_ess,
            g.under_sampled.join(", ")
        );
        if !a.force {
            return Err(CliError::Validation(format!("{msg}; rerun with more iterations or pass --force")));
        }
        warnings.push(msg);
    }
    let mut prov = provenance_with("compare", a, &[&a.gibbs, &a.lrvb], warnings)?;
    prov.layout = lp.layout.clone();
    let d = g.labels.len();
    let mut w = csv_writer(&a.out, &prov)?;
    w.write_record([
        "statistic",
        "gibbs_sd",
        "gibbs_se",
        "mfvb_sd",
        "lrvb_sd",
        "gibbs_cov_offdiag",
        "lrvb_cov_offdiag",
    ])?;
    for i in 0..d {
        let others = (0..d).filter(|&j| j != i);
        w.write_record([
            g.labels[i].clone(),
            format!("{:e}", g.sd[i]),
            format!("{:e}", g.mc_se[i]),
            format!("{:e}", l.mfvb_sd[i]),
            format!("{:e}", l.lrvb_sd[i]),
            join(others.clone().map(|j| g.cov[i][j])),
            join(others.map(|j| l.sigma_alpha[i][j])),
        ])?;
    }
    flush(&mut w, &a.out)?;
    let pairs = a.pairs_out.clone().unwrap_or_else(|| sibling(&a.out, "compare-pairs.csv"));
    let mut w = csv_writer(&pairs, &prov)?;
    w.write_record(["statistic_a", "statistic_b", "gibbs_cov", "lrvb_cov"])?;
    for i in 0..d {
        for j in i + 1..d {
            w.write_record([
                g.labels[i].clone(),
                g.labels[j].clone(),
                format!("{:e}", g.cov[i][j]),
                format!("{:e}", l.sigma_alpha[i][j]),
            ])?;
        }
    }
    flush(&mut w, &pairs)?;
    println!("compared {d} statistics -> {}", a.out.display());
    Ok(())
}

fn best_of<T>(reps: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        out = Some(v);
    }
    Ok((out.expect("at least one repetition"), best))
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn scaling(a: &ScalingArgs) -> CliResult<()> {
    if a.values.contains(&0) {
        return Err(CliError::Validation("sweep values must be positive".into()));
    }
    let axis = match a.axis {
        Axis::N => "n",
        Axis::P => "p",
        Axis::K => "k",
    };
    let mut prov = Provenance::new("scaling", a, &[])?;
    let mut table = Vec::new();
    for (i, &value) in a.values.iter().enumerate() {
        let (n, p, k) = match a.axis {
            Axis::N => (value, a.p, a.k),
            Axis::P => (a.n, value, a.k),
            Axis::K => (a.n, a.p, value),
        };
        let seed = a.seed.wrapping_add(i as u64);
        let truth = random_truth(k, p, a.separation, seed)?;
        let data = draw(&truth, n, seed.wrapping_add(1_000_000))?;
        let mut cfg = SolverConfig::new(k, Init::Truth { truth: truth.clone() });
        cfg.tol = 1e-8;
        let t = Instant::now();
        let st = fit_mixture(&data, &cfg)?;
        let fit_seconds = t.elapsed().as_secs_f64();
        if !st.converged {
            prov.warn(format!("{axis} = {value}: fit did not converge"));
        }
        let (_, lrvb_seconds) = best_of(a.reps, || run_lrvb(a.method, &st, &data))?;
        let (gibbs_seconds, min_ess) = if a.skip_gibbs {
            (None, None)
        } else {
            let t = Instant::now();
            let chain = gibbs_run(&data, &truth, a.gibbs_iters, a.gibbs_burn, seed)?;
            let secs = t.elapsed().as_secs_f64();
            let ess = posterior_summary(&chain)?.min_ess();
            (Some(secs * 1000.0 / ess), Some(ess))
        };
        eprintln!("{axis} = {value}: lrvb {lrvb_seconds:.4}s");
        table.push((value, lrvb_seconds, gibbs_seconds, min_ess, fit_seconds));
    }
    let mut w = csv_writer(&a.out, &prov)?;
    w.write_record([
        "axis",
        "value",
        "lrvb_seconds",
        "gibbs_seconds_to_1000_ess",
        "gibbs_min_ess",
        "fit_seconds",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for &(value, l, g, e, f) in &table {
        w.write_record([
            axis.to_string(),
            value.to_string(),
            format!("{l:e}"),
            opt(g),
            opt(e),
            format!("{f:e}"),
        ])?;
    }
    flush(&mut w, &a.out)?;
    if table.len() >= 2 {
        let xs: Vec<f64> = table.iter().map(|r| r.0 as f64).collect();
        let ys: Vec<f64> = table.iter().map(|r| r.1).collect();
        println!("log-log slope of lrvb_seconds in {axis}: {:.3}", log_log_slope(&xs, &ys));
    }
    Ok(())
}

#[derive(Deserialize)]
struct MvnConfig {
    mu: Vec<f64>,
    sigma: Vec<Vec<f64>>,
    /// Coordinate groups; one group per coordinate when absent.
    partition: Option<Vec<Vec<usize>>>,
}

fn mvn_target(path: &Path) -> CliResult<MvnTarget> {
    let c: MvnConfig = read_json(path)?;
    let j = c.mu.len();
    if c.sigma.len() != j || c.sigma.iter().any(|r| r.len() != j) {
        return Err(CliError::Validation(format!("{}: sigma must be {j} x {j}", path.display())));
    }
    let sigma = DMatrix::from_fn(j, j, |r, k| c.sigma[r][k]);
    let mu = DVector::from_vec(c.mu);
    Ok(match c.partition {
        Some(groups) => MvnTarget::with_partition(mu, sigma, groups)?,
        None => MvnTarget::new(mu, sigma)?,
    })
}

pub fn mvn_demo(a: &MvnDemoArgs) -> CliResult<()> {
    let target = match &a.config {
        Some(path) => mvn_target(path)?,
        None => {
            let j = a.dim;
            if j == 0 {
                return Err(CliError::Validation("--dim must be positive".into()));
            }
            let sigma = DMatrix::from_fn(j, j, |r, c| if r == c { 1.0 } else { a.rho });
            MvnTarget::new(DVector::zeros(j), sigma)?
        }
    };
    let fit = mfvb_mvn(&target, 1e-12)?;
    if !fit.converged {
        return Err(CliError::Numerical("mean-field iteration did not converge".into()));
    }
    let sigma_hat = lrvb_mvn(&target)?;
    println!("{:>10} {:>14} {:>14} {:>14}", "coordinate", "true_var", "mfvb_var", "lrvb_var");
    for j in 0..target.dim() {
        println!(
            "{j:>10} {:>14.8} {:>14.8} {:>14.8}",
            target.sigma[(j, j)],
            fit.v[(j, j)],
            sigma_hat[(j, j)]
        );
    }
    if let Some(path) = &a.out {
        let inputs: Vec<&Path> = a.config.as_deref().into_iter().collect();
        let prov = Provenance::new("mvn-demo", a, &inputs)?;
        let mut w = csv_writer(path, &prov)?;
        w.write_record(["coordinate", "true_var", "mfvb_var", "lrvb_var"])?;
        for j in 0..target.dim() {
            w.write_record([
                j.to_string(),
                format!("{:e}", target.sigma[(j, j)]),
                format!("{:e}", fit.v[(j, j)]),
                format!("{:e}", sigma_hat[(j, j)]),
            ])?;
        }
        flush(&mut w, path)?;
    }
    Ok(())
}
