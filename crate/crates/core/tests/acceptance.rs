#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. Positional arguments select criteria by number,
//! e.g. `cargo test -p lrvb-core --test acceptance -- 1 3`.

use std::time::Instant;

use lrvb::gibbs::{gibbs_run, posterior_summary, MIN_ESS};
use lrvb::gmm::factors::{alpha_covariance, factor_of};
use lrvb::gmm::{factor_covariance_blocks, hessian_blocks, simulate, Dataset, GmmTruth};
use lrvb::influence::{influence_for_fit, Prefactor};
use lrvb::layout::{sym_pairs, BlockId, ParamLayout};
use lrvb::lrvb::{lrvb_alpha, lrvb_full, lrvb_gmm};
use lrvb::mfvb::{coordinate_step, elbo, fit, fit_from, sweep, FactorName, Init, SolverConfig, VariationalState};
use lrvb::mvn::{lrvb_mvn, mfvb_mvn, MvnTarget};
use lrvb::oracle::{default_step, numeric_dm_dt, numeric_influence};
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uniform(rng: &mut StdRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_spd(rng: &mut StdRng, j: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(j, j, |_, _| uniform(rng, -0.5, 0.5));
    let s = DMatrix::identity(j, j) * 0.5 + &b * b.transpose();
    (&s + s.transpose()) * 0.5
}

/// Two-component mixture whose means are `sep` apart along a direction
/// with a sizeable first coordinate.
fn random_truth(rng: &mut StdRng, p: usize, sep: f64) -> GmmTruth {
    let mut u = DVector::from_fn(p, |_, _| uniform(rng, -1.0, 1.0));
    u[0] = uniform(rng, 1.0, 2.0);
    u /= u.norm();
    let w = uniform(rng, 0.35, 0.65);
    let cov = |rng: &mut StdRng| {
        let s = random_spd(rng, p);
        (0..p).map(|a| (0..p).map(|b| s[(a, b)]).collect()).collect()
    };
    GmmTruth {
        weights: vec![w, 1.0 - w],
        means: vec![(-&u * (sep / 2.0)).iter().copied().collect(), (&u * (sep / 2.0)).iter().copied().collect()],
        covariances: vec![cov(rng), cov(rng)],
        seed: rng.random(),
    }
}

fn fit_truth(data: &Dataset, truth: &GmmTruth, tol: f64) -> VariationalState {
    let mut cfg = SolverConfig::new(truth.k(), Init::Truth { truth: truth.clone() });
    cfg.tol = tol;
    let st = fit(data, &cfg).expect("fit");
    assert!(st.converged, "fit did not converge");
    st
}

fn rel_max(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn best_of<F: FnMut()>(reps: usize, mut f: F) -> f64 {
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Indices of the μ, Λ and log π statistics.
fn compared_stats(layout: &ParamLayout) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0..layout.k() {
        out.extend(layout.range(BlockId::Mu(k)).unwrap());
        out.extend(layout.range(BlockId::Lambda(k)).unwrap());
    }
    out.extend(layout.range(BlockId::LogPi).unwrap());
    out.sort_unstable();
    out
}

fn criterion_1() -> Outcome {
    let mut rng = StdRng::seed_from_u64(1);
    let dims = [2, 3, 5, 10];
    let (mut worst, mut worst_var, mut under_ok) = (0.0f64, 0.0f64, true);
    for i in 0..50 {
        let j = dims[i % dims.len()];
        let sigma = random_spd(&mut rng, j);
        let mu = DVector::from_fn(j, |_, _| uniform(&mut rng, -3.0, 3.0));
        let target = MvnTarget::new(mu, sigma.clone()).unwrap();
        worst = worst.max(rel_max(&lrvb_mvn(&target).unwrap(), &sigma));
        let fit = mfvb_mvn(&target, 1e-12).unwrap();
        let lambda = sigma.clone().try_inverse().unwrap();
        for c in 0..j {
            let expect = 1.0 / lambda[(c, c)];
            worst_var = worst_var.max((fit.v[(c, c)] - expect).abs() / expect);
            let coupled = (0..j).any(|d| d != c && lambda[(c, d)].abs() > 1e-12);
            if coupled && !(fit.v[(c, c)] < sigma[(c, c)]) {
                under_ok = false;
            }
        }
    }
    outcome(
        worst < 1e-8 && worst_var < 1e-10 && under_ok,
        format!(
            "max rel err of LRVB vs Σ {worst:.2e} (< 1e-8); MFVB variance vs 1/Λ_jj {worst_var:.2e}; \
             underestimates every coupled coordinate: {under_ok}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    let truth = random_truth(&mut rng, 2, 3.0);
    let data = simulate(&truth, 1000, 20).unwrap();
    let mut cfg = SolverConfig::new(2, Init::Truth { truth: truth.clone() });
    cfg.tol = 1e-10;
    let st = fit(&data, &cfg).unwrap();
    let v = factor_covariance_blocks(&st.factors, &st.layout).unwrap();
    let h = hessian_blocks(&st.m, &data, &st.layout).unwrap();
    let full = lrvb_full(&v, &h).unwrap().sigma_full.unwrap();
    let mut worst = 0.0f64;
    let mut worst_label = String::new();
    for i in 0..st.layout.alpha_dim() {
        // Step calibration: the step scales with the typical size of the
        // statistic's natural parameter, taken from the LRVB variance.
        let step = default_step(st.m[i]) / full[(i, i)].sqrt().max(1e-3);
        let col = numeric_dm_dt(&data, &cfg, &st, i, step).unwrap();
        let reference = full.column(i);
        let err = (&col - reference).amax() / reference.amax();
        if err > worst {
            worst = err;
            worst_label = st.layout.label(i).unwrap();
        }
    }
    outcome(
        worst < 1e-3,
        format!(
            "K=2 P=2 N=1000, {} columns (dimension {}); worst max|diff|/max|col| {worst:.2e} at {worst_label} (< 1e-3)",
            st.layout.alpha_dim(),
            full.nrows()
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = StdRng::seed_from_u64(3);
    let mut lines = Vec::new();
    let mut pass = true;
    for &(k, p, n) in &[(2usize, 2usize, 900usize), (3, 2, 400), (2, 3, 300), (3, 3, 150)] {
        let truth = if k == 2 {
            random_truth(&mut rng, p, 3.0)
        } else {
            let base = random_truth(&mut rng, p, 3.0);
            let mut t = base.clone();
            t.weights = vec![0.3, 0.3, 0.4];
            let mut m2 = vec![0.0; p];
            m2[p - 1] = 3.0;
            t.means.push(m2);
            t.covariances.push(base.covariances[0].clone());
            t
        };
        let data = simulate(&truth, n, rng.random()).unwrap();
        let st = fit_truth(&data, &truth, 1e-9);
        let v = factor_covariance_blocks(&st.factors, &st.layout).unwrap();
        let h = hessian_blocks(&st.m, &data, &st.layout).unwrap();
        let full = lrvb_full(&v, &h).unwrap();
        let schur = lrvb_alpha(&v, &h, &st.layout).unwrap();
        let fast = lrvb_gmm(&st, &data).unwrap();
        let e1 = rel_max(&schur.sigma_alpha, &full.sigma_alpha);
        let e2 = rel_max(&fast.sigma_alpha, &full.sigma_alpha);
        pass &= e1 < 1e-10 && e2 < 1e-10 && st.layout.dim() <= 2000;
        lines.push(format!("K={k} P={p} N={n} dim={}: {e1:.1e}/{e2:.1e}", st.layout.dim()));
    }
    outcome(
        pass,
        format!("rel err of Schur / monomial path vs full α block (< 1e-10): {}", lines.join("; ")),
    )
}

/// Results of criterion 4, reused by the speed comparison of criterion 6.
struct GibbsComparison {
    outcome: Outcome,
    lrvb_seconds: Vec<f64>,
    gibbs_seconds_to_500: Vec<f64>,
}

fn criterion_4() -> GibbsComparison {
    let mut rng = StdRng::seed_from_u64(4);
    let (mut within, mut total) = (0usize, 0usize);
    let (mut mare_lrvb, mut mare_mfvb) = (0.0, 0.0);
    let (mut off_lrvb, mut off_gibbs) = (Vec::new(), Vec::new());
    let mut min_r = f64::INFINITY;
    let mut min_ess = f64::INFINITY;
    let mut switched = 0;
    let mut lrvb_seconds = Vec::new();
    let mut gibbs_seconds_to_500 = Vec::new();
    for c in 0..10 {
        let sep = uniform(&mut rng, 3.0, 3.8);
        let truth = random_truth(&mut rng, 2, sep);
        let data = simulate(&truth, 10_000, 400 + c).unwrap();

        let t0 = Instant::now();
        let st = fit_truth(&data, &truth, 1e-9);
        let lr = lrvb_gmm(&st, &data).unwrap();
        lrvb_seconds.push(t0.elapsed().as_secs_f64());
        let mfvb_sd = st.mfvb_sds();

        let mut iters = 3000;
        let (summary, chain, secs) = loop {
            let t0 = Instant::now();
            let chain = gibbs_run(&data, &truth, iters, 500, 40 + c).unwrap();
            let secs = t0.elapsed().as_secs_f64();
            let s = posterior_summary(&chain).unwrap();
            if s.min_ess() >= MIN_ESS || iters >= 48_000 {
                break (s, chain, secs);
            }
            iters *= 2;
        };
        if chain.label_switched {
            switched += 1;
        }
        min_ess = min_ess.min(summary.min_ess());
        gibbs_seconds_to_500.push(secs * MIN_ESS / summary.min_ess());

        let idx = compared_stats(&st.layout);
        let lr_sd = lr.marginal_sds();
        for &i in &idx {
            let g = summary.sd[i];
            let tol = (3.0 * summary.mc_se[i]).max(0.1 * g);
            if (lr_sd[i] - g).abs() <= tol {
                within += 1;
            }
            total += 1;
            mare_lrvb += (lr_sd[i] - g).abs() / g;
            mare_mfvb += (mfvb_sd[i] - g).abs() / g;
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (x, &i) in idx.iter().enumerate() {
            for &j in &idx[x + 1..] {
                a.push(lr.sigma_alpha[(i, j)]);
                b.push(summary.cov[(i, j)]);
            }
        }
        min_r = min_r.min(pearson(&a, &b));
        off_lrvb.extend(a);
        off_gibbs.extend(b);
    }
    let frac = within as f64 / total as f64;
    mare_lrvb /= total as f64;
    mare_mfvb /= total as f64;
    let r = pearson(&off_lrvb, &off_gibbs);
    let pass = frac >= 0.9 && mare_lrvb < mare_mfvb && r > 0.9 && min_ess >= MIN_ESS && switched == 0;
    GibbsComparison {
        outcome: outcome(
            pass,
            format!(
                "10 configs K=2 P=2 N=10000, min ESS {min_ess:.0}, label switches {switched}; \
                 (a) {within}/{total} = {:.1}% within max(3 SE, 10%) (>= 90%); \
                 (b) mean rel err LRVB {mare_lrvb:.3} vs MFVB {mare_mfvb:.3}; \
                 (c) off-diagonal covariance r = {r:.4} pooled, {min_r:.4} worst config (> 0.9)",
                100.0 * frac
            ),
        ),
        lrvb_seconds,
        gibbs_seconds_to_500,
    }
}

fn criterion_5() -> Outcome {
    let mut rng = StdRng::seed_from_u64(5);
    let truth = random_truth(&mut rng, 2, 3.0);
    let data = simulate(&truth, 200, 50).unwrap();
    let mut cfg = SolverConfig::new(2, Init::Truth { truth: truth.clone() });
    cfg.tol = 1e-11;
    let st = fit(&data, &cfg).unwrap();
    let resolved = influence_for_fit(&st, &data, Prefactor::SigmaTimesVInverse).unwrap();
    let other = influence_for_fit(&st, &data, Prefactor::SigmaInverse).unwrap();
    let rows = compared_stats(&st.layout);
    let (mut fails, mut fails_other, mut checked) = (0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    let ok = |a: f64, o: f64| (a - o).abs() <= 1e-3 || (a - o).abs() <= 0.01 * o.abs();
    for n in 0..data.n() {
        for p in 0..data.p() {
            let num = numeric_influence(&data, &cfg, &st, n, p, 1e-4).unwrap();
            for &i in &rows {
                let a = resolved.get(i, n, p);
                checked += 1;
                if !ok(a, num[i]) {
                    fails += 1;
                }
                if !ok(other.get(i, n, p), num[i]) {
                    fails_other += 1;
                }
                worst = worst.max((a - num[i]).abs() / num[i].abs().max(0.1));
            }
        }
    }
    outcome(
        fails == 0 && fails_other > 0,
        format!(
            "K=2 P=2 N=200, {checked} entries: Σ_α V_α⁻¹ prefactor fails {fails}, Σ_α⁻¹ prefactor fails {fails_other}; \
             worst scaled err {worst:.2e}; resolved form: Σ_α V_α⁻¹"
        ),
    )
}

fn timed_alpha(st: &VariationalState, data: &Dataset) -> (f64, usize) {
    let mut elems = 0;
    let secs = best_of(3, || {
        let v = factor_covariance_blocks(&st.factors, &st.layout).unwrap();
        let h = hessian_blocks(&st.m, data, &st.layout).unwrap();
        elems = lrvb_alpha(&v, &h, &st.layout).unwrap().diagnostics.largest_dense_elems;
    });
    (secs, elems)
}

fn timed_gmm(st: &VariationalState, data: &Dataset) -> (f64, usize) {
    let mut elems = 0;
    let secs = best_of(3, || elems = lrvb_gmm(st, data).unwrap().diagnostics.largest_dense_elems);
    (secs, elems)
}

fn criterion_6(speed: Option<&GibbsComparison>) -> Outcome {
    let mut rng = StdRng::seed_from_u64(6);
    let truth = random_truth(&mut rng, 2, 3.5);
    let ns = [1_000usize, 10_000, 100_000];
    let (mut ta, mut tg) = (Vec::new(), Vec::new());
    let mut structural = true;
    for &n in &ns {
        let data = simulate(&truth, n, n as u64).unwrap();
        let st = fit_truth(&data, &truth, 1e-8);
        let (a, ea) = timed_alpha(&st, &data);
        let (g, eg) = timed_gmm(&st, &data);
        structural &= ea.max(eg) < n * n && ea.max(eg) <= st.layout.alpha_dim().pow(2);
        ta.push(a);
        tg.push(g);
    }
    let nf: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&nf, &ta);
    let slope_g = log_log_slope(&nf, &tg);
    let mut pass = (0.8..=1.2).contains(&slope) && structural;
    let mut detail = format!(
        "lrvb_alpha seconds {:?} -> slope {slope:.3} (in [0.8, 1.2]); monomial path slope {slope_g:.3}; \
         largest dense object <= alpha_dim^2: {structural}",
        ta.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>()
    );
    match speed {
        Some(s) => {
            let ratio = s
                .gibbs_seconds_to_500
                .iter()
                .zip(&s.lrvb_seconds)
                .map(|(g, l)| g / l)
                .fold(f64::INFINITY, f64::min);
            pass &= ratio >= 10.0;
            detail += &format!("; fit+LRVB vs Gibbs-to-500-ESS speedup on criterion-4 instances >= {ratio:.1}x (>= 10)");
        }
        None => detail += "; speed comparison skipped (needs criterion 4)",
    }
    outcome(pass, detail)
}

fn criterion_7() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let ps = [2usize, 4, 8];
    let (mut tg, mut ta) = (Vec::new(), Vec::new());
    for &p in &ps {
        let truth = random_truth(&mut rng, p, 4.0);
        let data = simulate(&truth, 10_000, p as u64).unwrap();
        let st = fit_truth(&data, &truth, 1e-8);
        tg.push(timed_gmm(&st, &data).0);
        ta.push(timed_alpha(&st, &data).0);
    }
    let pf: Vec<f64> = ps.iter().map(|&p| p as f64).collect();
    let slope = log_log_slope(&pf, &tg);
    let slope_a = log_log_slope(&pf, &ta);
    outcome(
        slope <= 3.0,
        format!(
            "K=2 N=10000 P in {{2,4,8}}: monomial-path seconds {:?} -> slope {slope:.3} (<= 3); \
             per-point Schur path slope {slope_a:.3} (reported only)",
            tg.iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = StdRng::seed_from_u64(8);
    let mut worst_drop = 0.0f64;
    let mut noop = true;
    let mut steps = 0;
    for i in 0..20 {
        let p = 1 + i % 3;
        let sep = uniform(&mut rng, 2.5, 4.0);
        let truth = random_truth(&mut rng, p, sep);
        let data = simulate(&truth, 300, rng.random()).unwrap();
        let mut cfg = SolverConfig::new(2, Init::Kmeans);
        cfg.seed = i as u64;
        cfg.max_iter = 1;
        cfg.tol = 1e-10;
        let mut st = fit(&data, &cfg).unwrap();
        let mut prev = elbo(&st, &data).unwrap();
        for _ in 0..150 {
            for f in FactorName::SWEEP {
                st = coordinate_step(&st, &data, f).unwrap();
                let e = elbo(&st, &data).unwrap();
                worst_drop = worst_drop.max(prev - e);
                prev = e;
                steps += 1;
            }
        }
        cfg.max_iter = 100_000;
        let conv = fit_from(&st, &data, &cfg).unwrap();
        let mut again = conv.clone();
        let change = sweep(&mut again, &data).unwrap();
        noop &= conv.converged && change < cfg.tol;
    }
    outcome(
        worst_drop <= 1e-9 && noop,
        format!(
            "20 instances, {steps} coordinate steps: largest ELBO decrease {worst_drop:.2e} (<= 1e-9); \
             extra sweep after convergence is a no-op: {noop}"
        ),
    )
}

/// Log joint as a function of the stacked statistics, written out
/// directly from the model rather than through the Hessian code.
fn log_joint(m: &DVector<f64>, layout: &ParamLayout, data: &Dataset) -> f64 {
    let p = layout.p();
    let unpack = |start: usize| {
        let mut s = DMatrix::zeros(p, p);
        for (i, (a, b)) in sym_pairs(p).enumerate() {
            s[(a, b)] = m[start + i];
            s[(b, a)] = m[start + i];
        }
        s
    };
    let mut total = 0.0;
    for n in 0..layout.n() {
        let (x, xx) = if layout.include_x() {
            let r = layout.range(BlockId::X(n)).unwrap();
            (
                DVector::from_fn(p, |a, _| m[r.start + a]),
                unpack(layout.range(BlockId::XOuter(n)).unwrap().start),
            )
        } else {
            let x = data.row(n);
            let xx = &x * x.transpose();
            (x, xx)
        };
        let z = layout.range(BlockId::Z(n)).unwrap().start;
        for k in 0..layout.k() {
            let mu_r = layout.range(BlockId::Mu(k)).unwrap();
            let mu = DVector::from_fn(p, |a, _| m[mu_r.start + a]);
            let mumu = unpack(layout.range(BlockId::MuOuter(k)).unwrap().start);
            let lam = unpack(layout.range(BlockId::Lambda(k)).unwrap().start);
            let logdet = m[layout.range(BlockId::LogDetLambda(k)).unwrap().start];
            let log_pi = m[layout.range(BlockId::LogPi).unwrap().start + k];
            let term = -0.5 * lam.component_mul(&xx).sum() + (x.transpose() * &lam * &mu)[0]
                - 0.5 * lam.component_mul(&mumu).sum()
                + 0.5 * logdet
                + log_pi;
            total += m[z + k] * term;
        }
    }
    total
}

fn criterion_9() -> Outcome {
    let mut rng = StdRng::seed_from_u64(9);
    let truth = random_truth(&mut rng, 2, 2.5);
    let data = simulate(&truth, 5, 90).unwrap();
    // With five points a component can collapse towards a singular
    // scatter; the Hessian identity holds at any m, so one sweep suffices.
    let mut cfg = SolverConfig::new(2, Init::Truth { truth: truth.clone() });
    cfg.max_iter = 1;
    let base = fit(&data, &cfg).unwrap();
    let st = base.with_x(&data).unwrap();
    let layout = st.layout;
    let h = hessian_blocks(&st.m, &data, &layout).unwrap();
    let hd = h.to_dense();

    let hzz = hd.view((layout.z_range().start, layout.z_range().start), (layout.z_dim(), layout.z_dim())).amax();
    let stored_zz = h.iter().any(|(r, c, _)| matches!((r, c), (BlockId::Z(_), BlockId::Z(_))));

    let v = factor_covariance_blocks(&st.factors, &layout).unwrap();
    let block_diag = v.is_block_diagonal_by(factor_of);
    // Eigenvalues of the correlation-scaled matrix, so that statistics on
    // very different scales do not swamp each other.
    let vd = v.to_dense();
    let scale = vd.diagonal().map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 });
    let scaled = DMatrix::from_fn(vd.nrows(), vd.ncols(), |i, j| vd[(i, j)] * scale[i] * scale[j]);
    let min_eig = scaled.symmetric_eigen().eigenvalues.min();
    let v_alpha = alpha_covariance(&st.factors, &layout);
    let alpha_matches = (v_alpha - vd.view((0, 0), (layout.alpha_dim(), layout.alpha_dim()))).amax() == 0.0;
    let psd = min_eig >= -1e-10 && alpha_matches;

    let bigger = simulate(&truth, 400, 91).unwrap();
    let sb = fit_truth(&bigger, &truth, 1e-9);
    let vb = factor_covariance_blocks(&sb.factors, &sb.layout).unwrap();
    let hb = hessian_blocks(&sb.m, &bigger, &sb.layout).unwrap();
    let asym = lrvb_full(&vb, &hb)
        .unwrap()
        .diagnostics
        .asymmetry
        .max(lrvb_alpha(&vb, &hb, &sb.layout).unwrap().diagnostics.asymmetry)
        .max(lrvb_gmm(&sb, &bigger).unwrap().diagnostics.asymmetry);

    let step = 1e-3;
    let d = layout.dim();
    let mut fd = DMatrix::zeros(d, d);
    let f = |m: &DVector<f64>| log_joint(m, &layout, &data);
    for i in 0..d {
        for j in 0..=i {
            let e = |si: f64, sj: f64| {
                let mut m = st.m.clone();
                m[i] += si * step;
                m[j] += sj * step;
                f(&m)
            };
            let val = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * step * step);
            fd[(i, j)] = val;
            fd[(j, i)] = val;
        }
    }
    let entry_err = hd
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max);

    outcome(
        hzz == 0.0 && !stored_zz && block_diag && psd && asym < 1e-6 && entry_err < 1e-5,
        format!(
            "H_zz max |entry| {hzz}; V block-diagonal {block_diag}, min eigenvalue {min_eig:.2e}; \
             Σ̂ asymmetry {asym:.2e} (< 1e-6); Hessian vs finite differences on K=2 P=2 N=5 \
             (dimension {d}): max rel err {entry_err:.2e} (< 1e-5)"
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: usize| selected.is_empty() || selected.contains(&c);
    let names = [
        "",
        "MVN exactness",
        "fixed-point derivative consistency",
        "Schur reduction",
        "Gibbs agreement",
        "influence accuracy",
        "scaling in N",
        "scaling in P",
        "solver sanity",
        "structural invariants",
    ];
    let mut failed = Vec::new();
    let mut report = |c: usize, started: Instant, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {c} ({}) [{:.1}s]: {}", names[c], started.elapsed().as_secs_f64(), o.detail);
        if !o.pass {
            failed.push(c);
        }
    };
    let order = [1, 3, 9, 6, 7, 8, 2, 5, 4];
    let mut gibbs = None;
    if want(4) || want(6) {
        let t = Instant::now();
        let g = criterion_4();
        gibbs = Some((t.elapsed(), g));
    }
    for c in order {
        if !want(c) {
            continue;
        }
        let t = Instant::now();
        let o = match c {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => {
                let (el, g) = gibbs.as_ref().unwrap();
                let o = outcome(g.outcome.pass, g.outcome.detail.clone());
                report(4, t - *el, o);
                continue;
            }
            5 => criterion_5(),
            6 => criterion_6(gibbs.as_ref().map(|(_, g)| g)),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => unreachable!(),
        };
        report(c, t, o);
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
