//! Random instance generators and the numeric check suites shared by the
//! integration tests and the acceptance target. Requires a sibling `oracles`
//! module declared at the crate root.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal, Poisson};

use svyglm::{
    build_model_frame, fit_pseudo_mle, hessian_matrix, sandwich_variance, score_vector, simulate,
    weighted_loglik, ContrastMatrix, DfMode, Family, FamilyKind, FitConfig, FitResult, Link,
    LinkKind, ModelFrame, ModelSpec, SimSpec, SimulatedData, VarianceComponents, VarianceOptions,
    WeightScheme,
};

use crate::oracles::{self, Canonical, Obs};

/// Outcome of one numeric check.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Check { passed, detail: detail.into() }
    }
}

pub fn valid_pairs() -> Vec<(Family, Link)> {
    let mut out = Vec::new();
    for kind in FamilyKind::ALL {
        let fam = match kind {
            FamilyKind::NegativeBinomial => Family::negative_binomial(0.5).unwrap(),
            k => Family::new(k, None).unwrap(),
        };
        for link in Link::ALL {
            if fam.supports_link(link) {
                out.push((fam, link));
            }
        }
    }
    out
}

/// Intercept that keeps `μ` well inside the mean domain when slopes are small
/// and covariates lie in `[−1, 1]`.
fn safe_intercept(fam: &Family, link: Link) -> f64 {
    match (fam.kind, link.kind) {
        (FamilyKind::Binomial, LinkKind::Identity) => 0.5,
        (FamilyKind::Binomial, LinkKind::Log) => -1.2,
        (FamilyKind::Normal, LinkKind::Identity) => 0.5,
        (_, LinkKind::Identity) => 2.0,
        (_, LinkKind::Log) => 0.3,
        (_, LinkKind::Logit) => 0.2,
        (_, LinkKind::Inverse) => 1.0,
    }
}

/// Draws a response from the family at mean `mu`.
pub fn draw_response(rng: &mut ChaCha8Rng, fam: &Family, mu: f64) -> f64 {
    match fam.kind {
        FamilyKind::Normal => mu + Normal::new(0.0, 1.0).unwrap().sample(rng),
        FamilyKind::Poisson => Poisson::new(mu).unwrap().sample(rng),
        FamilyKind::Binomial => {
            if rng.random::<f64>() < mu {
                1.0
            } else {
                0.0
            }
        }
        FamilyKind::Gamma => Gamma::new(2.0, mu / 2.0).unwrap().sample(rng),
        FamilyKind::InverseGaussian => InverseGaussian::new(mu, 2.0).unwrap().sample(rng),
        FamilyKind::NegativeBinomial => {
            let k = fam.ancillary.unwrap();
            let rate: f64 = Gamma::new(1.0 / k, k * mu).unwrap().sample(rng);
            if rate > 0.0 {
                Poisson::new(rate).unwrap().sample(rng)
            } else {
                0.0
            }
        }
    }
}

pub struct Instance {
    pub frame: ModelFrame,
    pub family: Family,
    pub link: Link,
    pub beta: DVector<f64>,
}

/// Random stratified cluster sample with an intercept plus `p − 1` covariates
/// on `[−1, 1]`. `strata × psus_per × per_psu` rows.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    family: Family,
    link: Link,
    p: usize,
    strata: usize,
    psus_per: usize,
    per_psu: usize,
    unit_weights: bool,
) -> Instance {
    let mut beta = vec![safe_intercept(&family, link)];
    beta.extend((1..p).map(|_| rng.random_range(-0.15..0.15)));
    let beta = DVector::from_vec(beta);
    let n = strata * psus_per * per_psu;
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { 0.0 });
    let mut x = x;
    for i in 0..n {
        for j in 1..p {
            x[(i, j)] = rng.random_range(-1.0..1.0);
        }
    }
    let eta = &x * &beta;
    let y: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let mu = link.invert(e).unwrap();
            draw_response(rng, &family, mu)
        })
        .collect();
    let weights: Vec<f64> =
        (0..n).map(|_| if unit_weights { 1.0 } else { rng.random_range(0.5..3.0) }).collect();
    let mut strata_v = Vec::with_capacity(n);
    let mut psus_v = Vec::with_capacity(n);
    for h in 0..strata {
        for c in 0..psus_per {
            for _ in 0..per_psu {
                strata_v.push(format!("s{h}"));
                psus_v.push(format!("s{h}c{c}"));
            }
        }
    }
    let labels = (0..p).map(|j| format!("x{j}")).collect();
    let frame = ModelFrame::from_parts(
        DVector::from_vec(y),
        x,
        labels,
        weights,
        strata_v,
        psus_v,
        BTreeMap::new(),
    )
    .unwrap();
    Instance { frame, family, link, beta }
}

/// Scale of the evaluation point perturbation used by the derivative suite.
fn jitter(rng: &mut ChaCha8Rng, beta: &DVector<f64>) -> DVector<f64> {
    beta.map(|b| b + rng.random_range(-0.02..0.02))
}

/// Score against a finite-difference gradient of the log-likelihood and the
/// Hessian against a finite-difference Jacobian of the score, over every valid
/// family-link pair. Returns (instances, worst score error, worst Hessian error).
pub fn derivative_suite(per_pair: usize, seed: u64) -> (usize, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut count, mut worst_s, mut worst_h) = (0, 0.0_f64, 0.0_f64);
    for (family, link) in valid_pairs() {
        let phi = match family.kind {
            FamilyKind::Normal => 1.3,
            FamilyKind::Gamma => 0.7,
            FamilyKind::InverseGaussian => 0.4,
            _ => 1.0,
        };
        for _ in 0..per_pair {
            let p = rng.random_range(1..=4);
            let per = rng.random_range(2..=6);
            let inst = random_instance(&mut rng, family, link, p, 2, 2, per, false);
            let at = jitter(&mut rng, &inst.beta);
            let f = &inst.frame;
            let ll = |b: &[f64]| {
                weighted_loglik(f, &family, link, &DVector::from_column_slice(b), phi).unwrap()
            };
            let sc = |b: &[f64]| {
                score_vector(f, &family, link, &DVector::from_column_slice(b), phi)
                    .unwrap()
                    .as_slice()
                    .to_vec()
            };
            let s = score_vector(f, &family, link, &at, phi).unwrap();
            let fd_s = oracles::fd_gradient(ll, at.as_slice(), 1e-4);
            worst_s = worst_s.max(oracles::rel_err(s.as_slice(), &fd_s, 1e-8));

            let (h, _) = hessian_matrix(f, &family, link, &at, phi).unwrap();
            let fd_h = oracles::fd_jacobian(sc, at.as_slice(), 1e-5);
            let h_flat: Vec<f64> = (0..p).flat_map(|i| (0..p).map(move |j| (i, j))).map(|(i, j)| h[(i, j)]).collect();
            let fd_flat: Vec<f64> = fd_h.iter().flatten().copied().collect();
            worst_h = worst_h.max(oracles::rel_err(&h_flat, &fd_flat, 1e-8));
            count += 1;
        }
    }
    (count, worst_s, worst_h)
}

pub fn to_rows(x: &DMatrix<f64>) -> oracles::Mat {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// Unit-weight single-stratum fits against the naive IRLS oracle.
/// Returns (instances, worst componentwise |Δβ|, fits that failed).
pub fn irls_suite(instances: usize, seed: u64) -> (usize, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = [
        (Family::normal(), Link::IDENTITY, Canonical::NormalIdentity),
        (Family::poisson(), Link::LOG, Canonical::PoissonLog),
        (Family::binomial(), Link::LOGIT, Canonical::BinomialLogit),
    ];
    let (mut worst, mut failed) = (0.0_f64, 0);
    for k in 0..instances {
        let (family, link, canon) = cases[k % cases.len()];
        let p = rng.random_range(2..=4);
        let n = rng.random_range(30..=60);
        let mut inst = random_instance(&mut rng, family, link, p, 1, n, 1, true);
        if canon == Canonical::BinomialLogit {
            // stronger slopes so the logistic fit is informative
            let eta = &inst.frame.x * inst.beta.map(|b| 3.0 * b);
            for i in 0..n {
                let mu = 1.0 / (1.0 + (-eta[i]).exp());
                inst.frame.y[i] = if rng.random::<f64>() < mu { 1.0 } else { 0.0 };
            }
        }
        let f = &inst.frame;
        let fit = match fit_pseudo_mle(f, &family, link, &FitConfig::default()) {
            Ok(fit) if fit.converged => fit,
            _ => {
                failed += 1;
                continue;
            }
        };
        let oracle = oracles::naive_irls(&to_rows(&f.x), f.y.as_slice(), &f.weights, canon);
        for j in 0..p {
            worst = worst.max((fit.beta[j] - oracle[j]).abs());
        }
    }
    (instances, worst, failed)
}

pub fn oracle_variance_fn(fam: &Family) -> impl Fn(f64) -> f64 {
    let kind = fam.kind;
    let k = fam.ancillary.unwrap_or(0.0);
    move |mu: f64| match kind {
        FamilyKind::Normal => 1.0,
        FamilyKind::Poisson => mu,
        FamilyKind::Binomial => mu * (1.0 - mu),
        FamilyKind::Gamma => mu * mu,
        FamilyKind::InverseGaussian => mu * mu * mu,
        FamilyKind::NegativeBinomial => mu + k * mu * mu,
    }
}

pub fn oracle_dlink_fn(link: Link) -> impl Fn(f64) -> f64 {
    move |mu: f64| match link.kind {
        LinkKind::Identity => 1.0,
        LinkKind::Log => 1.0 / mu,
        LinkKind::Logit => 1.0 / (mu * (1.0 - mu)),
        LinkKind::Inverse => -1.0 / (mu * mu),
    }
}

/// Library sandwich against the naive loop oracle evaluated at the same `μ̂`.
pub fn oracle_sandwich_for(fit: &FitResult, frame: &ModelFrame, phi: f64) -> oracles::Mat {
    let rows = to_rows(&frame.x);
    let obs: Vec<Obs<'_>> = (0..frame.n())
        .map(|i| Obs {
            x: &rows[i],
            y: frame.y[i],
            w: frame.weights[i],
            mu: fit.mu[i],
            stratum: &frame.strata[i],
            psu: &frame.psus[i],
        })
        .collect();
    oracles::naive_sandwich(
        &obs,
        &frame.fpc,
        oracle_variance_fn(&fit.family),
        oracle_dlink_fn(fit.link),
        phi,
    )
}

pub fn matrix_rel_err(lib: &DMatrix<f64>, oracle: &oracles::Mat) -> f64 {
    let a: Vec<f64> = to_rows(lib).into_iter().flatten().collect();
    let b: Vec<f64> = oracle.iter().flatten().copied().collect();
    oracles::rel_err(&a, &b, 1e-300)
}

/// Random stratified cluster designs (H ≤ 4, n ≤ 50) across the families.
/// Returns (instances, worst relative Frobenius error, fits that failed).
pub fn sandwich_suite(instances: usize, seed: u64) -> (usize, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases = [
        (Family::normal(), Link::IDENTITY),
        (Family::poisson(), Link::LOG),
        (Family::binomial(), Link::LOGIT),
        (Family::gamma(), Link::LOG),
        (Family::inverse_gaussian(), Link::LOG),
        (Family::negative_binomial(0.5).unwrap(), Link::LOG),
    ];
    let (mut worst, mut failed) = (0.0_f64, 0);
    for k in 0..instances {
        let (family, link) = cases[k % cases.len()];
        let h = rng.random_range(1..=4);
        let psus = rng.random_range(2..=3);
        let per = rng.random_range(2..=(50 / (h * psus)).min(6));
        let p = rng.random_range(1..=3);
        let mut inst = random_instance(&mut rng, family, link, p, h, psus, per, false);
        for s in 0..h {
            if rng.random::<f64>() < 0.5 {
                inst.frame.fpc.insert(format!("s{s}"), rng.random_range(0.0..0.6));
            }
        }
        let f = &inst.frame;
        let Ok(fit) = fit_pseudo_mle(f, &family, link, &FitConfig::default()) else {
            failed += 1;
            continue;
        };
        let vc = match sandwich_variance(&fit, f, &f.design_summary(), VarianceOptions::default()) {
            Ok(vc) => vc,
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        let oracle = oracle_sandwich_for(&fit, f, 1.0 + rng.random::<f64>());
        worst = worst.max(matrix_rel_err(&vc.vbeta, &oracle));
    }
    (instances, worst, failed)
}

pub const EXAMPLE_FORMULA: &str = "y ~ 1 + center(age) + C(gender, ref=Male) + C(educ, ref=\"9-15 years\")";

/// Stratified design with two PSUs per stratum and unequal weights.
pub fn example_spec(family: Family, link: Link, beta: Vec<f64>, seed: u64) -> SimSpec {
    SimSpec {
        strata: 8,
        psus_per_stratum: 2,
        obs_per_psu: 30,
        formula: EXAMPLE_FORMULA.into(),
        beta,
        family,
        link,
        dispersion: 1.0,
        weights: WeightScheme::Uniform { lo: 0.5, hi: 4.0 },
        fpc: None,
        psu_effect_sd: 0.2,
        seed,
    }
}

/// Design rows rebuilt from the CSV text without the library's frame code:
/// intercept, weighted-centered age, gender dummies (Female, Other vs Male),
/// education dummies (0-8, 16+ vs 9-15).
pub struct NaiveTable {
    pub x: oracles::Mat,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub strata: Vec<String>,
    pub psus: Vec<String>,
    pub labels: Vec<&'static str>,
}

pub fn naive_table(csv_text: &str, weight_scale: f64) -> NaiveTable {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (ci, cs, cp, cw, ca, cg, ce) =
        (col("y"), col("stratum"), col("psu"), col("w"), col("age"), col("gender"), col("educ"));
    let records: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    let w: Vec<f64> = records.iter().map(|r| r[cw].parse::<f64>().unwrap() * weight_scale).collect();
    let age: Vec<f64> = records.iter().map(|r| r[ca].parse().unwrap()).collect();
    let mean_age = age.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / w.iter().sum::<f64>();
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    let x = records
        .iter()
        .zip(&age)
        .map(|(r, a)| {
            vec![
                1.0,
                a - mean_age,
                ind(r[cg] == "Female"),
                ind(r[cg] == "Other"),
                ind(r[ce] == "0-8 years"),
                ind(r[ce] == "16+ years"),
            ]
        })
        .collect();
    NaiveTable {
        x,
        y: records.iter().map(|r| r[ci].parse().unwrap()).collect(),
        w,
        strata: records.iter().map(|r| r[cs].clone()).collect(),
        psus: records.iter().map(|r| r[cp].clone()).collect(),
        labels: vec![
            "(Intercept)",
            "center(age)",
            "gender=Female",
            "gender=Other",
            "educ=0-8 years",
            "educ=16+ years",
        ],
    }
}

pub struct ExampleFit {
    pub data: SimulatedData,
    pub frame: ModelFrame,
    pub fit: FitResult,
    pub vc: VarianceComponents,
}

pub fn fit_example(spec: &SimSpec, family: Family, link: Link, weight_scale: f64) -> ExampleFit {
    let data = simulate(spec).unwrap();
    let ds = data.dataset().unwrap();
    let frame = build_model_frame(&ds, &ModelSpec::parse(EXAMPLE_FORMULA).unwrap())
        .unwrap()
        .with_scaled_weights(weight_scale);
    let fit = fit_pseudo_mle(&frame, &family, link, &FitConfig::default()).unwrap();
    let vc = sandwich_variance(&fit, &frame, &frame.design_summary(), VarianceOptions::default()).unwrap();
    ExampleFit { data, frame, fit, vc }
}

/// Library β̂ and SEs against the naive pipeline on the simulated CSV.
/// Returns (worst |Δβ| / max(1, |β|), worst |ΔSE| / max(1, SE), labels match).
pub fn compare_with_naive_pipeline(ex: &ExampleFit, canon: Canonical) -> (f64, f64, bool) {
    let text = ex.data.to_csv_string().unwrap();
    let t = naive_table(&text, 1.0);
    let beta = oracles::naive_irls(&t.x, &t.y, &t.w, canon);
    let mu: Vec<f64> = t
        .x
        .iter()
        .map(|r| canon.mean(r.iter().zip(&beta).map(|(a, b)| a * b).sum()))
        .collect();
    let obs: Vec<Obs<'_>> = (0..t.y.len())
        .map(|i| Obs { x: &t.x[i], y: t.y[i], w: t.w[i], mu: mu[i], stratum: &t.strata[i], psu: &t.psus[i] })
        .collect();
    let (var, dlink): (Box<dyn Fn(f64) -> f64>, Box<dyn Fn(f64) -> f64>) = match canon {
        Canonical::NormalIdentity => (Box::new(|_| 1.0), Box::new(|_| 1.0)),
        Canonical::PoissonLog => (Box::new(|m| m), Box::new(|m| 1.0 / m)),
        Canonical::BinomialLogit => (Box::new(|m| m * (1.0 - m)), Box::new(|m| 1.0 / (m * (1.0 - m)))),
    };
    let v = oracles::naive_sandwich(&obs, &BTreeMap::new(), var, dlink, 1.7);
    let mut worst_b = 0.0_f64;
    let mut worst_se = 0.0_f64;
    let se = ex.vc.std_errors();
    for j in 0..beta.len() {
        worst_b = worst_b.max((ex.fit.beta[j] - beta[j]).abs() / beta[j].abs().max(1.0));
        let se_o = v[j][j].sqrt();
        worst_se = worst_se.max((se[j] - se_o).abs() / se_o.max(1.0));
    }
    let labels_match = ex.frame.column_labels.iter().map(String::as_str).eq(t.labels.iter().copied());
    (worst_b, worst_se, labels_match)
}

/// Largest `|F − (β̂ⱼ/SEⱼ)²| / max(1, F)` and `|p_F − p_t|` over single coefficients.
pub fn scalar_wald_consistency(ex: &ExampleFit) -> (f64, f64) {
    let design = ex.frame.design_summary();
    let se = ex.vc.std_errors();
    let (mut worst_f, mut worst_p) = (0.0_f64, 0.0_f64);
    for j in 0..ex.frame.p() {
        let label = ex.frame.column_labels[j].as_str();
        let l = ContrastMatrix::select(&ex.frame, &[label]).unwrap();
        let r = svyglm::wald_test(&ex.fit.beta, &ex.vc.vbeta, &l, DfMode::Design, &design).unwrap();
        let t = ex.fit.beta[j] / se[j];
        worst_f = worst_f.max((r.f_stat - t * t).abs() / r.f_stat.max(1.0));
        let pt = svyglm::t_two_sided_p(t, r.ddf).unwrap();
        worst_p = worst_p.max((r.p_value - pt).abs());
    }
    (worst_f, worst_p)
}

/// Worst change in (F, p) when `L` is replaced by `M·L` for random invertible `M`,
/// plus whether `ndf` stayed fixed.
pub fn contrast_invariance(ex: &ExampleFit, trials: usize, seed: u64) -> (f64, f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = ex.frame.design_summary();
    let base = ContrastMatrix::select(&ex.frame, &["C(educ)", "C(gender)"]).unwrap();
    let r0 = svyglm::wald_test(&ex.fit.beta, &ex.vc.vbeta, &base, DfMode::Design, &design).unwrap();
    let q = base.l.nrows();
    let (mut wf, mut wp, mut same_ndf) = (0.0_f64, 0.0_f64, true);
    let mut done = 0;
    while done < trials {
        let m: DMatrix<f64> = DMatrix::from_fn(q, q, |_, _| rng.random_range(-2.0..2.0));
        if m.determinant().abs() < 0.1 {
            continue;
        }
        let mixed = ContrastMatrix::new(&m * &base.l, base.labels.clone()).unwrap();
        let r = svyglm::wald_test(&ex.fit.beta, &ex.vc.vbeta, &mixed, DfMode::Design, &design).unwrap();
        wf = wf.max((r.f_stat - r0.f_stat).abs() / r0.f_stat.max(1.0));
        wp = wp.max((r.p_value - r0.p_value).abs());
        same_ndf &= r.ndf == r0.ndf;
        done += 1;
    }
    (wf, wp, same_ndf)
}

pub const F_GRID: [f64; 11] = [0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 7.5, 10.0];

/// Worst `|f_survival − quadrature|` over `F_GRID × d1 ∈ 1..=5 × d2 ∈ 1..=30`,
/// and whether each `(d1, d2)` curve is monotone decreasing within `[0, 1]`.
pub fn f_survival_grid() -> (f64, bool) {
    let mut worst = 0.0_f64;
    let mut monotone = true;
    for d1 in 1..=5 {
        for d2 in 1..=30 {
            let mut prev = 1.0;
            for &f in &F_GRID {
                let p = svyglm::f_survival(f, d1 as f64, d2 as f64).unwrap();
                let o = oracles::f_survival_quadrature(f, d1 as f64, d2 as f64);
                worst = worst.max((p - o).abs());
                monotone &= (0.0..=1.0).contains(&p) && p <= prev;
                prev = p;
            }
        }
    }
    (worst, monotone)
}
