//! Truncated stick-breaking Dirichlet-process Gaussian mixture fitted by
//! mean-field variational inference (coordinate ascent on the ELBO).
//!
//! Variational family:
//! - `q(v_k) = Beta(a_k, b_k)` for the first `K - 1` sticks, `v_K = 1`;
//! - `q(mu_k, Lambda_k) = NormalWishart(m_k, beta_k, W_k, nu_k)`;
//! - `q(z_n) = Categorical(r_n)`.
//!
//! Covariance regularization enters through the Wishart prior scale, so
//! every update stays an exact coordinate maximization and the ELBO is
//! monotone up to round-off.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{GaussianComponent, MixtureModel};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpgmmConfig {
    /// Maximum number of mixture components.
    pub truncation: usize,
    /// Stop once the ELBO improves by less than this between iterations.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Beta(1, concentration) stick prior; `None` means `1 / truncation`.
    pub concentration: Option<f64>,
    /// Prior precision scale of the component means, relative to Lambda.
    pub mean_precision_prior: f64,
    /// Wishart prior scale as a fraction of the empirical data covariance.
    pub covariance_prior_scale: f64,
    /// Lloyd refinements after k-means++ seeding.
    pub kmeans_iters: usize,
}

impl Default for DpgmmConfig {
    fn default() -> Self {
        DpgmmConfig {
            truncation: 6,
            tol: 1e-5,
            max_iter: 1000,
            seed: 0,
            concentration: None,
            mean_precision_prior: 1.0,
            covariance_prior_scale: 1.0,
            kmeans_iters: 10,
        }
    }
}

impl DpgmmConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_truncation(mut self, truncation: usize) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
            .unwrap_or(1.0 / self.truncation.max(1) as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::config("truncation must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter must be at least 1"));
        }
        let c = self.concentration();
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config("concentration must be positive"));
        }
        if !(self.mean_precision_prior > 0.0) || !(self.covariance_prior_scale > 0.0) {
            return Err(Error::config("prior scales must be positive"));
        }
        Ok(())
    }
}

/// Per-component variational parameters.
struct NormalWishart {
    beta: f64,
    mean: DVector<f64>,
    /// W^{-1}, the posterior scatter matrix.
    scale_inv: DMatrix<f64>,
    /// Cholesky factor of `scale_inv`.
    chol: Cholesky<f64, Dyn>,
    nu: f64,
    /// E[ln |Lambda|].
    expected_log_det: f64,
}

impl NormalWishart {
    fn new(beta: f64, mean: DVector<f64>, scale_inv: DMatrix<f64>, nu: f64) -> Self {
        let d = mean.len();
        let scale_inv = symmetrize(scale_inv);
        let chol = Cholesky::new(scale_inv.clone())
            .expect("posterior scatter is positive definite by construction");
        let log_det_scale_inv = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let expected_log_det = (1..=d)
            .map(|i| digamma(0.5 * (nu + 1.0 - i as f64)))
            .sum::<f64>()
            + d as f64 * std::f64::consts::LN_2
            - log_det_scale_inv;
        NormalWishart {
            beta,
            mean,
            scale_inv,
            chol,
            nu,
            expected_log_det,
        }
    }

    /// (x - m)^T W (x - m).
    fn mahalanobis(&self, x: &DVector<f64>, m: &DVector<f64>) -> f64 {
        let diff = x - m;
        let z = self
            .chol
            .l()
            .solve_lower_triangular(&diff)
            .expect("triangular solve on a positive definite factor");
        z.norm_squared()
    }

    /// ln |W| = -ln |W^{-1}|.
    fn log_det_scale(&self) -> f64 {
        -2.0 * self.chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// ln B(W, nu), the Wishart log normalizer, from ln |W|.
fn wishart_log_norm(log_det_scale: f64, nu: f64, d: usize) -> f64 {
    let df = d as f64;
    -0.5 * nu * log_det_scale
        - (0.5 * nu * df * std::f64::consts::LN_2
            + 0.25 * df * (df - 1.0) * std::f64::consts::PI.ln()
            + (1..=d).map(|i| ln_gamma(0.5 * (nu + 1.0 - i as f64))).sum::<f64>())
}

struct Prior {
    concentration: f64,
    beta: f64,
    mean: DVector<f64>,
    scale_inv: DMatrix<f64>,
    nu: f64,
    log_norm: f64,
}

struct State {
    /// Stick posteriors (a_k, b_k), length K - 1.
    sticks: Vec<(f64, f64)>,
    components: Vec<NormalWishart>,
    resp: Vec<Vec<f64>>,
}

impl State {
    fn expected_log_weights(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(k);
        let mut rest = 0.0;
        for j in 0..k {
            if j + 1 < k {
                let (a, b) = self.sticks[j];
                let total = digamma(a + b);
                out.push(rest + digamma(a) - total);
                rest += digamma(b) - total;
            } else {
                out.push(rest);
            }
        }
        out
    }

    fn expected_weights(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(k);
        let mut rest = 1.0;
        for j in 0..k {
            if j + 1 < k {
                let (a, b) = self.sticks[j];
                out.push(rest * a / (a + b));
                rest *= b / (a + b);
            } else {
                out.push(rest);
            }
        }
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|w| *w /= total);
        out
    }
}

/// Fits the mixture. Non-convergence within `max_iter` is reported in the
/// diagnostics rather than returned as an error.
pub fn fit_dpgmm(points: &[Vec<f64>], config: &DpgmmConfig) -> Result<MixtureModel> {
    config.validate()?;
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    if d == 0 {
        return Err(Error::DegenerateInput("points must have dimension >= 1".into()));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::domain("points have inconsistent dimensions"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("points contain non-finite values"));
    }
    if n < 2 || n < d + 1 {
        return Err(Error::DegenerateInput(format!(
            "{n} points cannot support a {d}-dimensional mixture (need at least {})",
            (d + 1).max(2)
        )));
    }
    let k = config.truncation;

    // Centre the data; the prior mean is the data mean.
    let centre = points.iter().fold(DVector::zeros(d), |acc, p| acc + DVector::from_column_slice(p))
        / n as f64;
    let xs: Vec<DVector<f64>> = points
        .iter()
        .map(|p| DVector::from_column_slice(p) - &centre)
        .collect();

    let mut cov = DMatrix::zeros(d, d);
    for x in &xs {
        cov += x * x.transpose();
    }
    cov /= (n - 1) as f64;
    let mean_var = cov.trace() / d as f64;
    let reg = if mean_var > 0.0 { 1e-6 * mean_var } else { 1e-12 };
    let scale_inv = cov * config.covariance_prior_scale + DMatrix::identity(d, d) * reg;
    let nu0 = d as f64;
    let prior_chol = Cholesky::new(symmetrize(scale_inv.clone())).expect("regularized prior scale");
    let prior_log_det_scale = -2.0 * prior_chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let prior = Prior {
        concentration: config.concentration(),
        beta: config.mean_precision_prior,
        mean: DVector::zeros(d),
        log_norm: wishart_log_norm(prior_log_det_scale, nu0, d),
        scale_inv,
        nu: nu0,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let labels = kmeans_init(&xs, k, config.kmeans_iters, &mut rng);
    let resp: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| (0..k).map(|j| if j == l { 1.0 } else { 0.0 }).collect())
        .collect();

    let mut state = State {
        sticks: Vec::new(),
        components: Vec::new(),
        resp,
    };
    m_step(&xs, &prior, k, &mut state);
    let mut elbo = compute_elbo(&xs, &prior, k, &state);
    let mut trace = vec![elbo];
    let mut converged = false;
    let mut delta = f64::INFINITY;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        e_step(&xs, k, &mut state);
        m_step(&xs, &prior, k, &mut state);
        let mut next = compute_elbo(&xs, &prior, k, &state);
        if let Some((sorted, sorted_elbo)) = sorted_by_size(&xs, &prior, k, &state) {
            if sorted_elbo >= next {
                state = sorted;
                next = sorted_elbo;
            }
        }
        delta = next - elbo;
        elbo = next;
        trace.push(elbo);
        if delta.abs() < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("DP-GMM did not converge in {iterations} iterations (last ELBO change {delta:e})");
    }

    let weights = state.expected_weights(k);
    let components = state
        .components
        .iter()
        .zip(&weights)
        .map(|(c, &w)| {
            let covariance = symmetrize(&c.scale_inv / c.nu);
            GaussianComponent {
                weight: w,
                mean: (&c.mean + &centre).iter().copied().collect(),
                covariance: covariance.transpose().iter().copied().collect(),
            }
        })
        .collect();

    Ok(MixtureModel {
        dim: d,
        truncation: k,
        concentration: prior.concentration,
        seed: config.seed,
        components,
        n_points: n,
        converged,
        iterations_run: iterations,
        final_elbo_delta: delta,
        elbo,
        elbo_trace: trace,
    })
}

/// The same fit with components relabelled by decreasing expected count,
/// so empty components sit at the end of the stick. `None` if already sorted.
fn sorted_by_size(xs: &[DVector<f64>], prior: &Prior, k: usize, state: &State) -> Option<(State, f64)> {
    let counts: Vec<f64> = (0..k).map(|j| state.resp.iter().map(|r| r[j]).sum()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].total_cmp(&counts[a]));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return None;
    }
    let mut sorted = State {
        sticks: Vec::new(),
        components: Vec::new(),
        resp: state.resp.iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect(),
    };
    m_step(xs, prior, k, &mut sorted);
    let elbo = compute_elbo(xs, prior, k, &sorted);
    Some((sorted, elbo))
}

/// k-means++ seeding followed by a few Lloyd passes; returns hard labels.
fn kmeans_init(xs: &[DVector<f64>], k: usize, iters: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = xs.len();
    let mut centres: Vec<DVector<f64>> = Vec::with_capacity(k);
    centres.push(xs[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = xs.iter().map(|x| (x - &centres[0]).norm_squared()).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centres.push(xs[idx].clone());
        for (i, x) in xs.iter().enumerate() {
            d2[i] = d2[i].min((x - &centres[centres.len() - 1]).norm_squared());
        }
    }

    let nearest = |x: &DVector<f64>, centres: &[DVector<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centres.iter().enumerate() {
            let dist = (x - c).norm_squared();
            if dist < best.1 {
                best = (j, dist);
            }
        }
        best.0
    };
    let mut labels: Vec<usize> = xs.iter().map(|x| nearest(x, &centres)).collect();
    for _ in 0..iters {
        for (j, c) in centres.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> =
                xs.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(x, _)| x).collect();
            if !members.is_empty() {
                *c = members.iter().fold(DVector::zeros(c.len()), |acc, x| acc + *x)
                    / members.len() as f64;
            }
        }
        let next: Vec<usize> = xs.iter().map(|x| nearest(x, &centres)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

fn log_rho(x: &DVector<f64>, comp: &NormalWishart, e_log_pi: f64) -> f64 {
    let d = x.len() as f64;
    e_log_pi + 0.5 * comp.expected_log_det
        - 0.5 * d * LN_2PI
        - 0.5 * (d / comp.beta + comp.nu * comp.mahalanobis(x, &comp.mean))
}

fn e_step(xs: &[DVector<f64>], k: usize, state: &mut State) {
    let e_log_pi = state.expected_log_weights(k);
    for (x, r) in xs.iter().zip(state.resp.iter_mut()) {
        for (j, rj) in r.iter_mut().enumerate() {
            *rj = log_rho(x, &state.components[j], e_log_pi[j]);
        }
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = r.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        r.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
}

fn m_step(xs: &[DVector<f64>], prior: &Prior, k: usize, state: &mut State) {
    let d = prior.mean.len();
    let counts: Vec<f64> = (0..k).map(|j| state.resp.iter().map(|r| r[j]).sum()).collect();

    state.sticks = (0..k.saturating_sub(1))
        .map(|j| {
            let tail: f64 = counts[j + 1..].iter().sum();
            (1.0 + counts[j], prior.concentration + tail)
        })
        .collect();

    state.components = (0..k)
        .map(|j| {
            let nk = counts[j];
            let beta = prior.beta + nk;
            let nu = prior.nu + nk;
            if nk <= 1e-200 {
                return NormalWishart::new(beta, prior.mean.clone(), prior.scale_inv.clone(), nu);
            }
            let weighted_sum = xs
                .iter()
                .zip(&state.resp)
                .fold(DVector::zeros(d), |acc, (x, r)| acc + x * r[j]);
            let xbar = weighted_sum / nk;
            let mut scatter = DMatrix::zeros(d, d);
            for (x, r) in xs.iter().zip(&state.resp) {
                let diff = x - &xbar;
                scatter += &diff * diff.transpose() * r[j];
            }
            let dm = &xbar - &prior.mean;
            let scale_inv = &prior.scale_inv
                + scatter
                + &dm * dm.transpose() * (prior.beta * nk / (prior.beta + nk));
            let mean = (&prior.mean * prior.beta + xbar * nk) / beta;
            NormalWishart::new(beta, mean, scale_inv, nu)
        })
        .collect();
}

fn compute_elbo(xs: &[DVector<f64>], prior: &Prior, k: usize, state: &State) -> f64 {
    let d = prior.mean.len();
    let df = d as f64;
    let e_log_pi = state.expected_log_weights(k);

    // Likelihood + assignment prior - assignment entropy.
    let mut elbo = 0.0;
    for (x, r) in xs.iter().zip(&state.resp) {
        for j in 0..k {
            if r[j] > 0.0 {
                elbo += r[j] * (log_rho(x, &state.components[j], e_log_pi[j]) - r[j].ln());
            }
        }
    }

    // Stick-breaking prior and posterior.
    let gamma = prior.concentration;
    for &(a, b) in &state.sticks {
        let total = digamma(a + b);
        let e_log_v = digamma(a) - total;
        let e_log_1mv = digamma(b) - total;
        elbo += gamma.ln() + (gamma - 1.0) * e_log_1mv;
        elbo -= ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
            + (a - 1.0) * e_log_v
            + (b - 1.0) * e_log_1mv;
    }

    // Normal-Wishart prior and posterior.
    for c in &state.components {
        let inv_l = c
            .chol
            .l()
            .try_inverse()
            .expect("Cholesky factor is invertible");
        let trace_term = (&inv_l * &prior.scale_inv * inv_l.transpose()).trace();
        elbo += 0.5 * df * (prior.beta / (2.0 * std::f64::consts::PI)).ln()
            + 0.5 * c.expected_log_det
            - 0.5 * df * prior.beta / c.beta
            - 0.5 * prior.beta * c.nu * c.mahalanobis(&c.mean, &prior.mean)
            + prior.log_norm
            + 0.5 * (prior.nu - df - 1.0) * c.expected_log_det
            - 0.5 * c.nu * trace_term;

        let log_norm = wishart_log_norm(c.log_det_scale(), c.nu, d);
        let entropy = -log_norm - 0.5 * (c.nu - df - 1.0) * c.expected_log_det + 0.5 * c.nu * df;
        elbo -= 0.5 * c.expected_log_det + 0.5 * df * (c.beta / (2.0 * std::f64::consts::PI)).ln()
            - 0.5 * df
            - entropy;
    }
    elbo
}
