//! Synthetic stochastic objectives with known optimum and Lipschitz constants.
//!
//! Every problem is defined on all of `R^n`; the constants are certified on
//! the Euclidean `mu0`-neighbourhood of the simplex with `mu0 = 1`. Noise is
//! additive, `eta ~ U[-r, r]^n`, so condition bounds hold with probability one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sampling::{check_dim, dot, sign};
use crate::simplex::SimplexPoint;
use crate::{Error, Result, RngStream};

/// Radius of the neighbourhood of the simplex on which every fixture keeps its constants.
pub const MU0: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// `<c + eta, x>`
    #[serde(rename = "linear")]
    LinearNoisy,
    /// `||x - x*||_1 + <eta, x>`
    #[serde(rename = "distl1")]
    NonsmoothDistL1,
    /// `1/2 ||x - x* + eta||_2^2`
    #[serde(rename = "quad")]
    SmoothQuadratic,
    /// `max_i w_i x_i + <eta, x>`
    #[serde(rename = "maxlin")]
    MaxOfLinear,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 4] = [
        ProblemKind::LinearNoisy,
        ProblemKind::NonsmoothDistL1,
        ProblemKind::SmoothQuadratic,
        ProblemKind::MaxOfLinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::LinearNoisy => "linear",
            ProblemKind::NonsmoothDistL1 => "distl1",
            ProblemKind::SmoothQuadratic => "quad",
            ProblemKind::MaxOfLinear => "maxlin",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown problem '{s}' (linear|distl1|quad|maxlin)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Objective {
    Linear { c: Vec<f64> },
    DistL1 { target: Vec<f64> },
    Quadratic { target: Vec<f64> },
    MaxLinear { weights: Vec<f64> },
    Constant { value: f64 },
}

/// Lipschitz constants of `f(.; eta)`, uniform in `eta` and over the neighbourhood.
///
/// `m1`, `m2`, `m_inf` are Lipschitz constants with respect to the l1, l2 and
/// l-inf norms, i.e. bounds on the l-inf, l2 and l1 norms of the stochastic
/// subgradient. `m1` is the `M` of the bounded-subgradient condition.
/// `l2` is the l2 Lipschitz constant of the gradient, `inf` when nonsmooth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Constants {
    pub m1: f64,
    pub m2: f64,
    pub m_inf: f64,
    pub l2: f64,
}

#[derive(Clone, Debug)]
pub struct StochasticProblem {
    kind: Option<ProblemKind>,
    objective: Objective,
    n: usize,
    noise_radius: f64,
    x_star: SimplexPoint,
    f_star: f64,
    constants: Constants,
}

impl StochasticProblem {
    /// `f(x; eta) = <c + eta, x>`.
    pub fn linear(c: Vec<f64>, noise_radius: f64) -> Result<Self> {
        let n = c.len();
        check_dim(n)?;
        check_radius(noise_radius)?;
        let r = noise_radius;
        let (imin, cmin) = c
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) });
        // sup over the noise box of the dual norms of c + eta
        let worst: Vec<f64> = c.iter().map(|v| v.abs() + r).collect();
        let constants = Constants {
            m1: worst.iter().fold(0.0, |m: f64, v| m.max(*v)),
            m2: worst.iter().map(|v| v * v).sum::<f64>().sqrt(),
            m_inf: worst.iter().sum(),
            l2: 0.0,
        };
        Ok(Self {
            kind: Some(ProblemKind::LinearNoisy),
            x_star: SimplexPoint::vertex(n, imin)?,
            f_star: cmin,
            objective: Objective::Linear { c },
            n,
            noise_radius,
            constants,
        })
    }

    /// `f(x; eta) = ||x - target||_1 + <eta, x>`.
    pub fn dist_l1(target: SimplexPoint, noise_radius: f64) -> Result<Self> {
        check_radius(noise_radius)?;
        let n = target.dim();
        let nf = n as f64;
        let a = 1.0 + noise_radius;
        Ok(Self {
            kind: Some(ProblemKind::NonsmoothDistL1),
            objective: Objective::DistL1 {
                target: target.coords().to_vec(),
            },
            n,
            noise_radius,
            x_star: target,
            f_star: 0.0,
            constants: Constants {
                m1: a,
                m2: nf.sqrt() * a,
                m_inf: nf * a,
                l2: f64::INFINITY,
            },
        })
    }

    /// `f(x; eta) = 1/2 ||x - target + eta||_2^2`.
    pub fn quadratic(target: SimplexPoint, noise_radius: f64) -> Result<Self> {
        check_radius(noise_radius)?;
        let n = target.dim();
        let nf = n as f64;
        let t = target.coords();
        // max over vertices of ||e_k - target||_q; convex in x, so this is the sup over the simplex
        let (mut a1, mut a2, mut ainf) = (0.0f64, 0.0f64, 0.0f64);
        let total_sq: f64 = t.iter().map(|v| v * v).sum();
        let total_abs: f64 = t.iter().map(|v| v.abs()).sum();
        let max_other = |k: usize| {
            t.iter()
                .enumerate()
                .filter(|(i, _)| *i != k)
                .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
        };
        for (k, &tk) in t.iter().enumerate() {
            let dk = 1.0 - tk;
            a1 = a1.max(total_abs - tk.abs() + dk.abs());
            a2 = a2.max((total_sq - tk * tk + dk * dk).sqrt());
            ainf = ainf.max(dk.abs().max(max_other(k)));
        }
        let r = noise_radius;
        Ok(Self {
            kind: Some(ProblemKind::SmoothQuadratic),
            objective: Objective::Quadratic { target: t.to_vec() },
            n,
            noise_radius,
            f_star: nf * r * r / 6.0,
            x_star: target,
            // the l2 neighbourhood adds at most mu0 in l2 and l-inf, sqrt(n) mu0 in l1
            constants: Constants {
                m1: ainf + MU0 + r,
                m2: a2 + MU0 + r * nf.sqrt(),
                m_inf: a1 + MU0 * nf.sqrt() + r * nf,
                l2: 1.0,
            },
        })
    }

    /// `f(x; eta) = max_i w_i x_i + <eta, x>` with all `w_i > 0`.
    ///
    /// The minimiser equalises the products: `x*_i ∝ 1/w_i`, `f* = 1 / sum 1/w_i`.
    pub fn max_of_linear(weights: Vec<f64>, noise_radius: f64) -> Result<Self> {
        let n = weights.len();
        check_dim(n)?;
        check_radius(noise_radius)?;
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::invalid("max-of-linear weights must be positive"));
        }
        let inv_sum: f64 = weights.iter().map(|w| 1.0 / w).sum();
        let x_star = SimplexPoint::new(weights.iter().map(|w| 1.0 / w / inv_sum).collect())?;
        let r = noise_radius;
        let wmax = weights.iter().fold(0.0f64, |m, w| m.max(*w));
        let nf = n as f64;
        Ok(Self {
            kind: Some(ProblemKind::MaxOfLinear),
            objective: Objective::MaxLinear { weights },
            n,
            noise_radius,
            x_star,
            f_star: 1.0 / inv_sum,
            constants: Constants {
                m1: wmax + r,
                m2: ((wmax + r).powi(2) + (nf - 1.0) * r * r).sqrt(),
                m_inf: wmax + nf * r,
                l2: f64::INFINITY,
            },
        })
    }

    /// `f(x; eta) = value`, noise-free. A fixture for zero-difference checks.
    pub fn constant(n: usize, value: f64) -> Result<Self> {
        check_dim(n)?;
        Ok(Self {
            kind: None,
            objective: Objective::Constant { value },
            n,
            noise_radius: 0.0,
            x_star: SimplexPoint::uniform(n)?,
            f_star: value,
            constants: Constants {
                m1: 0.0,
                m2: 0.0,
                m_inf: 0.0,
                l2: 0.0,
            },
        })
    }

    pub fn kind(&self) -> Option<ProblemKind> {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn noise_radius(&self) -> f64 {
        self.noise_radius
    }

    pub fn x_star(&self) -> &SimplexPoint {
        &self.x_star
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn constants(&self) -> Constants {
        self.constants
    }

    /// The `M` of the bounded-subgradient condition: `||grad f(x; eta)||_inf <= M`.
    pub fn m(&self) -> f64 {
        self.constants.m1
    }

    pub fn mu0(&self) -> f64 {
        MU0
    }

    /// Draws one realization `eta` into `eta` (length `n`).
    pub fn sample_realization(&self, rng: &mut RngStream, eta: &mut [f64]) {
        if self.noise_radius == 0.0 || matches!(self.objective, Objective::Constant { .. }) {
            eta.fill(0.0);
            return;
        }
        for v in eta.iter_mut() {
            *v = self.noise_radius * rng.symmetric();
        }
    }

    pub fn new_realization(&self, rng: &mut RngStream) -> Vec<f64> {
        let mut eta = vec![0.0; self.n];
        self.sample_realization(rng, &mut eta);
        eta
    }

    /// Realization value `f(x; eta)`.
    pub fn eval(&self, x: &[f64], eta: &[f64]) -> f64 {
        match &self.objective {
            Objective::Linear { c } => c.iter().zip(eta).zip(x).map(|((c, e), x)| (c + e) * x).sum(),
            Objective::DistL1 { target } => {
                target.iter().zip(x).map(|(t, x)| (x - t).abs()).sum::<f64>() + dot(eta, x)
            }
            Objective::Quadratic { target } => {
                0.5 * target
                    .iter()
                    .zip(x)
                    .zip(eta)
                    .map(|((t, x), e)| (x - t + e).powi(2))
                    .sum::<f64>()
            }
            Objective::MaxLinear { weights } => {
                weights
                    .iter()
                    .zip(x)
                    .fold(f64::NEG_INFINITY, |m, (w, x)| m.max(w * x))
                    + dot(eta, x)
            }
            Objective::Constant { value } => *value,
        }
    }

    /// A stochastic subgradient of `f(.; eta)` at `x`.
    ///
    /// Kinks use `sign(0) = +1` and the first maximising index.
    pub fn grad(&self, x: &[f64], eta: &[f64], out: &mut [f64]) {
        match &self.objective {
            Objective::Linear { c } => {
                for ((o, c), e) in out.iter_mut().zip(c).zip(eta) {
                    *o = c + e;
                }
            }
            Objective::DistL1 { target } => {
                for (((o, t), x), e) in out.iter_mut().zip(target).zip(x).zip(eta) {
                    *o = sign(x - t) + e;
                }
            }
            Objective::Quadratic { target } => {
                for (((o, t), x), e) in out.iter_mut().zip(target).zip(x).zip(eta) {
                    *o = x - t + e;
                }
            }
            Objective::MaxLinear { weights } => {
                let i = first_argmax(weights, x);
                out.copy_from_slice(eta);
                out[i] += weights[i];
            }
            Objective::Constant { .. } => out.fill(0.0),
        }
    }

    /// Expected objective `f(x) = E f(x; eta)`, in closed form.
    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.objective {
            Objective::Quadratic { target } => {
                0.5 * target.iter().zip(x).map(|(t, x)| (x - t).powi(2)).sum::<f64>() + self.f_star
            }
            _ => {
                let zero = vec![0.0; self.n];
                self.eval(x, &zero)
            }
        }
    }

    /// A subgradient of the expected objective, with the same kink conventions as [`Self::grad`].
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let zero = vec![0.0; self.n];
        self.grad(x, &zero, out);
    }

    pub fn label(&self) -> &'static str {
        self.kind.map_or("constant", ProblemKind::name)
    }
}

fn first_argmax(weights: &[f64], x: &[f64]) -> usize {
    let mut best = 0;
    let mut val = weights[0] * x[0];
    for i in 1..weights.len() {
        let v = weights[i] * x[i];
        if v > val {
            best = i;
            val = v;
        }
    }
    best
}

fn check_radius(r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("noise radius must be finite and >= 0, got {r}")))
    }
}

/// Builds a random instance of `kind`.
///
/// - `LinearNoisy`: `c ~ U[0, 1]^n`, noise radius 0.5;
/// - `NonsmoothDistL1`: `x* = 0.6 e_k + 0.4 u` with `k` uniform and `u` uniform on the simplex, radius 0.5;
/// - `SmoothQuadratic`: `x* = e_k` with `k` uniform, radius 0.1;
/// - `MaxOfLinear`: `w ~ U[1, 2]^n`, radius 0.5.
pub fn make_problem(kind: ProblemKind, n: usize, rng: &mut RngStream) -> Result<StochasticProblem> {
    check_dim(n)?;
    match kind {
        ProblemKind::LinearNoisy => {
            let c = (0..n).map(|_| rng.uniform()).collect();
            StochasticProblem::linear(c, 0.5)
        }
        ProblemKind::NonsmoothDistL1 => {
            let k = rng.index(n);
            let mut w: Vec<f64> = (0..n).map(|_| -rng.open01().ln()).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v = 0.4 * *v / s);
            w[k] += 0.6;
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            StochasticProblem::dist_l1(SimplexPoint::new(w)?, 0.5)
        }
        ProblemKind::SmoothQuadratic => {
            let k = rng.index(n);
            StochasticProblem::quadratic(SimplexPoint::vertex(n, k)?, 0.1)
        }
        ProblemKind::MaxOfLinear => {
            let w = (0..n).map(|_| 1.0 + rng.uniform()).collect();
            StochasticProblem::max_of_linear(w, 0.5)
        }
    }
}

/// `f(x) - f*` from the closed-form objective.
pub fn optimality_gap(problem: &StochasticProblem, x: &SimplexPoint) -> f64 {
    problem.value(x.coords()) - problem.f_star()
}
