//! Random directions for the gradient surrogates.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, RngStream};

/// How a random direction is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Uniform on the unit l1 sphere.
    L1Sphere,
    /// Uniform on the unit l2 sphere.
    L2Sphere,
    /// Uniform on the surface of the unit cube `[-1, 1]^n`.
    LInfSphere,
    /// Uniform in the cube `[-1, 1]^n` (large-n stand-in for [`Scheme::LInfSphere`]).
    LInfBall,
    /// i.i.d. signs.
    Rademacher,
    /// `sqrt(n) * e_i` with `i` uniform.
    Coordinate,
    /// Uniform in the unit l1 ball.
    L1Ball,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub coords: Vec<f64>,
    pub scheme: Scheme,
}

impl Direction {
    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

pub fn check_dim(n: usize) -> Result<()> {
    if n < 2 {
        Err(Error::InvalidDimension(n))
    } else {
        Ok(())
    }
}

pub fn sample_direction(scheme: Scheme, n: usize, rng: &mut RngStream) -> Result<Direction> {
    check_dim(n)?;
    let mut coords = vec![0.0; n];
    sample_into(scheme, rng, &mut coords);
    Ok(Direction { coords, scheme })
}

/// Fills `out` with one draw. The dimension is `out.len()`, assumed `>= 2`.
pub fn sample_into(scheme: Scheme, rng: &mut RngStream, out: &mut [f64]) {
    let n = out.len();
    match scheme {
        Scheme::L1Sphere => l1_sphere(rng, out),
        Scheme::L2Sphere => l2_sphere(rng, out),
        Scheme::LInfSphere => {
            for v in out.iter_mut() {
                *v = rng.symmetric();
            }
            // every face has the same area, so pick one uniformly
            let face = rng.index(n);
            out[face] = rng.sign();
        }
        Scheme::LInfBall => {
            for v in out.iter_mut() {
                *v = rng.symmetric();
            }
        }
        Scheme::Rademacher => {
            for v in out.iter_mut() {
                *v = rng.sign();
            }
        }
        Scheme::Coordinate => {
            out.fill(0.0);
            out[rng.index(n)] = (n as f64).sqrt();
        }
        Scheme::L1Ball => {
            l1_sphere(rng, out);
            let r = rng.uniform().powf(1.0 / n as f64);
            out.iter_mut().for_each(|v| *v *= r);
        }
    }
}

fn l1_sphere(rng: &mut RngStream, out: &mut [f64]) {
    loop {
        let mut norm = 0.0;
        for v in out.iter_mut() {
            *v = rng.laplace();
            norm += v.abs();
        }
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
            return;
        }
    }
}

fn l2_sphere(rng: &mut RngStream, out: &mut [f64]) {
    loop {
        let mut sq = 0.0;
        for v in out.iter_mut() {
            *v = rng.standard_normal();
            sq += *v * *v;
        }
        if sq > 0.0 {
            let norm = sq.sqrt();
            out.iter_mut().for_each(|v| *v /= norm);
            return;
        }
    }
}

/// Uniform draw from the unit l2 ball.
pub fn l2_ball_into(rng: &mut RngStream, out: &mut [f64]) {
    l2_sphere(rng, out);
    let r = rng.uniform().powf(1.0 / out.len() as f64);
    out.iter_mut().for_each(|v| *v *= r);
}

/// `sign` with `sign(0) = +1`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Index of the largest `|e_i|`, smallest index on ties.
pub fn argmax_abs(e: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in e.iter().enumerate().skip(1) {
        if v.abs() > e[best].abs() {
            best = i;
        }
    }
    best
}

/// Unit outward normal of the unit sphere of the direction's scheme at `e`.
///
/// - l1: `(sign e_1, ..., sign e_n) / sqrt(n)`;
/// - l2: `e` itself;
/// - l-inf: `sign(e_i) * e_i` for `i = argmax |e_i|`.
pub fn surface_normal(e: &Direction) -> Result<Vec<f64>> {
    let n = e.dim();
    match e.scheme {
        Scheme::L1Sphere => {
            let s = 1.0 / (n as f64).sqrt();
            Ok(e.coords.iter().map(|&v| sign(v) * s).collect())
        }
        Scheme::L2Sphere => Ok(e.coords.clone()),
        Scheme::LInfSphere | Scheme::LInfBall => {
            let i = argmax_abs(&e.coords);
            let mut out = vec![0.0; n];
            out[i] = sign(e.coords[i]);
            Ok(out)
        }
        other => Err(Error::UnsupportedScheme(other)),
    }
}

pub fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
