//! BMO-type functionals over a dyadic ball family, the duality pairing and a
//! John-Nirenberg certificate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forms::{cup, Form};
use crate::grid::{ordered_sum, Ball, Grid};
use crate::growth::{chi_ball_norm, GrowthFunction, DEFAULT_TOL};

/// Balls of radius `L 2^{-m}`, `m = 0..=log2(N/4)`, centered on multiples of
/// the radius and contained in the box.
pub fn dyadic_balls(grid: &Grid) -> Vec<Ball> {
    let n = grid.dim();
    let top = ((grid.points() / 4) as f64).log2().floor() as i32;
    let mut out = Vec::new();
    for m in 0..=top {
        let r = grid.half_len() / 2f64.powi(m);
        if r <= grid.spacing() {
            continue;
        }
        let reach = ((grid.half_len() - r) / r + 1e-9).floor() as i64;
        let side = (2 * reach + 1) as usize;
        for flat in 0..side.pow(n as u32) {
            let mut center = [0.0; 3];
            let mut rest = flat;
            for c in center.iter_mut().take(n) {
                *c = ((rest % side) as i64 - reach) as f64 * r;
                rest /= side;
            }
            out.push(Ball { center, radius: r });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmoReport {
    pub bmo_wp: f64,
    pub bmo_plus: f64,
    pub worst_center: Vec<f64>,
    pub worst_radius: f64,
    pub jn_value: f64,
}

/// Weighted oscillation `∫_B |g - g_B|^p w`.
fn oscillation(g: &Form, cells: &[usize], power: f64, weight: impl Fn(usize) -> f64) -> f64 {
    let grid = g.grid();
    let count = cells.len() as f64;
    let means: Vec<f64> = g.components().iter().map(|c| ordered_sum(cells.iter().map(|&i| c[i])) / count).collect();
    grid.cell_volume()
        * ordered_sum(cells.iter().map(|&i| {
            let d2: f64 = g.components().iter().zip(&means).map(|(c, m)| (c[i] - m).powi(2)).sum();
            d2.sqrt().powf(power) * weight(i)
        }))
}

/// Sup over `balls` of `score(ball)`, with the first maximizer on ties.
fn ball_sup(balls: &[Ball], score: impl Fn(&Ball) -> Result<f64> + Sync) -> Result<(f64, Option<Ball>)> {
    if balls.is_empty() {
        return Err(Error::Geometry("empty ball family".into()));
    }
    let values: Vec<f64> = balls.par_iter().map(&score).collect::<Result<_>>()?;
    let mut best = (0.0, None);
    for (v, b) in values.into_iter().zip(balls) {
        if v > best.0 {
            best = (v, Some(*b));
        }
    }
    Ok(best)
}

fn usable(grid: &Grid, ball: &Ball) -> Result<Vec<usize>> {
    ball.ensure_fits(grid)?;
    let cells = ball.cells(grid);
    if cells.len() < 2 {
        return Err(Error::Geometry("ball must contain at least two cells".into()));
    }
    Ok(cells)
}

/// `sup_B ‖χ_B‖_{L^℘}^{-1} ∫_B |g - g_B|`.
pub fn bmo_wp_norm(g: &Form, gf: &GrowthFunction, balls: &[Ball]) -> Result<f64> {
    Ok(bmo_wp_sup(g, gf, balls)?.0)
}

fn bmo_wp_sup(g: &Form, gf: &GrowthFunction, balls: &[Ball]) -> Result<(f64, Option<Ball>)> {
    ensure_finite(g)?;
    let grid = *g.grid();
    ball_sup(balls, |b| {
        let cells = usable(&grid, b)?;
        Ok(oscillation(g, &cells, 1.0, |_| 1.0) / chi_ball_norm(gf, &grid, b, DEFAULT_TOL)?)
    })
}

/// Classical seminorm `sup_B |B|^{-1} ∫_B |g - g_B|`.
pub fn bmo_seminorm(g: &Form, balls: &[Ball]) -> Result<f64> {
    ensure_finite(g)?;
    let grid = *g.grid();
    Ok(ball_sup(balls, |b| {
        let cells = usable(&grid, b)?;
        Ok(oscillation(g, &cells, 1.0, |_| 1.0) / (cells.len() as f64 * grid.cell_volume()))
    })?
    .0)
}

/// Cells whose centers lie in the unit cube `(0,1)ⁿ`.
pub fn unit_cube_cells(grid: &Grid) -> Result<Vec<usize>> {
    if grid.half_len() < 1.0 {
        return Err(Error::Geometry("the unit cube does not fit in the box".into()));
    }
    let n = grid.dim();
    Ok((0..grid.len())
        .filter(|&i| {
            let p = grid.point(i);
            p[..n].iter().all(|&x| x > 0.0 && x < 1.0)
        })
        .collect())
}

/// `∫_{(0,1)ⁿ} |g| + sup_B |B|^{-1} ∫_B |g - g_B|`.
pub fn bmo_plus_norm(g: &Form, balls: &[Ball]) -> Result<f64> {
    let grid = *g.grid();
    let norms = g.pointwise_norm();
    let cube = grid.cell_volume() * ordered_sum(unit_cube_cells(&grid)?.iter().map(|&i| norms[i]));
    Ok(cube + bmo_seminorm(g, balls)?)
}

/// `∫ f ∧ g` through the cup product, for which discrete Stokes is exact.
pub fn pairing(g: &Form, f: &Form) -> Result<f64> {
    let n = f.grid().dim();
    if f.degree() + g.degree() != n {
        return Err(Error::Degree(format!(
            "pairing needs complementary degrees, got {} and {}",
            f.degree(),
            g.degree()
        )));
    }
    let top = cup(f, g)?;
    Ok(top.integrals()[0])
}

/// `sup_B ‖χ_B‖^{-1} ∫_B |g - g_B|^{q'} ℘(x, ‖χ_B‖^{-1})^{1-q'}`.
pub fn john_nirenberg_certificate(g: &Form, gf: &GrowthFunction, q_dual: f64, balls: &[Ball]) -> Result<f64> {
    if !(q_dual > 1.0) {
        return Err(Error::Input(format!("John-Nirenberg exponent must exceed 1, got {q_dual}")));
    }
    ensure_finite(g)?;
    let grid = *g.grid();
    let dim = grid.dim();
    Ok(ball_sup(balls, |b| {
        let cells = usable(&grid, b)?;
        let chi = chi_ball_norm(gf, &grid, b, DEFAULT_TOL)?;
        let weight = |i: usize| gf.eval_unchecked(&grid.point(i)[..dim], 1.0 / chi).powf(1.0 - q_dual);
        Ok(oscillation(g, &cells, q_dual, weight) / chi)
    })?
    .0)
}

pub fn bmo_report(g: &Form, gf: &GrowthFunction, q_dual: f64, balls: &[Ball]) -> Result<BmoReport> {
    let (bmo_wp, worst) = bmo_wp_sup(g, gf, balls)?;
    let n = g.grid().dim();
    Ok(BmoReport {
        bmo_wp,
        bmo_plus: bmo_plus_norm(g, balls)?,
        worst_center: worst.map(|b| b.center[..n].to_vec()).unwrap_or_default(),
        worst_radius: worst.map_or(0.0, |b| b.radius),
        jn_value: john_nirenberg_certificate(g, gf, q_dual, balls)?,
    })
}

fn ensure_finite(g: &Form) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::Input("non-finite sample in field".into()));
    }
    Ok(())
}
