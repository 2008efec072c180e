//! Compactly supported primitives of closed forms.
//!
//! Solves `min ‖dβ - a‖₂` over `(ℓ-1)`-forms `β` supported in a dilated ball
//! by conjugate gradients on the normal equations, with `δ` as the exact
//! adjoint of `d`.

use serde::{Deserialize, Serialize};

use crate::atoms::d_residual;
use crate::error::{Error, Result};
use crate::forms::{codifferential, exterior_derivative, inv_laplacian, Form};
use crate::grid::Ball;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveOptions {
    /// Dilation of the ball that carries the primitive.
    pub dilation: f64,
    pub max_iter: usize,
    /// Stopping tolerance on `‖dβ - a‖ / ‖a‖`.
    pub tol: f64,
    /// Largest residual accepted as a primitive.
    pub accept: f64,
    /// Largest tolerated `‖da‖₂ h / ‖a‖₂` of the input.
    pub closed_tol: f64,
}

impl Default for PrimitiveOptions {
    fn default() -> Self {
        Self { dilation: 1.5, max_iter: 20_000, tol: 1e-13, accept: 1e-9, closed_tol: 1e-10 }
    }
}

#[derive(Clone, Debug)]
pub struct Primitive {
    pub form: Form,
    /// Ball carrying the primitive; `dβ` lies in the same ball dilated by
    /// one cell, which still fits in the box.
    pub ball: Ball,
    /// `‖dβ - a‖₂ / ‖a‖₂`.
    pub residual: f64,
    /// `‖β‖₂ / (r ‖a‖₂)`.
    pub size: f64,
    pub iterations: usize,
}

/// Finds `β` supported in the dilated ball with `dβ = a`. The dilation is
/// clipped so that the ball grown by one cell still fits in the box.
pub fn local_primitive(a: &Form, ball: &Ball, opts: &PrimitiveOptions) -> Result<Primitive> {
    let grid = *a.grid();
    if a.degree() == 0 {
        return Err(Error::Degree("0-forms have no primitive".into()));
    }
    ball.ensure_fits(&grid)?;
    let h = grid.spacing();
    let room = ball.max_fitting_radius(&grid) - h;
    if room < ball.radius {
        return Err(Error::Geometry("no room for the primitive and its differential in the box".into()));
    }
    let carrier = ball.with_radius((ball.radius * opts.dilation).max(ball.radius).min(room));
    let mask = carrier.mask(&grid);
    let norm = a.l2_norm();
    if norm == 0.0 {
        return Ok(Primitive {
            form: Form::zeros(grid, a.degree() - 1)?,
            ball: carrier,
            residual: 0.0,
            size: 0.0,
            iterations: 0,
        });
    }
    if !a.is_finite() {
        return Err(Error::Input("non-finite sample in input".into()));
    }
    let leak = a.leak_outside(&ball.mask(&grid));
    if leak > 1e-12 {
        return Err(Error::Support(format!("{leak:e} of the form lies outside the ball")));
    }
    let closed = d_residual(a)?;
    if closed > opts.closed_tol {
        return Err(Error::Domain(format!("form is not closed: d residual {closed:e}")));
    }
    let scale = a.max_abs();
    if a.means().iter().any(|m| m.abs() > 1e-10 * scale) {
        return Err(Error::Domain("form with non-zero mean has no compactly supported primitive".into()));
    }

    let forward = |b: &Form| exterior_derivative(&b.restrict(&mask));
    let adjoint = |r: &Form| Ok::<_, Error>(codifferential(r)?.restrict(&mask));

    // warm start from the global coexact primitive
    let mut beta = codifferential(&inv_laplacian(a, 1.0)?)?.restrict(&mask);
    let mut resid = a - &forward(&beta)?;
    let mut s = adjoint(&resid)?;
    let mut p = s.clone();
    let mut gamma = s.inner(&s)?;
    let mut iterations = 0;
    while iterations < opts.max_iter && resid.l2_norm() > opts.tol * norm && gamma > 0.0 {
        let q = forward(&p)?;
        let qq = q.inner(&q)?;
        if qq <= 0.0 {
            break;
        }
        let alpha = gamma / qq;
        beta.axpy(alpha, &p)?;
        resid.axpy(-alpha, &q)?;
        s = adjoint(&resid)?;
        let next = s.inner(&s)?;
        p = &s + &p.scale(next / gamma);
        gamma = next;
        iterations += 1;
    }
    let residual = (a - &exterior_derivative(&beta)?).l2_norm() / norm;
    if residual > opts.accept {
        return Err(Error::Solver(format!("no primitive in the ball: residual {residual:e}")));
    }
    let size = beta.l2_norm() / (ball.radius * norm);
    Ok(Primitive { form: beta, ball: carrier, residual, size, iterations })
}
