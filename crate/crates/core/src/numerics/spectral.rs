//! Matrix-free largest-singular-value estimation.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    /// Lower estimate of the largest singular value; `‖Jᵀu‖` for the final
    /// unit left vector `u`.
    pub value: f64,
    pub iterations: usize,
    /// `‖v_{k+1} − v_k‖` for the unit right vectors of the last step.
    pub residual: f64,
    pub converged: bool,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Alternating `J` / `Jᵀ` power iteration on `JᵀJ`.
///
/// `forward` and `adjoint` must be mutually adjoint linear maps
/// `ℝ^dim_in → ℝ^dim_out` and back. A map that sends the iterate to zero is
/// reported as `value = 0`, converged.
pub fn power_iteration_smax<F, A>(
    mut forward: F,
    mut adjoint: A,
    dim_in: usize,
    dim_out: usize,
    opts: &PowerIterationOptions,
) -> Result<SpectralEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if !(opts.tol > 0.0) || dim_in == 0 || dim_out == 0 {
        return Err(Error::InvalidConfig(format!(
            "power iteration needs tol > 0 and positive dims, got tol={} dims={dim_in}x{dim_out}",
            opts.tol
        )));
    }
    let mut r = rng::stream(opts.seed, "power-iteration");
    let mut v: Vec<f64> = (0..dim_in).map(|_| StandardNormal.sample(&mut r)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);

    let mut est = SpectralEstimate {
        value: 0.0,
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
    };
    for it in 1..=opts.max_iters {
        let mut u = forward(&v)?;
        check_len("forward", &u, dim_out)?;
        let nu = norm(&u);
        if nu == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: it,
                residual: 0.0,
                converged: true,
            });
        }
        u.iter_mut().for_each(|x| *x /= nu);
        let w = adjoint(&u)?;
        check_len("adjoint", &w, dim_in)?;
        let sigma = norm(&w);
        if sigma == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: it,
                residual: 0.0,
                converged: true,
            });
        }
        let mut residual = 0.0;
        for (vi, wi) in v.iter_mut().zip(&w) {
            let next = wi / sigma;
            residual += (next - *vi) * (next - *vi);
            *vi = next;
        }
        est = SpectralEstimate {
            value: sigma,
            iterations: it,
            residual: residual.sqrt(),
            converged: false,
        };
        if est.residual <= opts.tol {
            est.converged = true;
            break;
        }
    }
    Ok(est)
}

fn check_len(which: &'static str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::shape(
            "power_iteration",
            format!("{which} map returned {} values, expected {n}", v.len()),
        ));
    }
    Ok(())
}

/// Spectral norm of an explicit row-major `rows × cols` matrix.
pub fn matrix_smax(
    a: &[f64],
    rows: usize,
    cols: usize,
    opts: &PowerIterationOptions,
) -> Result<SpectralEstimate> {
    assert_eq!(a.len(), rows * cols);
    power_iteration_smax(
        |v| {
            Ok((0..rows)
                .map(|i| (0..cols).map(|j| a[i * cols + j] * v[j]).sum())
                .collect())
        },
        |u| {
            let mut out = vec![0.0; cols];
            for i in 0..rows {
                for j in 0..cols {
                    out[j] += a[i * cols + j] * u[i];
                }
            }
            Ok(out)
        },
        cols,
        rows,
        opts,
    )
}
