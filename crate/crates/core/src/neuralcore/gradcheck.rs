//! Central finite-difference validation of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` gradients against central differences of `loss_fn`
/// at `probes` randomly chosen scalar parameters and returns the largest
/// relative error. Each probe picks a tensor uniformly, then an entry of it.
pub fn finite_difference_check<F>(
    mut loss_fn: F,
    params: &[Tensor],
    analytic: &[Tensor],
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<f64>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if params.len() != analytic.len()
        || params
            .iter()
            .zip(analytic)
            .any(|(p, g)| p.shape() != g.shape())
    {
        return Err(Error::invalid(
            "gradient shapes do not match parameter shapes",
        ));
    }
    let candidates: Vec<usize> = (0..params.len())
        .filter(|&i| !params[i].is_empty())
        .collect();
    if candidates.is_empty() {
        return Err(Error::invalid("no parameters to probe"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let t = candidates[rng.random_range(0..candidates.len())];
        let e = rng.random_range(0..params[t].len());
        let orig = params[t].data()[e];
        work[t].data_mut()[e] = orig + h;
        let plus = loss_fn(&work)?;
        work[t].data_mut()[e] = orig - h;
        let minus = loss_fn(&work)?;
        work[t].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(relative_error(analytic[t].data()[e], numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::tape::Tape;

    fn linear_loss(params: &[Tensor]) -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 1.0, -1.0]).unwrap());
        let w = tape.leaf(params[0].clone());
        let b = tape.leaf(params[1].clone());
        let y = tape.linear(x, w, b);
        let loss = tape.sq_dist_const(y, Tensor::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(), 0.5);
        let g = tape.backward(loss).unwrap();
        (
            tape.value(loss).data()[0],
            vec![g.wrt(&tape, w), g.wrt(&tape, b)],
        )
    }

    #[test]
    fn linear_model_is_exact() {
        let params = vec![
            Tensor::new(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap(),
            Tensor::new(1, 2, vec![0.05, -0.05]).unwrap(),
        ];
        let (_, grads) = linear_loss(&params);
        let err = finite_difference_check(|p| Ok(linear_loss(p).0), &params, &grads, 30, 1e-4, 0)
            .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let params = vec![Tensor::scalar(1.0)];
        assert!(finite_difference_check(|_| Ok(0.0), &params, &params, 1, 0.0, 0).is_err());
    }
}
