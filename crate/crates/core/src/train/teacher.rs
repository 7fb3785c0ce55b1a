//! Synthetic regression data labeled by a random teacher network.

use rand_distr::{Distribution, StandardNormal};

use crate::data::{LabeledDataset, Targets};
use crate::dropout::{derive_seed, rng_from_seed};
use crate::error::{dim_err, Result};
use crate::linalg::Matrix;
use crate::net::Network;

/// Teacher `[input_dim, w, w, 1]` and `samples` standard Gaussian inputs
/// labeled by it.
pub fn make_teacher_student_data(
    teacher_width: usize,
    input_dim: usize,
    samples: usize,
    seed: u64,
) -> Result<(Network, LabeledDataset)> {
    make_teacher_student_data_with(&[input_dim, teacher_width, teacher_width, 1], samples, seed)
}

/// Teacher with architecture `dims`. Entries of `A_i` are drawn from
/// `N(0, 1/fan_in)`, which keeps the targets of order one at any width.
pub fn make_teacher_student_data_with(dims: &[usize], samples: usize, seed: u64) -> Result<(Network, LabeledDataset)> {
    if dims.len() < 2 || dims.contains(&0) {
        return dim_err(format!("invalid teacher architecture {dims:?}"));
    }
    let mut wrng = rng_from_seed(derive_seed(seed, 0));
    let weights = dims
        .windows(2)
        .map(|w| {
            let scale = 1.0 / (w[0] as f64).sqrt();
            let data = (0..w[0] * w[1])
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut wrng);
                    scale * z
                })
                .collect();
            Matrix::new(w[1], w[0], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let teacher = Network::new(weights)?;

    let mut xrng = rng_from_seed(derive_seed(seed, 1));
    let n_in = dims[0];
    let xs: Vec<f64> = (0..samples * n_in).map(|_| StandardNormal.sample(&mut xrng)).collect();
    let inputs = Matrix::new(samples, n_in, xs)?;
    let mut ys = Vec::with_capacity(samples * teacher.output_dim());
    for s in 0..samples {
        ys.extend(teacher.output(inputs.row(s)));
    }
    let targets = Targets::Values(Matrix::new(samples, teacher.output_dim(), ys)?);
    let data = LabeledDataset::new(inputs, targets, format!("teacher {dims:?} seed {seed}"))?;
    Ok((teacher, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{loss, LossKind};

    #[test]
    fn teacher_fits_its_own_data() {
        let (teacher, data) = make_teacher_student_data(4, 6, 200, 9).unwrap();
        assert_eq!(teacher.dims(), vec![6, 4, 4, 1]);
        assert_eq!(loss(LossKind::Squared, &teacher, &data).unwrap().loss, 0.0);
        let (t2, d2) = make_teacher_student_data(4, 6, 200, 9).unwrap();
        assert_eq!((teacher, data), (t2, d2));
    }
}
