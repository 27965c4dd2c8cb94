//! Principal component analysis through a thin SVD of the centered data.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Pca {
    /// `k×dims`, orthonormal rows, first nonzero loading of each row positive.
    pub components: Tensor,
    /// `samples×k`, the centered data projected onto the components.
    pub projected: Tensor,
    /// Per-component variance (sample variance, `n − 1` denominator),
    /// non-increasing.
    pub explained_variance: Vec<f64>,
    pub mean: Vec<f64>,
}

pub fn pca(data: &Tensor, k: usize) -> Result<Pca> {
    data.expect_matrix("pca")?;
    let (n, d) = (data.rows(), data.cols());
    if n < 2 {
        return Err(Error::InvalidArgument(format!("pca needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for {n}×{d} data"
        )));
    }

    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| data.get(i, j) - mean[j]);

    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut components = Vec::with_capacity(k * d);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut row: Vec<f64> = v_t.row(idx).iter().copied().collect();
        if let Some(first) = row.iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                row.iter_mut().for_each(|v| *v = -*v);
            }
        }
        let sigma = svd.singular_values[idx];
        explained_variance.push(sigma * sigma / (n - 1) as f64);
        components.extend(row);
    }
    let components = Tensor::from_raw(vec![k, d], components);

    let centered_rows = Tensor::from_raw(
        vec![n, d],
        (0..n).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| centered[(i, j)]).collect(),
    );
    let projected = crate::tensor::gemm(&centered_rows, false, &components, true);

    Ok(Pca {
        components,
        projected,
        explained_variance,
        mean,
    })
}
