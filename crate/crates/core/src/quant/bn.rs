use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{apply_activation, MlpModel};

/// Fills `running_mean`/`running_var` of every batch-norm record with the
/// population statistics of its pre-normalization input over `data`.
pub fn populate_bn_stats(model: &MlpModel, data: &Dataset) -> Result<MlpModel> {
    if data.is_empty() {
        return Err(Error::domain("batch-norm statistics need a nonempty dataset"));
    }
    let mut out = model.clone();
    let rows = data.len();
    let mut h = data.features.data().to_vec();
    for l in 0..out.num_layers() {
        let layer = &out.layers()[l];
        let (n, m) = (layer.fan_in(), layer.fan_out());
        let mut z = vec![0.0; rows * m];
        crate::tensor::matmul_into(&h, layer.weights.data(), rows, n, m, &mut z);
        if let Some(bn) = &layer.batch_norm {
            let width = bn.gamma.len();
            let mut mean = vec![0.0; width];
            let mut var = vec![0.0; width];
            for r in 0..rows {
                for j in 0..m {
                    mean[j] += z[r * m + j] + layer.bias[j];
                }
            }
            mean.iter_mut().for_each(|v| *v /= rows as f64);
            for r in 0..rows {
                for j in 0..m {
                    let d = z[r * m + j] + layer.bias[j] - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= rows as f64);
            let bn = out.layers_mut()[l].batch_norm.as_mut().expect("checked above");
            bn.running_mean = Some(mean);
            bn.running_var = Some(var);
        }
        let layer = &out.layers()[l];
        if let Some(bn) = &layer.batch_norm {
            let (scale, shift) = bn.affine().expect("populated above");
            for (k, v) in z.iter_mut().enumerate() {
                let j = k % m;
                *v = scale[j] * (*v + layer.bias[j]) + shift[j];
            }
        } else {
            for (k, v) in z.iter_mut().enumerate() {
                *v += layer.bias[k % m];
            }
        }
        for row in z.chunks_mut(m) {
            apply_activation(layer.activation, row);
        }
        h = z;
    }
    Ok(out)
}

/// Folds every inference-mode batch norm into its dense layer:
/// `W' = W·diag(γ/√(σ²+ε))`, `b' = γ(b−μ)/√(σ²+ε) + β`.
pub fn fold_bn(model: &MlpModel) -> Result<MlpModel> {
    let mut out = model.clone();
    for (i, layer) in out.layers_mut().iter_mut().enumerate() {
        let Some(bn) = layer.batch_norm.take() else {
            continue;
        };
        let (scale, shift) = bn.affine().ok_or(Error::BatchNormTraining { layer: i })?;
        let m = layer.fan_out();
        for (k, w) in layer.weights.data_mut().iter_mut().enumerate() {
            *w *= scale[k % m];
        }
        for ((b, s), t) in layer.bias.iter_mut().zip(&scale).zip(&shift) {
            *b = *b * s + t;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::BatchNorm;
    use crate::tensor::Tensor2D;

    fn with_identity_bn(m: &MlpModel) -> MlpModel {
        let mut m = m.clone();
        for l in m.layers_mut() {
            let mut bn = BatchNorm::identity(l.fan_out());
            bn.running_mean = Some(vec![0.0; l.fan_out()]);
            bn.running_var = Some(vec![1.0 - bn.eps; l.fan_out()]);
            l.batch_norm = Some(bn);
        }
        m
    }

    #[test]
    fn identity_bn_leaves_weights() {
        let m = MlpModel::random(&[4, 3, 2], 3).unwrap();
        let folded = fold_bn(&with_identity_bn(&m)).unwrap();
        for (a, b) in folded.layers().iter().zip(m.layers()) {
            for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn unpopulated_stats_error() {
        let mut m = MlpModel::random(&[4, 3, 2], 3).unwrap();
        m.layers_mut()[1].batch_norm = Some(BatchNorm::identity(2));
        assert!(matches!(fold_bn(&m), Err(Error::BatchNormTraining { layer: 1 })));
    }

    #[test]
    fn populated_stats_normalize() {
        let mut m = MlpModel::random(&[4, 3, 2], 3).unwrap();
        m.layers_mut()[0].batch_norm = Some(BatchNorm::identity(3));
        let x = Tensor2D::from_vec(6, 4, (0..24).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        let data = Dataset::new(x, vec![0, 1, 0, 1, 0, 1], 2).unwrap();
        let p = populate_bn_stats(&m, &data).unwrap();
        let bn = p.layers()[0].batch_norm.as_ref().unwrap();
        assert_eq!(bn.running_mean.as_ref().unwrap().len(), 3);
        assert!(bn.running_var.as_ref().unwrap().iter().all(|v| *v >= 0.0));
        let folded = fold_bn(&p).unwrap();
        let a = p.forward(&data.features).unwrap();
        let b = folded.forward(&data.features).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
