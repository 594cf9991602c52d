use super::{EngineError, Tensor};

/// Mean squared error and its gradient `2 (pred − target) / N` with respect to `pred`.
pub fn l2_loss(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor), EngineError> {
    target.require_shape("l2_loss", prediction.shape())?;
    let n = prediction.len() as f64;
    let mut sum = 0.0;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((sum / n, Tensor::from_parts(prediction.shape(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_tensors_have_zero_loss() {
        let t = Tensor::from_fn(Shape::new(2, 1, 3, 3), |i| i as f64).unwrap();
        let (loss, grad) = l2_loss(&t, &t).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_offset_has_unit_loss() {
        let t = Tensor::from_fn(Shape::new(1, 2, 4, 4), |i| (i as f64).sin()).unwrap();
        let p = Tensor::from_fn(t.shape(), |i| t.data()[i] + 1.0).unwrap();
        let (loss, _) = l2_loss(&p, &t).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::new(1, 2, 3, 4);
        let p = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap();
        let t = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).unwrap();
        let (_, grad) = l2_loss(&p, &t).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.data_mut()[i] += h;
            let mut minus = p.clone();
            minus.data_mut()[i] -= h;
            let fd = (l2_loss(&plus, &t).unwrap().0 - l2_loss(&minus, &t).unwrap().0) / (2.0 * h);
            let a = grad.data()[i];
            assert!((a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()), "{a} vs {fd}");
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2)).unwrap();
        let b = Tensor::zeros(Shape::new(1, 1, 2, 3)).unwrap();
        assert!(l2_loss(&a, &b).is_err());
    }
}
