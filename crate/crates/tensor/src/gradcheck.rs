//! Central finite differences, used as an independent oracle for the
//! gradients produced by [`Graph`](crate::Graph).

use crate::tensor::Tensor;

/// Numerical gradient of `f` with respect to each input, by central
/// differences with step `h`.
pub fn numerical_gradients(
    f: &mut dyn FnMut(&[Tensor<f64>]) -> f64,
    inputs: &[Tensor<f64>],
    h: f64,
) -> Vec<Tensor<f64>> {
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = f(&work);
            work[i].data_mut()[j] = orig - h;
            let minus = f(&work);
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

/// `‖analytic − numeric‖₂ / max(‖numeric‖₂, ‖analytic‖₂, 1e-12)`.
pub fn relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.data().iter().zip(numeric.data()).map(|(a, b)| a - b));
    let scale = norm(&mut numeric.data().iter().copied()).max(norm(&mut analytic.data().iter().copied())).max(1e-12);
    diff / scale
}
