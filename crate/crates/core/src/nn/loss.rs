use ndarray::{Array1, Array2, ArrayView1};

pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|l| (l - m).exp());
    let s = e.sum();
    e / s
}

/// `-sum_c t_c log softmax(logits)_c`, stabilized by max subtraction.
///
/// The target may be any probability vector, so a mixed label
/// `lam * y_a + (1 - lam) * y_b` yields exactly the same mixture of the two
/// one-hot losses.
pub fn softmax_cross_entropy(logits: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> f64 {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits
        .iter()
        .zip(target)
        .filter(|(_, &t)| t != 0.0)
        .map(|(l, t)| t * (lse - l))
        .sum()
}

pub fn one_hot(class: usize, num_classes: usize) -> Array1<f64> {
    let mut v = Array1::zeros(num_classes);
    v[class] = 1.0;
    v
}

/// `lam * onehot(a) + (1 - lam) * onehot(b)`
pub fn mixed_target(a: usize, b: usize, lam: f64, num_classes: usize) -> Array1<f64> {
    let mut v = Array1::zeros(num_classes);
    v[a] += lam;
    v[b] += 1.0 - lam;
    v
}

/// Per-row losses and `scale * (softmax - target)` as the logits gradient.
pub fn batch_cross_entropy(logits: &Array2<f64>, targets: &Array2<f64>, scale: f64) -> (Vec<f64>, Array2<f64>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut losses = Vec::with_capacity(logits.nrows());
    for (i, (l, t)) in logits.rows().into_iter().zip(targets.rows()).enumerate() {
        losses.push(softmax_cross_entropy(l, t));
        let p = softmax(l);
        grad.row_mut(i).assign(&((p - t) * scale));
    }
    (losses, grad)
}
