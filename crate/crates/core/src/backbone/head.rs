use crate::tensor::Matrix;

/// Linear softmax classifier on top of frozen embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `K × d`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(num_classes: usize, embed_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(num_classes, embed_dim),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    fn logits(&self, z: &Matrix) -> Matrix {
        let mut out = self.weight.matmul(z);
        for (i, b) in self.bias.iter().enumerate() {
            for j in 0..out.cols() {
                out[(i, j)] += b;
            }
        }
        out
    }

    /// Column-wise softmax probabilities, `K × M`.
    pub fn probabilities(&self, z: &Matrix) -> Matrix {
        let mut p = self.logits(z);
        let (k, m) = p.shape();
        for j in 0..m {
            let max = (0..k).map(|i| p[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..k {
                let e = (p[(i, j)] - max).exp();
                p[(i, j)] = e;
                total += e;
            }
            for i in 0..k {
                p[(i, j)] /= total;
            }
        }
        p
    }

    pub fn predict(&self, z: &Matrix) -> Vec<usize> {
        let logits = self.logits(z);
        (0..logits.cols())
            .map(|j| {
                (0..logits.rows())
                    .max_by(|&a, &b| logits[(a, j)].total_cmp(&logits[(b, j)]).then(b.cmp(&a)))
                    .unwrap_or(0)
            })
            .collect()
    }
}

/// Mean softmax cross-entropy.
pub fn head_loss(head: &HeadParams, z: &Matrix, labels: &[usize]) -> f64 {
    let p = head.probabilities(z);
    let m = labels.len() as f64;
    labels
        .iter()
        .enumerate()
        .map(|(j, &y)| -p[(y, j)].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / m
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

/// Full-batch gradient descent on the cross-entropy with the backbone frozen.
pub fn train_head(
    mut head: HeadParams,
    z: &Matrix,
    labels: &[usize],
    steps: usize,
    lr: f64,
) -> HeadParams {
    assert_eq!(z.cols(), labels.len(), "one label per embedding column");
    assert_eq!(head.weight.cols(), z.rows(), "head input width mismatch");
    let m = labels.len() as f64;
    for _ in 0..steps {
        let mut g = head.probabilities(z);
        for (j, &y) in labels.iter().enumerate() {
            g[(y, j)] -= 1.0;
        }
        g.scale_in_place(1.0 / m);
        let grad_w = g.matmul_transpose(z);
        head.weight.axpy(-lr, &grad_w);
        for (i, b) in head.bias.iter_mut().enumerate() {
            *b -= lr * g.row(i).iter().sum::<f64>();
        }
    }
    head
}
