//! Reverse-mode automatic differentiation over dense 64-bit tensors.

mod graph;
mod tensor;

pub use graph::{Gradients, Graph, ReversalCoefficient, Var};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn vec_t(v: &[f64]) -> Tensor {
        Tensor::vector(v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_examples() {
        let mut g = Graph::new();
        let a = g.constant(vec_t(&[1.0, 2.0]));
        let b = g.constant(vec_t(&[3.0, 4.0]));
        let m = g.mul(a, b).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 8.0]);
        let z = g.constant(vec_t(&[0.0]));
        let t = g.tanh(z).unwrap();
        assert_eq!(g.value(t).data(), &[0.0]);
    }

    #[test]
    fn identity_matmul_returns_vector() {
        let mut g = Graph::new();
        let i3 = g.constant(Tensor::identity(3));
        let v = g.constant(vec_t(&[0.3, -1.7, 2.5]));
        let out = g.matmul(i3, v).unwrap();
        assert_eq!(g.value(out).shape(), &[3]);
        assert_eq!(g.value(out).data(), &[0.3, -1.7, 2.5]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            Error::ShapeMismatch { left, right, .. } => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = g.constant(Tensor::zeros(&[4]));
        assert!(g.mul(a, c).is_err());
        assert!(g.sub(a, c).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let z = g.constant(vec_t(&[0.0, 0.0, 0.0]));
        for label in 0..3 {
            let l = g.cross_entropy(z, &[label]).unwrap();
            assert!((g.value(l).data()[0] - 3f64.ln()).abs() < 1e-12);
        }
        let sat = g.constant(vec_t(&[100.0, 0.0, 0.0]));
        let l = g.cross_entropy(sat, &[0]).unwrap();
        assert!(g.value(l).data()[0] < 1e-40);

        // Hand computation: softmax([1,2,3])[2] = e^3 / (e + e^2 + e^3).
        let e = std::f64::consts::E;
        let expected = -(e.powi(3) / (e + e * e + e.powi(3))).ln();
        let x = g.constant(vec_t(&[1.0, 2.0, 3.0]));
        let l = g.cross_entropy(x, &[2]).unwrap();
        assert!((g.value(l).data()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.407_605_964_444_380_3).abs() < 1e-12);

        assert!(matches!(
            g.cross_entropy(x, &[3]),
            Err(Error::LabelOutOfRange { label: 3, classes: 3 })
        ));
    }

    #[test]
    fn reversal_scales_and_negates() {
        for (scale, factor) in [(0.0, 0.0), (1.0, -1.0), (0.5 / 5.0, -0.1)] {
            let mut g = Graph::new();
            let x = g.param(vec_t(&[0.5, -2.0, 3.0]));
            let w = g.constant(vec_t(&[1.0, 4.0, -0.25]));
            let r = g.grad_reverse(x, ReversalCoefficient::new(scale).unwrap());
            assert_eq!(g.value(r), g.value(x));
            let m = g.mul(r, w).unwrap();
            let loss = g.sum(m).unwrap();
            let grads = g.backward(loss).unwrap();
            let gx = grads.get(x);
            for (got, up) in gx.data().iter().zip([1.0, 4.0, -0.25]) {
                assert!((got - factor * up).abs() < 1e-15, "{got} vs {}", factor * up);
            }
        }
        assert!(ReversalCoefficient::new(-0.1).is_err());
    }

    #[test]
    fn simple_backward_examples() {
        let mut g = Graph::new();
        let w = g.param(vec_t(&[0.3, -1.0, 2.0]));
        let s = g.sum(w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::new();
        let w = g.param(vec_t(&[0.3, -1.0, 2.0]));
        let sq = g.mul(w, w).unwrap();
        let l = g.sum(sq).unwrap();
        let unused = g.param(vec_t(&[5.0]));
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(w).data(), &[0.6, -2.0, 4.0]);
        assert_eq!(grads.get(unused).data(), &[0.0]);
        assert!(!grads.reached(unused));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let w = g.param(vec_t(&[1.0, 2.0]));
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn max_over_time_ties_go_to_first_step() {
        let mut g = Graph::new();
        let a = g.param(vec_t(&[1.0, 2.0]));
        let b = g.param(vec_t(&[1.0, 3.0]));
        let m = g.max_over_time(&[a, b]).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 3.0]);
        let l = g.sum(m).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(a).data(), &[1.0, 0.0]);
        assert_eq!(grads.get(b).data(), &[0.0, 1.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.param(vec_t(&[2.0]));
        let a = g.scale(x, 3.0).unwrap();
        let b = g.scale(x, 4.0).unwrap();
        let s = g.add(a, b).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[7.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(vec_t(&[1e300]));
        assert!(matches!(g.scale(x, 1e10), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn embedding_ops_validate_ids() {
        let mut g = Graph::new();
        let table = g.param(Tensor::zeros(&[4, 2]));
        assert!(matches!(
            g.gather_rows(table, &[1, 4]),
            Err(Error::TokenOutOfRange { id: 4, vocab: 4 })
        ));
        assert!(matches!(g.embedding_mean(table, &[&[]]), Err(Error::EmptySequence)));
    }
}
