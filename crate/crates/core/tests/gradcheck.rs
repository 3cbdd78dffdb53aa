//! Analytic gradients vs. central finite differences (h = 1e-3, relative
//! tolerance 1e-4) on small networks covering every layer kind.

use curvete::nn::gradcheck::{check_classifier, check_regressor, uniform_tensor, GradCheckConfig};
use curvete::nn::{cross_entropy_with_grad, LayerSpec, NetworkModel, Tensor};

fn assert_clean(result: (curvete::nn::gradcheck::Comparison, usize)) {
    let (cmp, params) = result;
    assert!(params <= 500, "{params} parameters");
    assert!(cmp.checked > 0);
    assert!(cmp.passed(), "{:#?}", cmp.failures);
}

#[test]
fn conv_relu_pool_dense_stack() {
    let specs = [
        LayerSpec::conv(2, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::conv(3, 3),
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { out_dim: 4 },
        LayerSpec::Relu,
    ];
    assert_clean(check_classifier(&[1, 6, 6], &specs, 3, 3, 11, &GradCheckConfig::default()).unwrap());
}

#[test]
fn strided_conv_upsample_stack() {
    let specs = [
        LayerSpec::Conv2d {
            filters: 2,
            kernel_h: 3,
            kernel_w: 3,
            stride: 2,
            padding: 1,
        },
        LayerSpec::Upsample { factor: 2 },
        LayerSpec::conv(2, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Flatten,
    ];
    assert_clean(check_classifier(&[1, 8, 8], &specs, 3, 2, 21, &GradCheckConfig::default()).unwrap());
}

#[test]
fn dense_only_head() {
    let specs = [LayerSpec::Dense { out_dim: 5 }, LayerSpec::Relu];
    assert_clean(check_classifier(&[7], &specs, 4, 4, 31, &GradCheckConfig::default()).unwrap());
}

#[test]
fn autoencoder_stack_under_mse() {
    let specs = [
        LayerSpec::conv(3, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Upsample { factor: 2 },
        LayerSpec::conv(1, 3),
    ];
    assert_clean(check_regressor(&[1, 4, 4], &specs, 2, 8, &GradCheckConfig::default()).unwrap());
}

#[test]
fn f32_model_gradients_track_f64_reference() {
    let specs = [
        LayerSpec::conv(2, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Flatten,
    ];
    let mut m32 = NetworkModel::<f32>::new(&[1, 6, 6], &specs, 3, 4).unwrap();
    let mut m64: NetworkModel<f64> = m32.cast();
    let b64 = uniform_tensor(&[2, 1, 6, 6], 1);
    let b32: Tensor<f32> = b64.cast();
    let labels = [1, 0];
    let (_, g64) = cross_entropy_with_grad(&m64.forward_train(&b64).unwrap(), &labels).unwrap();
    let (_, g32) = cross_entropy_with_grad(&m32.forward_train(&b32).unwrap(), &labels).unwrap();
    let a = m64.backward(&g64).unwrap();
    let b = m32.backward(&g32).unwrap();
    for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
        for (&x, &y) in ta.data().iter().zip(tb.data()) {
            assert!((x - y as f64).abs() < 1e-4 * (1.0 + x.abs()));
        }
    }
}

#[test]
fn forward_is_bit_exact_across_calls() {
    let specs = [
        LayerSpec::conv(4, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::conv(4, 3),
        LayerSpec::Relu,
        LayerSpec::Flatten,
    ];
    let model = NetworkModel::<f32>::new(&[1, 8, 8], &specs, 5, 123).unwrap();
    let batch: Tensor<f32> = uniform_tensor(&[4, 1, 8, 8], 77).cast();
    let a = model.forward(&batch).unwrap();
    let b = model.forward(&batch).unwrap();
    assert_eq!(a.shape(), &[4, 5]);
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
