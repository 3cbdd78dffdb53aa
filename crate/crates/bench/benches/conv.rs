use criterion::{criterion_group, criterion_main, Criterion};
use curvete::nn::gradcheck::uniform_tensor;
use curvete::nn::{cross_entropy_with_grad, LayerSpec, NetworkModel, Tensor};

fn backbone() -> Vec<LayerSpec> {
    vec![
        LayerSpec::conv(8, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::conv(16, 3),
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { out_dim: 64 },
        LayerSpec::Relu,
    ]
}

fn bench(c: &mut Criterion) {
    let mut model = NetworkModel::<f32>::new(&[1, 32, 32], &backbone(), 15, 1).unwrap();
    let batch: Tensor<f32> = uniform_tensor(&[10, 1, 32, 32], 2).cast();
    let labels: Vec<usize> = (0..10).map(|i| i % 15).collect();
    let mut group = c.benchmark_group("backbone_batch10_32px");
    group.bench_function("forward", |b| b.iter(|| model.forward(&batch).unwrap()));
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let logits = model.forward_train(&batch).unwrap();
            let (_, grad) = cross_entropy_with_grad(&logits, &labels).unwrap();
            model.backward(&grad).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
