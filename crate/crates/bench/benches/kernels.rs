use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semsegdepth::autodiff::{conv2d, ConvGeometry, Tape};
use semsegdepth::data::{generate_toy_scene, ImageSample, SparsifyConfig};
use semsegdepth::depth::{knn_brute_force, knn_grid, unproject};
use semsegdepth::zoo::{Batch, Model, ModelConfig, VariantName};
use semsegdepth::Tensor;

fn scene(seed: u64, h: usize, w: usize, n_points: usize) -> ImageSample {
    let cfg = SparsifyConfig {
        n_points,
        seed,
        ..SparsifyConfig::default()
    };
    generate_toy_scene(seed, 4, h, w).unwrap().sparsified(&cfg).unwrap()
}

fn ramp(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |i| ((i * 7919) % 201) as f64 / 100.0 - 1.0)
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for &size in &[32usize, 64] {
        let x = ramp(&[2, 32, size, size]);
        let w = ramp(&[32, 32, 3, 3]);
        group.bench_with_input(BenchmarkId::new("forward", size), &size, |b, _| {
            b.iter(|| {
                let tape = Tape::inference();
                let y = conv2d(tape.constant(x.clone()), tape.constant(w.clone()), None, ConvGeometry::same((3, 3), (1, 1)));
                y.value().numel()
            })
        });
        group.bench_with_input(BenchmarkId::new("forward_backward", size), &size, |b, _| {
            b.iter(|| {
                let tape = Tape::new();
                let wv = tape.leaf(w.clone());
                let y = conv2d(tape.constant(x.clone()), wv, None, ConvGeometry::same((3, 3), (1, 1)));
                tape.backward(y.sum())
            })
        });
    }
    group.finish();
}

fn bench_knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn_k9");
    for &n in &[500usize, 4000] {
        let s = scene(1, 160, 160, n);
        let points = unproject(s.sparse_depth.as_ref().unwrap(), &s.intrinsics).unwrap().points;
        group.bench_with_input(BenchmarkId::new("grid", n), &points, |b, p| b.iter(|| knn_grid(p, 9)));
        if n <= 1000 {
            group.bench_with_input(BenchmarkId::new("brute_force", n), &points, |b, p| b.iter(|| knn_brute_force(p, 9)));
        }
    }
    group.finish();
}

fn bench_model(c: &mut Criterion) {
    let samples: Vec<_> = (0..2).map(|i| scene(i, 64, 64, 160)).collect();
    let batch = Batch::new(&samples).unwrap();
    let mut group = c.benchmark_group("micro_model_64x64_b2");
    group.sample_size(10);
    for variant in [VariantName::SemSegNetB, VariantName::DepthNetB, VariantName::SemSegDepth] {
        let model = Model::new(variant.spec(), &ModelConfig::micro(4)).unwrap();
        let params = model.init_params(0);
        group.bench_function(BenchmarkId::new("train_step", variant.as_str()), |b| {
            b.iter(|| {
                let tape = Tape::new();
                let bound = params.bind(&tape);
                let out = model.forward(&bound, &batch).unwrap();
                let (total, _) = model.loss(&out, &batch, &Default::default()).unwrap();
                bound.gradients(&tape.backward(total)).len()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_knn, bench_model);
criterion_main!(benches);
