use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use logicvae::eval::{prior_generation_metrics, PriorConfig};
use logicvae::kernel::{gram_matrix_with, KernelMode};
use logicvae::logic::{generate_dataset, GeneratorConfig};
use logicvae::model::{EncoderCell, EncoderConfig, LogicVae, ModelConfig};
use logicvae::par::Execution;
use logicvae::train::{batch_gradients, Corpus};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gram(c: &mut Criterion) {
    let fs = generate_dataset(&GeneratorConfig { n: 5, seed: 1, ..Default::default() }, 300).unwrap();
    let mut group = c.benchmark_group("gram_300_n5");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gram_matrix_with(&fs, 5, KernelMode::Exact, exec).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let fs = generate_dataset(&GeneratorConfig { n: 3, seed: 2, ..Default::default() }, 32).unwrap();
    let model = LogicVae::new(ModelConfig::vae(EncoderConfig::desk(EncoderCell::Gcn, 3)), 0).unwrap();
    let corpus = Corpus::new(&fs, None, 3).unwrap();
    let batch: Vec<usize> = (0..fs.len()).collect();
    let mut group = c.benchmark_group("batch_gradients_32");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradients(&model, &corpus, &batch, 0.001, 7, exec).unwrap())
        });
    }
    group.finish();
}

fn prior_decodes(c: &mut Criterion) {
    let model = LogicVae::new(ModelConfig::vae(EncoderConfig::desk(EncoderCell::Gru, 3)), 0).unwrap();
    let cfg = PriorConfig { prior_samples: 100, decodes_per_z: 10, seed: 3 };
    let mut group = c.benchmark_group("prior_1000_decodes");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| prior_generation_metrics(&model, &[], &cfg, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, gram, gradients, prior_decodes);
criterion_main!(benches);
