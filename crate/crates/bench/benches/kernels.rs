use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use polar_fading::codec::{encode, llr_csi, sc_decode, FrozenFill};
use polar_fading::construction::{construct, polarize_step};
use polar_fading::quantizer::degrading_merge;
use polar_fading_bench::{half_rate_code, quantized, rayleigh_5db};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn sc_decode_bench(c: &mut Criterion) {
    let ch = rayleigh_5db();
    let mut g = c.benchmark_group("sc_decode");
    for m in [10usize, 14] {
        let spec = half_rate_code(m);
        let n = spec.n();
        let k = spec.info_len();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bits: Vec<u8> = (0..k).map(|_| rng.random_range(0..2u8)).collect();
        let frame = encode(&spec, &bits, FrozenFill::Zeros).unwrap();
        let llrs: Vec<f64> = frame
            .x
            .iter()
            .map(|&x| {
                let h = ch.dist.sample(&mut rng);
                let y = h * x + ch.sigma * rng.sample::<f64, _>(StandardNormal);
                llr_csi(&ch, y, h).unwrap()
            })
            .collect();
        let frozen = vec![0u8; n - k];
        g.bench_with_input(BenchmarkId::from_parameter(n), &llrs, |b, llrs| {
            b.iter(|| sc_decode(&spec, llrs, &frozen).unwrap())
        });
    }
    g.finish();
}

fn merge_bench(c: &mut Criterion) {
    let w = quantized(128);
    let mut g = c.benchmark_group("degrading_merge");
    for mu in [16usize, 64] {
        // the plus transform of a 256-symbol channel has ~16k symbols
        let (_, plus) = polarize_step(&w, usize::MAX);
        g.bench_with_input(BenchmarkId::from_parameter(mu), &plus, |b, ch| {
            b.iter_batched(|| ch.clone(), |ch| degrading_merge(&ch, mu), BatchSize::LargeInput)
        });
    }
    g.finish();
}

fn construct_bench(c: &mut Criterion) {
    let w = quantized(32);
    let mut g = c.benchmark_group("construct");
    g.sample_size(10);
    for (m, mu) in [(10usize, 16usize), (10, 64)] {
        g.bench_function(format!("m{m}_mu{mu}"), |b| b.iter(|| construct(&w, m, mu).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, sc_decode_bench, merge_bench, construct_bench);
criterion_main!(benches);
