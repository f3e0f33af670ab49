use claid_core::affinity::{degrees, select_seeds, AffinityParams};
use claid_core::synth::{synth_image, SynthConfig};
use claid_core::{bisect, decompose, BBox, DecomposeParams, DescriptorIndex, KsumsParams, RegionDescriptor};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn throughput_grid() -> claid_core::FeatureGrid {
    let cfg = SynthConfig::throughput();
    synth_image("bench", &cfg).unwrap().grid
}

fn bench_affinity(c: &mut Criterion) {
    let grid = throughput_grid();
    let points = grid.unit_points();
    let all: Vec<u32> = (0..grid.num_patches() as u32).collect();
    let alpha = AffinityParams::default().alpha;
    c.bench_function("degrees 2700x768", |b| b.iter(|| degrees(points, black_box(&all), alpha).unwrap()));
}

fn bench_bisect(c: &mut Criterion) {
    let grid = throughput_grid();
    let points = grid.unit_points();
    let all: Vec<u32> = (0..grid.num_patches() as u32).collect();
    let seeds = select_seeds(points, &all, &AffinityParams::default()).unwrap();
    let params = KsumsParams::default();
    c.bench_function("bisect 2700x768", |b| b.iter(|| bisect(points, black_box(&all), Some(seeds), &params).unwrap()));
}

fn bench_decompose(c: &mut Criterion) {
    let grid = throughput_grid();
    let params = DecomposeParams::default();
    let mut g = c.benchmark_group("decompose");
    g.sample_size(10);
    g.bench_function("45x60x768", |b| b.iter(|| decompose(black_box(&grid), &params).unwrap()));
    g.finish();
}

fn bench_search(c: &mut Criterion) {
    let dim = 256;
    let rows = 20_000;
    let mut idx = DescriptorIndex::new(dim);
    let mut state = 0x9e37_79b9_u32;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 17;
        state ^= state << 5;
        state as f32 / u32::MAX as f32 - 0.5
    };
    for k in 0..rows {
        let mut v: Vec<f32> = (0..dim).map(|_| next()).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        idx.push(&RegionDescriptor {
            image_id: format!("img_{:04}", k / 40),
            region_id: (k % 40) as u32,
            vector: v,
            bbox: BBox::new(0.0, 0.0, 16.0, 16.0),
            patch_count: 4,
            degenerate: false,
        })
        .unwrap();
    }
    let q: Vec<f32> = (0..dim).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    c.bench_function("search 20000x256", |b| b.iter(|| idx.search(black_box(&q), 100).unwrap()));
}

criterion_group!(benches, bench_affinity, bench_bisect, bench_decompose, bench_search);
criterion_main!(benches);
