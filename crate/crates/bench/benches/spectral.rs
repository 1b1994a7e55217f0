use std::hint::black_box;

use afcsim::memory::{build_comb, section_response, transfer_function, CombSection, FIBRE_DEPTH};
use afcsim::spectral::{filter, kramers_kronig_phase, to_time_domain, FrequencyGrid, SpectralField};
use criterion::{criterion_group, criterion_main, Criterion};

fn spectral(c: &mut Criterion) {
    let grid = FrequencyGrid::default();
    let profile = build_comb(
        vec![CombSection::new(-14e9, 8e9, 200e6), CombSection::new(14e9, 8e9, 200e6)],
        FIBRE_DEPTH,
    )
    .unwrap();
    let depth = profile.depth_on(&grid);
    let h = transfer_function(&profile, &grid).unwrap();
    let input = SpectralField::flat_band(grid, -20e9, 20e9).unwrap();

    let mut group = c.benchmark_group("spectral");
    group.sample_size(20);
    group.bench_function("fft_default_grid", |b| b.iter(|| to_time_domain(black_box(&input)).unwrap()));
    group.bench_function("kramers_kronig", |b| {
        b.iter(|| kramers_kronig_phase(black_box(&depth), &grid, profile.narrowest_spacing()).unwrap())
    });
    group.bench_function("transfer_function", |b| b.iter(|| transfer_function(black_box(&profile), &grid).unwrap()));
    group.bench_function("filter", |b| b.iter(|| filter(black_box(&input), &h).unwrap()));
    group.bench_function("section_response", |b| b.iter(|| section_response(black_box(&profile), &grid).unwrap()));
    group.finish();
}

criterion_group!(benches, spectral);
criterion_main!(benches);
