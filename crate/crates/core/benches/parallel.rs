//! Hot paths at 512×512 in a one-thread pool against the default pool.
//! Built with `--no-default-features` both run the sequential code.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use procams::device::Device;
use procams::geometry::{Pose, Vec3};
use procams::imaging::{render_projection_on_surface, SceneTextures};
use procams::optics::{convolve, make_disk_psf, standard_checker, wiener_precompensate};
use procams::scene::{PrismTarget, Target};
use procams::vision::detect_markers;

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    vec![("1-thread", one), ("default", all)]
}

fn bench(c: &mut Criterion) {
    let dev = Device::default();
    let scene = SceneTextures::new(&Target::Prism(PrismTarget::default_prism()));
    let pose = Pose::from_axis_angle(Vec3::new(0.0, 0.3, 0.0), Vec3::new(0.0, 0.0, 150.0));
    let power = dev.etl.power_for_focus(150.0).unwrap().power;
    let frame = dev.capture(&scene, &pose, power, 1).unwrap();
    let pattern = standard_checker(512, 512);
    let psf = make_disk_psf(6.0);

    let mut g = c.benchmark_group(if procams::par::is_parallel() { "rayon" } else { "sequential" });
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("capture", name), &pool, |b, p| {
            b.iter(|| p.install(|| dev.capture(&scene, &pose, power, 1).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("detect", name), &pool, |b, p| {
            b.iter(|| p.install(|| detect_markers(&frame)))
        });
        g.bench_with_input(BenchmarkId::new("convolve_r6", name), &pool, |b, p| {
            b.iter(|| p.install(|| convolve(&pattern, &psf)))
        });
        g.bench_with_input(BenchmarkId::new("wiener_r6", name), &pool, |b, p| {
            b.iter(|| p.install(|| wiener_precompensate(&pattern, &psf, 0.01)))
        });
        let rgb = procams::imaging::Image::filled(512, 512, 3, 0.8);
        g.bench_with_input(BenchmarkId::new("surface", name), &pool, |b, p| {
            b.iter(|| {
                p.install(|| {
                    render_projection_on_surface(&rgb, &scene, &pose, &dev.etl, &dev.intrinsics, power, dev.raster())
                        .unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
