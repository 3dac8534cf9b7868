//! Each hot loop timed twice: on the rayon pool and forced onto one thread.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use pose_anchor::geometry::{ransac_fundamental, PixelPair, RansacParams};
use pose_anchor::par;
use pose_anchor::refine::{build_correspondences, refine_stacked, Correspondence, RefineParams};
use pose_anchor::reid::{associate, similarity_matrix, DEFAULT_DELTA_MIN};
use pose_anchor::synthetic::{
    generate_scene, random_two_view_spec, render_views, RandomSceneOptions, RenderedView,
};

fn scene() -> (RenderedView, RenderedView) {
    let spec = random_two_view_spec(7, &RandomSceneOptions::default());
    let mut views = render_views(&generate_scene(&spec).unwrap())
        .unwrap()
        .into_iter();
    (views.next().unwrap(), views.next().unwrap())
}

fn correspondences(l: &RenderedView, f: &RenderedView) -> Vec<Correspondence> {
    let assoc = associate(
        &l.image,
        &l.detections,
        &f.image,
        &f.detections,
        DEFAULT_DELTA_MIN,
    );
    build_correspondences(&assoc, &l.detections, &f.detections).unwrap()
}

fn both<R>(c: &mut Criterion, name: &str, f: impl Fn() -> R) {
    let mut g = c.benchmark_group(name);
    g.sample_size(10);
    g.bench_function("parallel", |b| b.iter(|| black_box(f())));
    g.bench_function("sequential", |b| {
        b.iter(|| par::sequential(|| black_box(f())))
    });
    g.finish();
}

fn benches(c: &mut Criterion) {
    let (l, f) = scene();
    let corr = correspondences(&l, &f);
    both(c, "similarity_matrix", || {
        similarity_matrix(&l.image, &l.detections, &f.image, &f.detections)
    });
    both(c, "refine_stacked", || {
        refine_stacked(&l.image, &f.image, &corr, &RefineParams::default()).unwrap()
    });
    let pairs: Vec<PixelPair> = corr.iter().map(|c| (c.leader_px, c.follower_px0)).collect();
    both(c, "ransac_fundamental", || {
        ransac_fundamental(&pairs, &RansacParams::fundamental()).unwrap()
    });
}

criterion_group!(parallel_vs_sequential, benches);
criterion_main!(parallel_vs_sequential);
