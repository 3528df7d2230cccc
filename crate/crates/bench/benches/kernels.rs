use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use drape::camera::Projection;
use drape::guidance::chamfer_to_target;
use drape::losses::collision_loss_points;
use drape::njf::{build_poisson_system, JacobianField};
use drape::primitives::icosphere;
use drape::scenes::{arm_sleeve, textured_column};
use drape::spatial::build_body_sdf;
use drape::texsync::{make_equatorial_rig, rasterize_correspondence};
use drape::{sample_surface, Normalization};

fn sdf(c: &mut Criterion) {
    let s = arm_sleeve();
    let sdf = build_body_sdf(&s.body).unwrap();
    let pts = sample_surface(&s.garment, 10_000, 1).unwrap().positions;
    c.bench_function("sdf_collision_10k_points", |b| {
        b.iter(|| collision_loss_points(black_box(&pts), &sdf, 0.005))
    });
}

fn poisson(c: &mut Criterion) {
    let mesh = icosphere(4);
    let sys = build_poisson_system(&mesh).unwrap();
    let j = JacobianField::identity(mesh.faces.len());
    c.bench_function("poisson_build_icosphere4", |b| b.iter(|| build_poisson_system(black_box(&mesh)).unwrap()));
    c.bench_function("poisson_solve_icosphere4", |b| b.iter(|| sys.solve_deformation(black_box(&j)).unwrap()));
}

fn chamfer(c: &mut Criterion) {
    let s = arm_sleeve();
    let a = sample_surface(&s.garment, 5_000, 2).unwrap().positions;
    let t = sample_surface(&s.body, 5_000, 3).unwrap().positions;
    c.bench_function("chamfer_5k_5k", |b| b.iter(|| chamfer_to_target(black_box(&a), &t).unwrap()));
}

fn correspondence(c: &mut Criterion) {
    let mesh = textured_column();
    let mesh = Normalization::fit(&mesh).unwrap().apply(&mesh);
    let rig = make_equatorial_rig(6, 3.5, 128, Projection::Perspective { fov_y_deg: 45.0 }).unwrap();
    c.bench_function("correspondence_6x128_tex128", |b| {
        b.iter(|| rasterize_correspondence(black_box(&mesh), &rig.cameras, 128, 1e-3).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = sdf, poisson, chamfer, correspondence
}
criterion_main!(benches);
