use colony_bench::{random_box, random_detections, random_mask};
use colony_core::detection::ImageEvalInput;
use colony_core::{
    average_precision, box_iou, class_average_precisions, image_dice, match_image, pr_curve,
    ClassId, GroundTruthBox, ImageDims, InstanceMask, RankedOutcome,
};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn bench_iou(c: &mut Criterion) {
    let mut r = rng();
    let pairs: Vec<_> = (0..1024)
        .map(|_| {
            (
                random_box(&mut r, 1024.0, 80.0),
                random_box(&mut r, 1024.0, 80.0),
            )
        })
        .collect();
    c.bench_function("box_iou/1024_pairs", |b| {
        b.iter(|| {
            pairs
                .iter()
                .map(|(p, q)| box_iou(black_box(p), black_box(q)))
                .sum::<f64>()
        })
    });
}

fn bench_matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("match_image");
    for n in [50usize, 200, 800] {
        let mut r = rng();
        let preds = random_detections(&mut r, n, 1024.0);
        let gts: Vec<GroundTruthBox> = (0..n)
            .map(|_| GroundTruthBox {
                bbox: random_box(&mut r, 1024.0, 40.0),
                class_id: ClassId(1),
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| match_image(black_box(&preds), black_box(&gts), 0.2).unwrap())
        });
    }
    group.finish();
}

fn bench_ap(c: &mut Criterion) {
    let mut r = rng();
    let mut ranked: Vec<RankedOutcome> = (0..10_000)
        .map(|_| RankedOutcome {
            confidence: r.gen_range(0.0..=1.0),
            is_true_positive: r.gen_bool(0.6),
        })
        .collect();
    ranked.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    c.bench_function("average_precision/10k", |b| {
        b.iter(|| average_precision(&pr_curve(black_box(&ranked), 8_000).unwrap()))
    });

    let images: Vec<_> = (0..20)
        .map(|k| {
            let preds = random_detections(&mut r, 100, 1024.0);
            let gts: Vec<GroundTruthBox> = (0..80)
                .map(|_| GroundTruthBox {
                    bbox: random_box(&mut r, 1024.0, 40.0),
                    class_id: ClassId(k % 4 + 1),
                })
                .collect();
            (preds, gts)
        })
        .collect();
    let inputs: Vec<_> = images
        .iter()
        .map(|(p, g)| ImageEvalInput {
            predictions: p,
            ground_truths: g,
        })
        .collect();
    c.bench_function("class_average_precisions/20_images", |b| {
        b.iter(|| class_average_precisions(black_box(&inputs), 0.2).unwrap())
    });
}

fn bench_rle(c: &mut Criterion) {
    let dims = ImageDims::new(1024, 1024).unwrap();
    let mask = random_mask(&mut rng(), dims, 60);
    let raster = mask.to_raster();
    let col = mask.to_column_major_runs();
    c.bench_function("rle/from_raster_1mp", |b| {
        b.iter(|| InstanceMask::from_raster(dims, black_box(&raster)).unwrap())
    });
    c.bench_function("rle/to_raster_1mp", |b| {
        b.iter(|| black_box(&mask).to_raster())
    });
    c.bench_function("rle/column_major_round_trip_1mp", |b| {
        b.iter(|| InstanceMask::from_column_major_runs(dims, black_box(&col)).unwrap())
    });
}

fn bench_dice(c: &mut Criterion) {
    let dims = ImageDims::new(1024, 1024).unwrap();
    let mut r = rng();
    let gt = random_mask(&mut r, dims, 60);
    let preds: Vec<_> = (0..50).map(|_| random_mask(&mut r, dims, 2)).collect();
    c.bench_function("image_dice/50_masks_1mp", |b| {
        b.iter(|| image_dice(black_box(&preds), black_box(&gt)).unwrap())
    });
}

criterion_group!(
    benches,
    bench_iou,
    bench_matching,
    bench_ap,
    bench_rle,
    bench_dice
);
criterion_main!(benches);
