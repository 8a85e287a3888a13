use std::collections::BTreeMap;

use colony_core::detection::{
    class_average_precisions, match_image, ClassId, Detection, GroundTruthBox, ImageEvalInput,
};
use colony_core::geometry::{
    box_iou, box_to_mask, mask_dice, mask_intersect, mask_union, BoundingBox, ImageDims,
    InstanceMask,
};
use colony_core::ingest::{load_predictions, DatasetManifest, ImageRecord};
use colony_core::reporting::{render_overlay, OverlaySpec, RED};
use colony_core::segmentation::{evaluate_image, summarize_segmentation};
use colony_core::Error;
use image::RgbImage;
use proptest::prelude::*;

const N: u32 = 64;

fn int_box(size: u32) -> impl Strategy<Value = BoundingBox> {
    (0..size, 0..size, 1..=size, 1..=size).prop_map(move |(x, y, w, h)| {
        let x1 = (x + w).min(size).max(x + 1);
        let y1 = (y + h).min(size).max(y + 1);
        BoundingBox::new(x as f64, y as f64, x1 as f64, y1 as f64).unwrap()
    })
}

fn real_box() -> impl Strategy<Value = BoundingBox> {
    (0.0..60.0f64, 0.0..60.0f64, 0.01..40.0f64, 0.01..40.0f64)
        .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, x + w, y + h).unwrap())
}

fn raster(max: u32) -> impl Strategy<Value = (ImageDims, Vec<u8>)> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..2, (w * h) as usize)
            .prop_map(move |r| (ImageDims::new(w, h).unwrap(), r))
    })
}

fn masks_of(dims: ImageDims, count: usize) -> impl Strategy<Value = Vec<InstanceMask>> {
    proptest::collection::vec(
        proptest::collection::vec(0u8..2, dims.pixel_count() as usize),
        count,
    )
    .prop_map(move |rs| {
        rs.iter()
            .map(|r| InstanceMask::from_raster(dims, r).unwrap())
            .collect()
    })
}

fn detections(max: usize) -> impl Strategy<Value = Vec<Detection>> {
    proptest::collection::vec((int_box(24), 0u32..=64), 0..=max).prop_map(|v| {
        v.into_iter()
            .map(|(b, c)| Detection::new(b, c as f64 / 64.0).unwrap())
            .collect()
    })
}

proptest! {
    #[test]
    fn iou_is_bounded_symmetric_and_reflexive(a in real_box(), b in real_box()) {
        let ab = box_iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab, box_iou(&b, &a));
        prop_assert_eq!(box_iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_matches_rasterized_masks(a in int_box(N), b in int_box(N)) {
        let dims = ImageDims::new(N, N).unwrap();
        let (ma, mb) = (box_to_mask(&a, dims), box_to_mask(&b, dims));
        let inter = ma.intersection_count(&mb).unwrap();
        let union = ma.foreground_count() + mb.foreground_count() - inter;
        prop_assert_eq!(box_iou(&a, &b), inter as f64 / union as f64);
    }

    #[test]
    fn union_is_associative_and_commutative(
        ms in (1u32..=24, 1u32..=24).prop_flat_map(|(w, h)| masks_of(ImageDims::new(w, h).unwrap(), 3))
    ) {
        let dims = ms[0].dims();
        let ab = mask_union(dims, &ms[..2]).unwrap();
        let left = mask_union(dims, [&ab, &ms[2]]).unwrap();
        let bc = mask_union(dims, &ms[1..]).unwrap();
        let right = mask_union(dims, [&ms[0], &bc]).unwrap();
        prop_assert_eq!(&left, &right);
        let ba = mask_union(dims, [&ms[1], &ms[0]]).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(mask_intersect(&ms[0], &InstanceMask::full(dims)).unwrap(), ms[0].clone());
    }

    #[test]
    fn mask_dice_matches_pixel_loop((dims, a) in raster(64), seed in any::<u64>()) {
        let b: Vec<u8> = a.iter().enumerate().map(|(k, &v)| v ^ u8::from((seed >> (k % 64)) & 1 == 1)).collect();
        let (mut i, mut pa, mut pb) = (0u64, 0u64, 0u64);
        for k in 0..a.len() {
            i += u64::from(a[k] != 0 && b[k] != 0);
            pa += u64::from(a[k] != 0);
            pb += u64::from(b[k] != 0);
        }
        let expected = if pa + pb == 0 { 1.0 } else { 2.0 * i as f64 / (pa + pb) as f64 };
        let got = mask_dice(&InstanceMask::from_raster(dims, &a).unwrap(), &InstanceMask::from_raster(dims, &b).unwrap()).unwrap();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn match_result_partitions_predictions_and_ground_truths(
        preds in detections(50),
        gts in proptest::collection::vec(int_box(24), 0..=50),
        thr in 0.01..=1.0f64,
    ) {
        let m = match_image(&preds, &gts, thr).unwrap();
        prop_assert_eq!(m.pairs.len() + m.false_positives.len(), preds.len());
        prop_assert_eq!(m.pairs.len() + m.false_negatives.len(), gts.len());
        let mut seen_p: Vec<usize> = m.pairs.iter().map(|p| p.prediction).chain(m.false_positives.iter().copied()).collect();
        seen_p.sort();
        prop_assert_eq!(seen_p, (0..preds.len()).collect::<Vec<_>>());
        let mut seen_g: Vec<usize> = m.pairs.iter().map(|p| p.ground_truth).chain(m.false_negatives.iter().copied()).collect();
        seen_g.sort();
        prop_assert_eq!(seen_g, (0..gts.len()).collect::<Vec<_>>());
        for p in &m.pairs {
            prop_assert!(p.iou >= thr);
            prop_assert_eq!(p.iou, box_iou(&preds[p.prediction].bbox, &gts[p.ground_truth]));
        }
        prop_assert_eq!(match_image(&preds, &gts, thr).unwrap(), m);
    }

    #[test]
    fn raising_threshold_never_adds_pairs(
        preds in detections(12),
        gts in proptest::collection::vec(int_box(24), 0..=12),
        lo in 0.01..=1.0f64,
        hi in 0.01..=1.0f64,
    ) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let a = match_image(&preds, &gts, lo).unwrap().pairs.len();
        let b = match_image(&preds, &gts, hi).unwrap().pairs.len();
        prop_assert!(b <= a);
    }

    #[test]
    fn ap_depends_only_on_confidence_order(
        images in proptest::collection::vec((detections(6), proptest::collection::vec(int_box(24), 1..=6)), 1..4)
    ) {
        let gts: Vec<Vec<GroundTruthBox>> = images.iter().map(|(_, g)| g.iter().map(|b| GroundTruthBox { bbox: *b, class_id: ClassId(1) }).collect()).collect();
        let rescaled: Vec<Vec<Detection>> = images.iter().map(|(p, _)| p.iter().map(|d| Detection::new(d.bbox, (d.confidence + 1.0) / 2.0).unwrap()).collect()).collect();
        let a: Vec<ImageEvalInput> = images.iter().zip(&gts).map(|((p, _), g)| ImageEvalInput { predictions: p, ground_truths: g }).collect();
        let b: Vec<ImageEvalInput> = rescaled.iter().zip(&gts).map(|(p, g)| ImageEvalInput { predictions: p, ground_truths: g }).collect();
        let ap_a = class_average_precisions(&a, 0.2).unwrap()[0].ap;
        let ap_b = class_average_precisions(&b, 0.2).unwrap()[0].ap;
        prop_assert_eq!(ap_a, ap_b);
        prop_assert!((0.0..=1.0).contains(&ap_a));
    }

    #[test]
    fn ap_extremes(gts in proptest::collection::vec(int_box(24), 1..=8)) {
        let labeled: Vec<GroundTruthBox> = gts.iter().map(|b| GroundTruthBox { bbox: *b, class_id: ClassId(3) }).collect();
        let exact: Vec<Detection> = gts.iter().map(|b| Detection::new(*b, 0.5).unwrap()).collect();
        let input = [ImageEvalInput { predictions: &exact, ground_truths: &labeled }];
        prop_assert_eq!(class_average_precisions(&input, 0.5).unwrap()[0].ap, 1.0);
        let far = vec![Detection::new(BoundingBox::new(100.0, 100.0, 110.0, 110.0).unwrap(), 0.9).unwrap()];
        let input = [ImageEvalInput { predictions: &far, ground_truths: &labeled }];
        prop_assert_eq!(class_average_precisions(&input, 0.5).unwrap()[0].ap, 0.0);
    }

    #[test]
    fn micro_dice_survives_splitting_an_image(
        (dims, pred) in raster(32),
        gt_seed in proptest::collection::vec(0u8..2, 1024),
        cut in 0.0..1.0f64,
        others in proptest::collection::vec(raster(16), 0..3),
    ) {
        let (w, h) = (dims.width, dims.height);
        let gt: Vec<u8> = gt_seed.iter().cycle().take((w * h) as usize).copied().collect();
        let rows = ((h as f64 * cut) as u32).clamp(1, h.max(2) - 1);
        prop_assume!(h >= 2);
        let whole_box = [dims.full_frame()];
        let mut joined = vec![evaluate_image("x", &[InstanceMask::from_raster(dims, &pred).unwrap()], &whole_box, &InstanceMask::from_raster(dims, &gt).unwrap()).unwrap()];
        let mut split = Vec::new();
        for (k, (r0, r1)) in [(0, rows), (rows, h)].into_iter().enumerate() {
            let d = ImageDims::new(w, r1 - r0).unwrap();
            let s = |v: &[u8]| v[(r0 * w) as usize..(r1 * w) as usize].to_vec();
            split.push(evaluate_image(&format!("x{k}"), &[InstanceMask::from_raster(d, &s(&pred)).unwrap()], &[d.full_frame()], &InstanceMask::from_raster(d, &s(&gt)).unwrap()).unwrap());
        }
        for (k, (d, r)) in others.iter().enumerate() {
            let e = evaluate_image(&format!("o{k}"), &[InstanceMask::from_raster(*d, r).unwrap()], &[d.full_frame()], &InstanceMask::from_raster(*d, r).unwrap()).unwrap();
            joined.push(e.clone());
            split.push(e);
        }
        let a = summarize_segmentation(&joined).unwrap();
        let b = summarize_segmentation(&split).unwrap();
        prop_assert_eq!(a.micro_dice, b.micro_dice);
        prop_assert_eq!(a.micro_dice_at_detection, b.micro_dice_at_detection);
        for s in [&a, &b] {
            for v in [s.micro_dice, s.macro_dice, s.micro_dice_at_detection, s.macro_dice_at_detection] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
        prop_assert_eq!(b.images_evaluated + b.images_skipped, split.len());
    }

    #[test]
    fn red_regions_count_false_positives(kinds in proptest::collection::vec(0u8..4, 1..=16), stroke in 1u32..=3) {
        // 4x4 grid of 12x12 cells, boxes inset by 2: 0 empty, 1 TP, 2 FP, 3 FN
        let canvas = RgbImage::new(48, 48);
        let (mut preds, mut gts) = (Vec::new(), Vec::new());
        for (k, kind) in kinds.iter().enumerate() {
            let (x, y) = ((k % 4) as f64 * 12.0 + 2.0, (k / 4) as f64 * 12.0 + 2.0);
            let b = BoundingBox::new(x, y, x + 8.0, y + 8.0).unwrap();
            if matches!(kind, 1 | 2) { preds.push(Detection::new(b, 0.5).unwrap()); }
            if matches!(kind, 1 | 3) { gts.push(b); }
        }
        let m = match_image(&preds, &gts, 0.2).unwrap();
        let spec = OverlaySpec { stroke_width: stroke, ..OverlaySpec::default() };
        let out = render_overlay(&canvas, &m, &preds, &gts, None, &spec).unwrap();
        prop_assert_eq!(red_components(&out), m.false_positives.len());
    }
}

fn red_components(img: &RgbImage) -> usize {
    let (w, h) = img.dimensions();
    let mut seen = vec![false; (w * h) as usize];
    let mut count = 0;
    for start in 0..w * h {
        if seen[start as usize] || img.get_pixel(start % w, start / w).0 != RED {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start as usize] = true;
        while let Some(p) = stack.pop() {
            let (x, y) = (p % w, p / w);
            let nbrs = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for (nx, ny) in nbrs {
                if nx < w
                    && ny < h
                    && !seen[(ny * w + nx) as usize]
                    && img.get_pixel(nx, ny).0 == RED
                {
                    seen[(ny * w + nx) as usize] = true;
                    stack.push(ny * w + nx);
                }
            }
        }
    }
    count
}

fn set(v: &mut serde_json::Value, ptr: &str, x: serde_json::Value) {
    if let Some(slot) = v.pointer_mut(ptr) {
        *slot = x;
    }
}

fn fuzz_manifest(dir: &std::path::Path) -> DatasetManifest {
    let dims = ImageDims::new(32, 32).unwrap();
    DatasetManifest {
        name: "fuzz".into(),
        categories: BTreeMap::from([(ClassId(1), "c".into())]),
        images: vec![ImageRecord {
            id: "a".into(),
            file: dir.join("a.png"),
            dims,
            focus_class: None,
        }],
        gt_boxes: Some(BTreeMap::new()),
        gt_masks: None,
    }
}

#[derive(Debug, Clone)]
enum Mutation {
    Score(f64),
    Corner(usize, f64),
    DropField(&'static str),
    MaskCount,
    MaskSize(u32),
    Counts(u32),
    Rename(&'static str),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (-2.0..2.0f64).prop_map(Mutation::Score),
        (0usize..4, -10.0..50.0f64).prop_map(|(i, v)| Mutation::Corner(i, v)),
        prop_oneof![
            Just("source"),
            Just("model_version"),
            Just("detections"),
            Just("box"),
            Just("score")
        ]
        .prop_map(Mutation::DropField),
        Just(Mutation::MaskCount),
        (1u32..40).prop_map(Mutation::MaskSize),
        (0u32..2000).prop_map(Mutation::Counts),
        prop_oneof![Just("images"), Just("order")].prop_map(Mutation::Rename),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]
    #[test]
    fn mutated_prediction_files_are_accepted_valid_or_rejected_typed(muts in proptest::collection::vec(mutation(), 1..4)) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = fuzz_manifest(dir.path());
        let dims = ImageDims::new(32, 32).unwrap();
        let b = BoundingBox::new(2.0, 2.0, 10.0, 12.0).unwrap();
        let mut v = serde_json::json!({
            "source": "fuzz",
            "model_version": "m",
            "images": {"a": {
                "detections": [{"box": b.corners(), "score": 0.7, "phrase": "colony"}],
                "masks": [serde_json::to_value(box_to_mask(&b, dims)).unwrap()]
            }}
        });
        for m in &muts {
            match m {
                Mutation::Score(x) => set(&mut v, "/images/a/detections/0/score", (*x).into()),
                Mutation::Corner(i, c) => set(&mut v, &format!("/images/a/detections/0/box/{i}"), (*c).into()),
                Mutation::DropField(f) => {
                    for ptr in ["", "/images/a", "/images/a/detections/0"] {
                        if let Some(obj) = v.pointer_mut(ptr).and_then(|x| x.as_object_mut()) {
                            obj.remove(*f);
                        }
                    }
                }
                Mutation::MaskCount => {
                    if let Some(a) = v.pointer_mut("/images/a/masks").and_then(|x| x.as_array_mut()) {
                        if let Some(first) = a.first().cloned() {
                            a.push(first);
                        }
                    }
                }
                Mutation::MaskSize(x) => set(&mut v, "/images/a/masks/0/size/0", (*x).into()),
                Mutation::Counts(c) => set(&mut v, "/images/a/masks/0/counts/0", (*c).into()),
                Mutation::Rename(f) => {
                    for ptr in ["", "/images/a/masks/0"] {
                        if let Some(obj) = v.pointer_mut(ptr).and_then(|x| x.as_object_mut()) {
                            if let Some(x) = obj.remove(*f) {
                                obj.insert("extra".into(), x);
                            }
                        }
                    }
                }
            }
        }
        let path = dir.path().join("p.json");
        std::fs::write(&path, serde_json::to_vec(&v).unwrap()).unwrap();
        match load_predictions(&path, &manifest) {
            Ok(set) => {
                for (id, entry) in &set.images {
                    let rec = manifest.image(id).unwrap();
                    for d in &entry.detections {
                        prop_assert!((0.0..=1.0).contains(&d.confidence));
                        prop_assert!(d.bbox.fits_within(rec.dims));
                    }
                    if let Some(ms) = &entry.masks {
                        prop_assert_eq!(ms.len(), entry.detections.len());
                        prop_assert!(ms.iter().all(|m| m.dims() == rec.dims));
                    }
                }
            }
            Err(e) => prop_assert!(matches!(
                e,
                Error::Json { .. } | Error::Validation(_) | Error::InvalidGeometry(_) | Error::ReferentialIntegrity(_)
            ), "untyped rejection {e:?}"),
        }
    }
}
