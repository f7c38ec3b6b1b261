use proptest::prelude::*;
use shiftforge_core::gradcam::{gradcam, share_scale, upsample_bilinear};
use shiftforge_core::nn::{ResNet, ResNetConfig};
use shiftforge_core::pixels::Image;

fn image(values: Vec<f32>, size: usize) -> Image {
    Image::new(3, size, size, values).unwrap()
}

/// Cells whose value is within `eta` of the maximum.
fn near_max_cells(map: &[f64], w: usize, eta: f64) -> Vec<(usize, usize)> {
    let m = map.iter().copied().fold(f64::MIN, f64::max);
    (0..map.len()).filter(|&i| map[i] >= m - eta).map(|i| (i / w, i % w)).collect()
}

fn max_adjacent_difference(map: &[f64], h: usize, w: usize) -> f64 {
    let mut d: f64 = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = map[y * w + x];
            if x + 1 < w {
                d = d.max((v - map[y * w + x + 1]).abs());
            }
            if y + 1 < h {
                d = d.max((v - map[(y + 1) * w + x]).abs());
            }
        }
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn contracts(
        seed in any::<u64>(),
        width in 2usize..5,
        size in prop::sample::select(vec![8usize, 12, 16]),
        layer in 1usize..=3,
        class in 0usize..2,
        raw in prop::collection::vec(-1.0f32..1.0, 3 * 16 * 16),
    ) {
        let mut net = ResNet::new(ResNetConfig::tiny(width, 2), seed);
        let img = image(raw[..3 * size * size].to_vec(), size);
        let name = format!("layer{layer}");
        let map = gradcam(&mut net, "s", &img, class, &name).unwrap();
        prop_assert_eq!((map.height, map.width), (size, size));
        prop_assert_eq!(map.upsampled_map.len(), size * size);
        prop_assert_eq!(map.raw_map.len(), map.raw_height * map.raw_width);
        prop_assert!(map.raw_map.iter().all(|&v| v >= 0.0));
        prop_assert!(map.upsampled_map.iter().all(|&v| v >= 0.0));

        let (h, w) = (map.raw_height, map.raw_width);
        let up = &map.upsampled_map;
        let argmax = (0..up.len()).max_by(|&a, &b| up[a].total_cmp(&up[b])).unwrap();
        let (py, px) = (argmax / size, argmax % size);
        let cell = (py * h / size, px * w / size);
        let scale = (size / h).min(size / w).max(1) as f64;
        let eta = max_adjacent_difference(&map.raw_map, h, w) / scale + 1e-12;
        let ties = near_max_cells(&map.raw_map, w, eta);
        prop_assert!(
            ties.iter().any(|&(y, x)| y.abs_diff(cell.0) <= 1 && x.abs_diff(cell.1) <= 1),
            "argmax cell {:?} far from {:?}", cell, ties
        );

        let zero = image(vec![0.0; 3 * size * size], size);
        let z = gradcam(&mut net, "z", &zero, class, &name).unwrap();
        prop_assert!(z.raw_map.iter().chain(&z.upsampled_map).all(|&v| v == 0.0));

        let mut maps = vec![map.clone(), z];
        share_scale(&mut maps);
        prop_assert!(maps.iter().all(|m| m.upsampled_map.iter().all(|&v| v <= 1.0 + 1e-12)));
    }

    #[test]
    fn upsampling_keeps_range(src in prop::collection::vec(0.0f64..5.0, 1..17), out in 1usize..24) {
        let w = src.len();
        let up = upsample_bilinear(&src, 1, w, out, out);
        let (lo, hi) = src.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(up.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }
}
