use proptest::prelude::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use scrapsight_core::imgops::{self, Image};
use scrapsight_core::{BBox, Detection};

fn random_image(rng: &mut StdRng, w: usize, h: usize, ch: usize) -> Image {
    let data = (0..w * h * ch).map(|_| rng.gen()).collect();
    Image::new(w, h, ch, data).unwrap()
}

fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Direct 2-D convolution with replicate padding, unrounded.
fn direct_filter(img: &Image, radius: usize, weight: impl Fn(isize, isize) -> f64) -> Vec<f64> {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let r = radius as isize;
    let mut out = Vec::with_capacity(w * h * ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut s = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = clamp(x as isize + dx, w);
                        let sy = clamp(y as isize + dy, h);
                        s += weight(dx, dy) * img.get(sx, sy, c) as f64;
                    }
                }
                out.push(s);
            }
        }
    }
    out
}

fn gaussian_oracle_weights(sigma: f64) -> (usize, Vec<f64>) {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().map(|a| raw.iter().map(|b| a * b).sum::<f64>()).sum();
    let side = raw.len();
    let mut w2 = Vec::with_capacity(side * side);
    for a in &raw {
        for b in &raw {
            w2.push(a * b / total);
        }
    }
    (r as usize, w2)
}

#[test]
fn box_average_matches_sliding_window() {
    let mut rng = StdRng::seed_from_u64(11);
    for case in 0..40 {
        let (w, h) = (rng.gen_range(1..14), rng.gen_range(1..14));
        let ch = if case % 2 == 0 { 1 } else { 3 };
        let k = [3, 5, 7][case % 3];
        let img = random_image(&mut rng, w, h, ch);
        let n = (k * k) as f64;
        let expected: Vec<u8> = direct_filter(&img, k / 2, |_, _| 1.0)
            .into_iter()
            .map(|s| (s / n).round() as u8)
            .collect();
        assert_eq!(imgops::box_average(&img, k).unwrap().data(), &expected[..], "case {case}");
    }
}

#[test]
fn gaussian_matches_direct_2d_within_one() {
    let mut rng = StdRng::seed_from_u64(12);
    for case in 0..40 {
        let (w, h) = (rng.gen_range(1..16), rng.gen_range(1..16));
        let ch = if case % 2 == 0 { 1 } else { 3 };
        let sigma = rng.gen_range(0.3..2.5);
        let img = random_image(&mut rng, w, h, ch);
        let (r, weights) = gaussian_oracle_weights(sigma);
        let side = 2 * r as isize + 1;
        let oracle = direct_filter(&img, r, |dx, dy| {
            weights[((dy + r as isize) * side + dx + r as isize) as usize]
        });
        let out = imgops::gaussian_blur(&img, sigma).unwrap();
        for (got, want) in out.data().iter().zip(&oracle) {
            let want = want.round().clamp(0.0, 255.0);
            assert!((*got as f64 - want).abs() <= 1.0, "case {case}: {got} vs {want}");
        }
    }
}

#[test]
fn sharpen_center_matches_two_pass_hand_computation() {
    let mut data = vec![50u8; 25];
    data[12] = 200;
    let img = Image::gray(5, 5, data).unwrap();
    let (r, weights) = gaussian_oracle_weights(1.0);
    let side = 2 * r as isize + 1;
    let blurred = direct_filter(&img, r, |dx, dy| {
        weights[((dy + r as isize) * side + dx + r as isize) as usize]
    });
    let expected = (200.0 + (200.0 - blurred[12])).round().clamp(0.0, 255.0) as u8;
    let out = imgops::sharpen(&img, 1.0, 1.0).unwrap();
    assert_eq!(out.get(2, 2, 0), expected);
    assert!(expected > 200);
}

fn brightest_centroid(img: &Image, invert: bool) -> (f64, f64) {
    let key = |v: u8| if invert { 255 - v } else { v };
    let peak = img.data().iter().map(|&v| key(v)).max().unwrap();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            if key(img.get(x, y, 0)) == peak {
                sx += x as f64;
                sy += y as f64;
                n += 1.0;
            }
        }
    }
    (sx / n, sy / n)
}

#[test]
fn transforms_do_not_move_objects() {
    let (w, h) = (32, 24);
    let (bx, by) = (21.0, 9.0);
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            data.push((20.0 + 230.0 * (-d2 / 8.0).exp()).round() as u8);
        }
    }
    let img = Image::gray(w, h, data).unwrap();
    let outputs = vec![
        ("equalize", imgops::histogram_equalize(&img), false),
        ("gamma", imgops::power_law(&img, 0.4, 1.0).unwrap(), false),
        ("avg3", imgops::box_average(&img, 3).unwrap(), false),
        ("avg5", imgops::box_average(&img, 5).unwrap(), false),
        ("blur", imgops::gaussian_blur(&img, 1.0).unwrap(), false),
        ("sharpen", imgops::sharpen(&img, 1.0, 1.0).unwrap(), false),
        ("negative", imgops::negative(&img), true),
    ];
    for (name, out, invert) in outputs {
        assert_eq!((out.width(), out.height(), out.channels()), (w, h, 1), "{name}");
        let (cx, cy) = brightest_centroid(&out, invert);
        assert!((cx - bx).abs() <= 1.0 && (cy - by).abs() <= 1.0, "{name}: ({cx},{cy})");
    }
}

fn outline(l: usize, t: usize, r: usize, b: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for y in t..=b {
        for x in l..=r {
            if x - l < 2 || r - x < 2 || y - t < 2 || b - y < 2 {
                v.push((x, y));
            }
        }
    }
    v
}

#[test]
fn two_boxes_modify_exactly_their_outlines() {
    let img = Image::filled(20, 20, 3, 128).unwrap();
    let det = |class_id, cx, cy, w, h| Detection {
        bbox: BBox::new(cx, cy, w, h),
        class_id,
        confidence: 0.8,
        objectness: 0.8,
    };
    // Edges land on whole pixels: [2,8)x[3,7) and [12,18)x[10,18).
    let dets = [det(0, 0.25, 0.25, 0.3, 0.2), det(2, 0.75, 0.7, 0.3, 0.4)];
    let names = scrapsight_core::default_class_names();
    let out = imgops::draw_detections(&img, &dets, &names).unwrap();
    let mut expected: Vec<(usize, usize)> = outline(2, 3, 7, 6);
    expected.extend(outline(12, 10, 17, 17));
    expected.sort();
    let mut changed = Vec::new();
    for y in 0..20 {
        for x in 0..20 {
            if (0..3).any(|c| out.get(x, y, c) != img.get(x, y, c)) {
                changed.push((x, y));
            }
        }
    }
    changed.sort();
    assert_eq!(changed, expected);
}

proptest! {
    #[test]
    fn equalization_preserves_rank_order(data in prop::collection::vec(any::<u8>(), 1..200)) {
        let n = data.len();
        let img = Image::gray(n, 1, data.clone()).unwrap();
        let out = imgops::histogram_equalize(&img);
        for i in 0..n {
            for j in 0..n {
                if data[i] <= data[j] {
                    prop_assert!(out.data()[i] <= out.data()[j]);
                }
            }
        }
    }

    #[test]
    fn negative_is_involution(w in 1usize..10, h in 1usize..10, rgb in any::<bool>(), seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let img = random_image(&mut rng, w, h, if rgb { 3 } else { 1 });
        prop_assert_eq!(imgops::negative(&imgops::negative(&img)), img);
    }

    #[test]
    fn transforms_preserve_geometry(w in 1usize..12, h in 1usize..12, rgb in any::<bool>(), seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let ch = if rgb { 3 } else { 1 };
        let img = random_image(&mut rng, w, h, ch);
        let outs = [
            imgops::histogram_equalize(&img),
            imgops::power_law(&img, 0.55, 1.0).unwrap(),
            imgops::box_average(&img, 3).unwrap(),
            imgops::gaussian_blur(&img, 0.8).unwrap(),
            imgops::sharpen(&img, 1.0, 1.0).unwrap(),
            imgops::negative(&img),
        ];
        for o in outs {
            prop_assert_eq!((o.width(), o.height(), o.channels()), (w, h, ch));
        }
        prop_assert_eq!(imgops::power_law(&img, 1.0, 1.0).unwrap(), img);
    }
}
