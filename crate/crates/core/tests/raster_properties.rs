use std::path::PathBuf;

use proptest::prelude::*;
use sketchembed::ingest::{parse_quickdraw_line, render_input_image};
use sketchembed::raster::{gaussian_blur, pixel_loss, rasterize, rasterize_sketch, scale_params, ScaleShift};
use sketchembed::stroke::{to_absolute, validate, PenState, Sketch, Stroke5};
use sketchembed::PixelImage;

/// Draws each segment as a pen-up jump to its start followed by a pen-down move.
fn segments_sketch(segs: &[((i32, i32), (i32, i32))]) -> Sketch {
    let mut strokes = Vec::new();
    let mut cur = (0i32, 0i32);
    for &(a, b) in segs {
        strokes.push(Stroke5::new((a.0 - cur.0) as f64, (a.1 - cur.1) as f64, PenState::Down));
        strokes.push(Stroke5::new((b.0 - a.0) as f64, (b.1 - a.1) as f64, PenState::Up));
        cur = b;
    }
    strokes.push(Stroke5::new(0.0, 0.0, PenState::End));
    Sketch::new("segs", None, strokes)
}

fn arb_segments() -> impl Strategy<Value = Vec<((i32, i32), (i32, i32))>> {
    prop::collection::vec(((-20i32..20, -20i32..20), (-20i32..20, -20i32..20)), 1..8)
}

proptest! {
    #[test]
    fn segment_order_does_not_change_the_raster(segs in arb_segments()) {
        let fwd = segments_sketch(&segs);
        let mut rev_segs = segs.clone();
        rev_segs.reverse();
        let rev = segments_sketch(&rev_segs);
        // same bounds are needed for the same scale; the extra origin point is shared
        let a = rasterize_sketch(&fwd, 20, 20).unwrap();
        let b = rasterize_sketch(&rev, 20, 20).unwrap();
        prop_assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn moving_the_segment_away_never_brightens_a_pixel(
        a in (-5.0f64..5.0, -5.0f64..5.0),
        b in (-5.0f64..5.0, -5.0f64..5.0),
        dir in 0.0f64..std::f64::consts::TAU,
        d1 in 0.0f64..4.0,
        extra in 0.0f64..4.0,
    ) {
        let ss = ScaleShift { lambda: 1.0, x_shift: 0.0, y_shift: 0.0 };
        let (h, w) = (16, 16);
        let shifted = |d: f64| {
            let (ox, oy) = (d * dir.cos(), d * dir.sin());
            let s = vec![
                Stroke5::new(a.0 + ox, a.1 + oy, PenState::Down),
                Stroke5::new(b.0 - a.0, b.1 - a.1, PenState::End),
            ];
            rasterize(&to_absolute(&s), &ss, h, w)
        };
        let near = shifted(d1);
        let far = shifted(d1 + extra);
        // the pixel nearest the segment's midpoint before moving, moved away along `dir`
        let mid = ((a.0 + b.0) / 2.0 + d1 * dir.cos() + 8.0, (a.1 + b.1) / 2.0 + d1 * dir.sin() + 8.0);
        let (j, i) = (mid.0.round().clamp(0.0, 15.0) as usize, mid.1.round().clamp(0.0, 15.0) as usize);
        // pixels behind the segment relative to the motion get farther away
        let (px, py) = (j as f64 - 8.0, i as f64 - 8.0);
        let behind = (px - (a.0 + d1 * dir.cos())) * dir.cos() + (py - (a.1 + d1 * dir.sin())) * dir.sin() <= 0.0
            && (px - (b.0 + d1 * dir.cos())) * dir.cos() + (py - (b.1 + d1 * dir.sin())) * dir.sin() <= 0.0;
        if behind {
            prop_assert!(far.get(i, j) <= near.get(i, j));
        }
    }

    #[test]
    fn outputs_stay_in_unit_range_and_loss_is_nonnegative(segs in arb_segments(), sigma in 0.3f64..3.0) {
        let img = rasterize_sketch(&segments_sketch(&segs), 16, 16).unwrap();
        let blurred = gaussian_blur(&img, sigma);
        for v in img.data.iter().chain(&blurred.data) {
            prop_assert!((0.0..=1.0).contains(v));
        }
        prop_assert!(pixel_loss(&img, &blurred).unwrap() >= 0.0);
        prop_assert!(pixel_loss(&blurred, &img).unwrap() >= 0.0);
    }

    #[test]
    fn parsed_quickdraw_records_validate(
        strokes in prop::collection::vec(prop::collection::vec((0u16..256, 0u16..256), 1..12), 1..6)
    ) {
        let drawing: Vec<[Vec<u16>; 2]> =
            strokes.iter().map(|s| [s.iter().map(|p| p.0).collect(), s.iter().map(|p| p.1).collect()]).collect();
        let line = serde_json::json!({"word": "cat", "key_id": "1", "drawing": drawing}).to_string();
        let sketch = parse_quickdraw_line(&line).unwrap();
        prop_assert!(validate(&sketch).is_empty());
        let img = render_input_image(&sketch, 28, 28, 0.1).unwrap();
        prop_assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn pen_up_prediction_over_a_drawing_is_blank() {
    let s = vec![Stroke5::new(1.0, 1.0, PenState::Up), Stroke5::new(3.0, 2.0, PenState::Up), Stroke5::new(0.0, 0.0, PenState::End)];
    let pts = to_absolute(&s);
    let img = rasterize(&pts, &scale_params(&pts, 12, 12).unwrap(), 12, 12);
    assert!(img.data.iter().all(|&v| v < 1e-300));
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden_images() -> Vec<(&'static str, PixelImage)> {
    let house = Sketch::new(
        "house",
        None,
        vec![
            Stroke5::new(0.0, 0.0, PenState::Down),
            Stroke5::new(4.0, 0.0, PenState::Down),
            Stroke5::new(0.0, 4.0, PenState::Down),
            Stroke5::new(-4.0, 0.0, PenState::Down),
            Stroke5::new(0.0, -4.0, PenState::Down),
            Stroke5::new(2.0, -3.0, PenState::Down),
            Stroke5::new(2.0, 3.0, PenState::Up),
            Stroke5::new(-2.5, 4.0, PenState::Down),
            Stroke5::new(0.0, -2.0, PenState::Down),
            Stroke5::new(1.0, 0.0, PenState::Down),
            Stroke5::new(0.0, 2.0, PenState::End),
        ],
    );
    let sharp = render_input_image(&house, 28, 28, 0.1).unwrap();
    let blurred = gaussian_blur(&sharp, 2.0);
    vec![("house_28.pgm", sharp), ("house_28_blur2.pgm", blurred)]
}

#[test]
fn golden_renders_are_byte_identical() {
    for (name, img) in golden_images() {
        let mut bytes = Vec::new();
        img.write_pgm(&mut bytes).unwrap();
        let path = fixture(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&path, &bytes).unwrap();
        }
        let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e} (set UPDATE_GOLDEN=1 to create)", path.display()));
        assert!(expected == bytes, "{name} differs from the stored fixture");
    }
}
