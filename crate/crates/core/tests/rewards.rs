use curloop::rewards::{
    band_score, hue_rewards, read_corpus, rgb_to_hsv, write_corpus, HueBand, ImageTensor, PixelRange,
};
use proptest::prelude::*;

fn image(h: usize, w: usize) -> impl Strategy<Value = ImageTensor> {
    prop::collection::vec(-1.0..=1.0f64, 3 * h * w)
        .prop_map(move |d| ImageTensor::new(h, w, PixelRange::Signed, d).unwrap())
}

fn hue_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

proptest! {
    #[test]
    fn band_scores_lie_in_unit_interval(img in image(4, 5)) {
        for band in [HueBand::warm(), HueBand::cool()] {
            let s = band_score(&img, &band);
            prop_assert!((0.0..=1.0).contains(&s), "{s}");
        }
    }

    #[test]
    fn channel_rotation_shifts_hue_by_a_third(r in 0.0..=1.0f64, g in 0.0..=1.0f64, b in 0.0..=1.0f64) {
        let (h, s, _) = rgb_to_hsv(r, g, b).unwrap();
        prop_assume!(s > 1e-3);
        // R→G, G→B, B→R
        let (h2, s2, _) = rgb_to_hsv(b, r, g).unwrap();
        prop_assert!(hue_gap(h2, h + 1.0 / 3.0) < 1e-9);
        prop_assert!((s - s2).abs() < 1e-15);
    }

    #[test]
    fn rotate_channels_moves_red_into_green(img in image(3, 3)) {
        let rot = img.rotate_channels();
        for k in 0..img.pixels() {
            let [r, g, b] = img.unit_pixel(k);
            prop_assert_eq!(rot.unit_pixel(k), [b, r, g]);
        }
        prop_assert_eq!(rot.rotate_channels().rotate_channels(), img);
    }

    #[test]
    fn corpus_round_trips(imgs in prop::collection::vec(image(2, 3), 1..5)) {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &imgs).unwrap();
        prop_assert_eq!(read_corpus(buf.as_slice()).unwrap(), imgs);
    }
}

#[test]
fn warm_and_cool_bands_are_disjoint() {
    let (warm, cool) = (HueBand::warm(), HueBand::cool());
    for i in 0..=10_000 {
        let h = i as f64 / 10_000.0;
        assert!(!(warm.contains(h) && cool.contains(h)), "h = {h}");
    }
}

#[test]
fn solid_colours_score_in_their_band() {
    let red = ImageTensor::solid(2, 2, [1.0, 0.0, 0.0]).unwrap();
    let blue = ImageTensor::solid(2, 2, [0.0, 0.0, 1.0]).unwrap();
    let grey = ImageTensor::solid(2, 2, [0.5, 0.5, 0.5]).unwrap();
    assert!((band_score(&red, &HueBand::warm()) - 1.0).abs() < 1e-7);
    assert_eq!(band_score(&red, &HueBand::cool()), 0.0);
    assert!((band_score(&blue, &HueBand::cool()) - 1.0).abs() < 1e-7);
    assert_eq!(band_score(&grey, &HueBand::warm()), 0.0);
    let (mu, sd) = ([0.5; 3], [0.25; 3]);
    let (rt, rp) = hue_rewards(&red, mu, sd);
    assert!(rt > rp);
    let (bt, bp) = hue_rewards(&blue, mu, sd);
    assert!(bp > bt);
}

#[test]
fn corpus_rejects_garbage() {
    assert!(read_corpus("not a corpus\n".as_bytes()).is_err());
    assert!(read_corpus("curloop-images 1 1 1 1 signed\n0 0\n".as_bytes()).is_err());
}
