mod common;

use agb_core::compositing::{
    load_series, median_composite, read_manifest, temporal_mean, write_manifest, DateWindow, ManifestEntry, SceneSeries,
};
use agb_core::raster::{write_raster, ChannelId, Raster};
use agb_core::synth::SCENE_YEAR;
use agb_core::Error;
use chrono::NaiveDate;
use common::{grid, matches_oracle, mean_oracle, median_oracle, random_series, SeriesParts};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn summer() -> DateWindow {
    DateWindow::summer(SCENE_YEAR)
}

#[test]
fn median_and_mean_match_oracles_on_random_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let parts = random_series(&mut rng);
        let series = parts.series();
        assert!(matches_oracle(&median_composite(&series).unwrap(), &median_oracle(&parts)));
        match temporal_mean(&series, summer()) {
            Ok(r) => assert!(matches_oracle(&r, &mean_oracle(&parts, summer()))),
            Err(Error::EmptyWindow(_)) => assert!(parts.dates.iter().all(|d| !summer().contains(*d))),
            Err(e) => panic!("{e}"),
        }
    }
}

#[test]
fn hand_examples() {
    let g = grid(1, 1);
    let one = |v: f64| Raster::single(g.clone(), ChannelId::s1("VV"), vec![v], vec![true]).unwrap();
    let day = |m, d| NaiveDate::from_ymd_opt(2021, m, d).unwrap();
    let s = SceneSeries::new(vec![one(10.0), one(90.0), one(20.0)], vec![day(6, 1), day(6, 2), day(6, 3)], None).unwrap();
    assert_eq!(median_composite(&s).unwrap().band(0), &[20.0]);
    let s = SceneSeries::new(vec![one(2.0), one(4.0), one(9.0)], vec![day(6, 5), day(7, 5), day(9, 5)], None).unwrap();
    assert_eq!(temporal_mean(&s, summer()).unwrap().band(0), &[3.0]);
    let s = SceneSeries::new(vec![one(7.5); 3], vec![day(6, 5), day(7, 5), day(8, 5)], None).unwrap();
    assert_eq!(temporal_mean(&s, summer()).unwrap().band(0), &[7.5]);
}

fn shuffled(parts: &SeriesParts, rng: &mut ChaCha8Rng) -> SeriesParts {
    let mut order: Vec<usize> = (0..parts.scenes.len()).collect();
    order.shuffle(rng);
    SeriesParts {
        scenes: order.iter().map(|&i| parts.scenes[i].clone()).collect(),
        dates: order.iter().map(|&i| parts.dates[i]).collect(),
        scl: order.iter().map(|&i| parts.scl[i].clone()).collect(),
    }
}

/// Marks one observation as cloud (class 9).
fn cloud_one(parts: &SeriesParts, t: usize, i: usize) -> SeriesParts {
    let mut scl = parts.scl.clone();
    let (g, ch, mut data, valid) = scl[t].clone().into_parts();
    data[i] = 9.0;
    scl[t] = Raster::new(g, ch, data, valid).unwrap();
    SeriesParts {
        scenes: parts.scenes.clone(),
        dates: parts.dates.clone(),
        scl,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = random_series(&mut rng);
        let other = shuffled(&parts, &mut rng);
        let (a, b) = (parts.series(), other.series());
        prop_assert_eq!(median_composite(&a).unwrap(), median_composite(&b).unwrap());
        if let Ok(m) = temporal_mean(&a, summer()) {
            prop_assert_eq!(m, temporal_mean(&b, summer()).unwrap());
        }
    }

    #[test]
    fn output_within_usable_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = random_series(&mut rng);
        let med = median_composite(&parts.series()).unwrap();
        let usable = median_oracle(&parts);
        for (i, u) in usable.iter().enumerate() {
            prop_assert_eq!(u.is_some(), med.valid_mask()[i]);
        }
        // Bounds over the usable values at each pixel.
        for i in 0..med.n_pixels() {
            if !med.valid_mask()[i] {
                continue;
            }
            for b in 0..med.n_channels() {
                let vals: Vec<f64> = (0..parts.scenes.len())
                    .filter(|&t| {
                        let code = parts.scl[t].band(0)[i] as u8;
                        parts.scenes[t].valid_mask()[i] && !agb_core::compositing::CLOUDY_CLASSES.contains(&code)
                    })
                    .map(|t| parts.scenes[t].band(b)[i])
                    .collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = med.band(b)[i];
                prop_assert!(lo <= v && v <= hi);
            }
        }
    }

    #[test]
    fn clouding_one_observation_only_touches_its_pixel(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = random_series(&mut rng);
        let n = parts.scenes[0].n_pixels();
        let t = rand::Rng::gen_range(&mut rng, 0..parts.scenes.len());
        let i = rand::Rng::gen_range(&mut rng, 0..n);
        let before = median_composite(&parts.series()).unwrap();
        let after = median_composite(&cloud_one(&parts, t, i).series()).unwrap();
        for j in (0..n).filter(|&j| j != i) {
            prop_assert_eq!(before.valid_mask()[j], after.valid_mask()[j]);
            for b in 0..before.n_channels() {
                prop_assert_eq!(before.band(b)[j].to_bits(), after.band(b)[j].to_bits());
            }
        }
    }

    #[test]
    fn always_cloudy_pixel_is_invalid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut parts = random_series(&mut rng);
        let i = rand::Rng::gen_range(&mut rng, 0..parts.scenes[0].n_pixels());
        for t in 0..parts.scenes.len() {
            parts = cloud_one(&parts, t, i);
        }
        let med = median_composite(&parts.series()).unwrap();
        prop_assert!(!med.valid_mask()[i]);
        if let Ok(m) = temporal_mean(&parts.series(), summer()) {
            prop_assert!(!m.valid_mask()[i]);
        }
    }
}

#[test]
fn manifest_round_trip_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let parts = random_series(&mut rng);
    let mut entries = Vec::new();
    for t in 0..parts.scenes.len() {
        let p = dir.path().join(format!("s{t}.tif"));
        let q = dir.path().join(format!("scl{t}.tif"));
        write_raster(&p, &parts.scenes[t]).unwrap();
        write_raster(&q, &parts.scl[t]).unwrap();
        entries.push(ManifestEntry {
            path: p,
            date: parts.dates[t],
            scl: Some(q),
        });
    }
    let m = dir.path().join("manifest.txt");
    write_manifest(&m, &entries).unwrap();
    assert_eq!(read_manifest(&m).unwrap(), entries);
    let loaded = load_series(&m).unwrap();
    assert_eq!(median_composite(&loaded).unwrap(), median_composite(&parts.series()).unwrap());
}

#[test]
fn manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.txt");
    std::fs::write(&m, "# nothing\n").unwrap();
    assert!(matches!(read_manifest(&m), Err(Error::EmptySeries)));
    std::fs::write(&m, "a.tif,2021-13-01\n").unwrap();
    assert!(matches!(read_manifest(&m), Err(Error::Format { .. })));
}
