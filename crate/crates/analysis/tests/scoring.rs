use proptest::prelude::*;
use tactwrist_analysis::anova::{rm_anova_2way, AnovaOptions, RmDesign};
use tactwrist_analysis::rates::{in_region_rate, strongest_point_rate};
use tactwrist_analysis::ttest::{unpaired_t, Variance};
use tactwrist_core::handmap::{Cell, HandMap, Mask, Region};
use tactwrist_core::sim::{Quality, SensationReport};

fn cells_of(map: &HandMap, region: Region) -> Vec<Cell> {
    map.cells().filter(|(_, r)| *r == region).map(|(c, _)| c).collect()
}

fn non_thumb_hand(map: &HandMap) -> Vec<Cell> {
    map.cells()
        .filter(|(_, r)| *r != Region::Background && *r != Region::Thumb)
        .map(|(c, _)| c)
        .collect()
}

/// 50x40 synthetic map: 10 thumb rows, 10 index rows, 20 palm rows.
fn block_map() -> HandMap {
    let mut text = String::from("version 1\nscale_mm 2\nsize 50 40\ngrid\n");
    for y in 0..40 {
        let c = match y {
            0..=9 => 'T',
            10..=19 => 'I',
            _ => 'P',
        };
        text.push_str(&c.to_string().repeat(48));
        text.push_str("..\n");
    }
    HandMap::parse(&text).unwrap()
}

#[test]
fn fixture_331_of_1000_thumb_cells() {
    let map = block_map();
    let mut m = Mask::empty(map.width(), map.height());
    let thumb = cells_of(&map, Region::Thumb);
    let rest = non_thumb_hand(&map);
    for &c in thumb.iter().take(331).chain(rest.iter().take(669)) {
        m.set(c, true);
    }
    // background cells are not part of the denominator
    for (c, _) in map.cells().filter(|(_, r)| *r == Region::Background).take(50) {
        m.set(c, true);
    }
    assert_eq!(thumb.iter().filter(|&&c| m.get(c)).count(), 331);
    assert_eq!(m.count(), 1050);
    let rate = in_region_rate(&m, Region::Thumb, &map).unwrap();
    assert!((rate - 33.1).abs() < 1e-12, "{rate}");
}

fn report_at(map: &HandMap, strongest: Cell) -> SensationReport {
    let mut m = Mask::empty(map.width(), map.height());
    m.set(strongest, true);
    SensationReport::new(m, strongest, Quality::Tingling).unwrap()
}

fn fixture(map: &HandMap, in_thumb: usize, total: usize) -> Vec<SensationReport> {
    let thumb = cells_of(map, Region::Thumb);
    let other = cells_of(map, Region::Palm);
    (0..total)
        .map(|k| {
            if k < in_thumb {
                report_at(map, thumb[k * 7 % thumb.len()])
            } else {
                report_at(map, other[k * 13 % other.len()])
            }
        })
        .collect()
}

#[test]
fn strongest_point_fixtures() {
    let map = HandMap::bundled();
    assert_eq!(strongest_point_rate(&fixture(map, 6, 24), Region::Thumb, map), Ok(0.25));
    assert_eq!(strongest_point_rate(&fixture(map, 12, 24), Region::Thumb, map), Ok(0.5));
    assert_eq!(strongest_point_rate(&fixture(map, 24, 24), Region::Thumb, map), Ok(1.0));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let map = HandMap::bundled();
    let m = Mask::empty(10, 10);
    assert!(in_region_rate(&m, Region::Thumb, map).is_err());
    assert!(in_region_rate(&Mask::empty(map.width(), map.height()), Region::Thumb, map).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rate_is_additive_over_disjoint_parts(picks in prop::collection::btree_set(0usize..3000, 2..400), split in any::<prop::sample::Index>()) {
        let map = HandMap::bundled();
        let hand: Vec<Cell> = map.cells().filter(|(_, r)| *r != Region::Background).map(|(c, _)| c).collect();
        let cells: Vec<Cell> = picks.iter().map(|&i| hand[i % hand.len()]).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        prop_assume!(cells.len() >= 2);
        let k = 1 + split.index(cells.len() - 1);
        let mk = |cs: &[Cell]| {
            let mut m = Mask::empty(map.width(), map.height());
            for &c in cs {
                m.set(c, true);
            }
            m
        };
        let (whole, a, b) = (mk(&cells), mk(&cells[..k]), mk(&cells[k..]));
        let mut rev = cells.clone();
        rev.reverse();
        for region in [Region::Thumb, Region::Index, Region::Palm] {
            let r = in_region_rate(&whole, region, map).unwrap();
            // insertion order does not matter
            prop_assert_eq!(r, in_region_rate(&mk(&rev), region, map).unwrap());
            // counts add: rate * size is additive
            let ra = in_region_rate(&a, region, map).unwrap() * k as f64;
            let rb = in_region_rate(&b, region, map).unwrap() * (cells.len() - k) as f64;
            prop_assert!((r * cells.len() as f64 - ra - rb).abs() < 1e-9);
        }
    }

    #[test]
    fn anova_closes_and_p_in_range(vals in prop::collection::vec(-50.0f64..50.0, 4 * 6..=12 * 6), shift in -10.0f64..10.0) {
        let n = vals.len() / 6;
        let data: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|s| (0..3).map(|i| (0..2).map(|j| vals[s * 6 + i * 2 + j] + shift * i as f64).collect()).collect())
            .collect();
        let r = rm_anova_2way(&RmDesign::new(&data).unwrap(), AnovaOptions { greenhouse_geisser: true });
        prop_assert!((r.ss_components() - r.ss_total).abs() <= 1e-9 * r.ss_total);
        for e in [r.a, r.b, r.ab] {
            prop_assert!((0.0..=1.0).contains(&e.p));
            prop_assert!((0.0..=1.0).contains(&e.gg.unwrap().1));
            prop_assert!((0.0..=1.0).contains(&e.partial_eta_sq));
        }
        for pw in r.posthoc_a.iter().chain(&r.posthoc_b) {
            prop_assert!(pw.p_bonferroni >= pw.p && pw.p_bonferroni <= 1.0);
        }
        if let Some(m) = r.mauchly_a {
            prop_assert!((0.0..=1.0).contains(&m.p) && (0.0..=1.0).contains(&m.w));
        }
    }

    #[test]
    fn t_p_in_range(x in prop::collection::vec(0.0f64..100.0, 2..20), y in prop::collection::vec(0.0f64..100.0, 2..20)) {
        for v in [Variance::Pooled, Variance::Welch] {
            if let Ok(t) = unpaired_t(&x, &y, v) {
                prop_assert!((0.0..=1.0).contains(&t.p));
            }
        }
    }
}
