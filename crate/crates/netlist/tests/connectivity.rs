use std::collections::VecDeque;

use muallm_netlist::{connected_components, Connectivity, WireMask};
use proptest::prelude::*;

/// Breadth-first flood fill, labels handed out in row-major discovery order.
fn flood_fill(mask: &WireMask, eight: bool) -> Vec<u32> {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || labels[y * w + x] != 0 {
                continue;
            }
            next += 1;
            labels[y * w + x] = next;
            let mut queue = VecDeque::from([(x, y)]);
            while let Some((cx, cy)) = queue.pop_front() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && labels[ny * w + nx] == 0 {
                            labels[ny * w + nx] = next;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
        }
    }
    labels
}

fn arb_mask() -> impl Strategy<Value = WireMask> {
    (1usize..=128, 1usize..=128, 0.05f64..0.7, any::<u64>()).prop_map(|(w, h, density, seed)| {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bits = (0..w * h).map(|_| rng.random_bool(density)).collect();
        WireMask::from_bits(w, h, bits)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn union_find_matches_flood_fill(mask in arb_mask()) {
        for (conn, eight) in [(Connectivity::Eight, true), (Connectivity::Four, false)] {
            let got = connected_components(&mask, conn);
            let want = flood_fill(&mask, eight);
            prop_assert_eq!(&got.labels, &want);
            let max = want.iter().copied().max().unwrap_or(0) as usize;
            prop_assert_eq!(got.regions.len(), max);
            for r in &got.regions {
                let count = want.iter().filter(|&&l| l == r.region_id).count();
                prop_assert_eq!(r.pixel_count, count);
            }
        }
    }
}
