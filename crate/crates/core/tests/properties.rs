use cosr::deployment::{generate_deployment, Deployment, Point};
use cosr::grouping::{enumerate_compatible_groups, optimize_plan, Policy};
use cosr::mac::PacketRecord;
use cosr::metrics::{delay_percentile, summarize};
use cosr::params::SimParams;
use cosr::phy::{self, LinkMap};
use proptest::prelude::*;

fn record(sta: usize, delay: u64) -> PacketRecord {
    PacketRecord { sta, arrival_time: 0, delivery_time: delay, txop_id: 1, delivered: true }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn path_loss_monotone(d in 0.1f64..100.0, extra in 0.0f64..50.0, walls in 0u32..3) {
        let a = phy::path_loss(d, 6.0, walls).unwrap();
        prop_assert!(phy::path_loss(d + extra, 6.0, walls).unwrap() >= a);
        prop_assert!(phy::path_loss(d, 6.0, walls + 1).unwrap() >= a);
        let p = SimParams::default();
        prop_assert!(phy::path_loss_auto(d + extra, &p).unwrap() >= phy::path_loss_auto(d, &p).unwrap());
    }

    #[test]
    fn mcs_selection_monotone(a in -10.0f64..60.0, b in -10.0f64..60.0) {
        let t = SimParams::default().mcs_table;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let idx = |s: f64| phy::select_mcs(s, &t).map(|m| i32::from(m.index)).unwrap_or(-1);
        prop_assert!(idx(lo) <= idx(hi));
    }

    #[test]
    fn sinr_linear_matches_db(seed in any::<u64>(), sta in 0usize..8, mask in 0u8..16) {
        let p = SimParams { inter_ap_distance: 15.0, ..SimParams::default() };
        let dep = generate_deployment(&p, seed).unwrap();
        let serving = dep.association[sta];
        let interferers: Vec<usize> = (0..4).filter(|&a| a != serving && mask & (1 << a) != 0).collect();
        let got = phy::sinr(sta, serving, &interferers, &dep, &p).unwrap();
        // dB-domain recomputation with a log-sum-exp of interferer powers.
        let rx = |ap: usize| {
            let d = dep.ap_positions[ap].distance(dep.sta_positions[sta]);
            p.tx_power_dbm() - phy::path_loss_auto(d, &p).unwrap()
        };
        let noise_dbm = 10.0 * (p.noise_power * 1e3).log10();
        let mut terms: Vec<f64> = interferers.iter().map(|&a| rx(a)).collect();
        terms.push(noise_dbm);
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total = m + 10.0 * terms.iter().map(|t| 10f64.powf((t - m) / 10.0)).sum::<f64>().log10();
        let expected = rx(serving) - total;
        prop_assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn percentile_matches_sort_oracle(delays in prop::collection::vec(0u64..10_000_000, 1..400), q in 0.001f64..0.999) {
        let records: Vec<_> = delays.iter().map(|&d| record(0, d)).collect();
        let mut sorted = delays.clone();
        sorted.sort();
        let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
        prop_assert_eq!(delay_percentile(&records, q).unwrap(), sorted[rank - 1] as f64 / 1000.0);
    }

    #[test]
    fn percentile_permutation_invariant(delays in prop::collection::vec(0u64..1_000_000, 1..200), seed in any::<u64>()) {
        let records: Vec<_> = delays.iter().enumerate().map(|(i, &d)| record(i % 8, d)).collect();
        let mut shuffled = records.clone();
        let mut s = seed;
        for i in (1..shuffled.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        for q in [0.5, 0.99] {
            prop_assert_eq!(delay_percentile(&records, q).unwrap(), delay_percentile(&shuffled, q).unwrap());
        }
        let p = SimParams::default();
        let dep = generate_deployment(&p, 0).unwrap();
        prop_assert_eq!(summarize(&records, &dep, &p), summarize(&shuffled, &dep, &p));
    }

    #[test]
    fn sta_percentiles_ordered(delays in prop::collection::vec((0usize..8, 0u64..1_000_000), 1..300)) {
        let records: Vec<_> = delays.iter().map(|&(s, d)| record(s, d)).collect();
        let p = SimParams::default();
        let dep = generate_deployment(&p, 0).unwrap();
        let s = summarize(&records, &dep, &p);
        for st in &s.stas {
            prop_assert!(st.delay_p50 <= st.delay_p99);
        }
        let total: f64 = s.stas.iter().map(|x| x.throughput).sum();
        prop_assert!((s.network.aggregate_throughput - total).abs() < 1e-6);
    }
}

#[test]
fn airtime_within_txop_for_every_mcs_and_size() {
    let p = SimParams::default();
    for coordinated in [false, true] {
        for m in p.mcs_table.entries() {
            let n_max = phy::max_aggregation(m, &p, coordinated);
            assert!(n_max >= 1);
            let mut last = 0;
            for n in 1..=n_max {
                let d = phy::txop_duration(n, m, &p, coordinated).unwrap();
                assert!(d <= p.txop_max_us(), "MCS {} n={n}: {d}", m.index);
                assert!(d >= last);
                last = d;
            }
            assert!(phy::txop_duration(n_max + 1, m, &p, coordinated).is_err());
        }
    }
}

fn random_subsets(dep: &Deployment, seed: u64) -> Vec<Vec<usize>> {
    // At most one STA per AP, chosen by two bits of a per-subset word.
    (0..32u64)
        .map(|k| {
            let bits = seed.rotate_left(k as u32 * 2) ^ k.wrapping_mul(0x9E37_79B9);
            (0..dep.num_aps())
                .filter_map(|ap| {
                    let stas: Vec<usize> = dep.stas_of(ap).collect();
                    stas.get(((bits >> (ap * 2)) & 3) as usize).copied()
                })
                .collect::<Vec<usize>>()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enumerated_groups_rechecked_by_direct_sinr(seed in any::<u64>(), d in prop::sample::select(vec![10.0, 15.0, 20.0])) {
        let p = SimParams { inter_ap_distance: d, ..SimParams::default() };
        let dep = generate_deployment(&p, seed).unwrap();
        let groups = enumerate_compatible_groups(&dep, &p, None);
        let listed: std::collections::BTreeSet<Vec<usize>> = groups.iter().map(|g| g.stas()).collect();
        for g in &groups {
            let aps = g.aps();
            for (i, m) in g.members.iter().enumerate() {
                let others: Vec<usize> = aps.iter().copied().filter(|&a| a != m.ap).collect();
                let s = phy::sinr(m.sta, m.ap, &others, &dep, &p).unwrap();
                prop_assert!((s - g.per_member_sinr[i]).abs() < 1e-9);
                prop_assert!(s >= p.capture_threshold);
                prop_assert_eq!(phy::select_mcs(s, &p.mcs_table).unwrap().index, g.per_member_mcs[i].index);
            }
        }
        // Subsets absent from the list must fail the check for some member.
        for subset in random_subsets(&dep, seed) {
            let mut sorted = subset.clone();
            sorted.sort();
            let aps: Vec<usize> = sorted.iter().map(|&s| dep.association[s]).collect();
            let ok = sorted.iter().all(|&s| {
                let ap = dep.association[s];
                let others: Vec<usize> = aps.iter().copied().filter(|&a| a != ap).collect();
                let v = phy::sinr(s, ap, &others, &dep, &p).unwrap();
                v >= p.capture_threshold && phy::select_mcs(v, &p.mcs_table).is_some()
            });
            prop_assert_eq!(ok, listed.contains(&sorted), "{:?}", sorted);
        }
    }

    #[test]
    fn plans_are_exact_covers_and_max2_never_wins(seed in any::<u64>(), d in prop::sample::select(vec![10.0, 15.0, 20.0])) {
        let p = SimParams { inter_ap_distance: d, ..SimParams::default() };
        let dep = generate_deployment(&p, seed).unwrap();
        let unc = optimize_plan(&dep, &p, Policy::Unc).unwrap();
        let max2 = optimize_plan(&dep, &p, Policy::Max2).unwrap();
        for plan in [&unc, &max2] {
            let mut all: Vec<usize> = plan.groups.iter().flat_map(|g| g.stas()).collect();
            all.sort();
            prop_assert_eq!(all, (0..8).collect::<Vec<_>>());
            prop_assert!(plan.covers(&dep));
        }
        prop_assert!(max2.groups.iter().all(|g| g.len() <= 2));
        prop_assert!(max2.objective <= unc.objective + 1e-9);
    }
}

#[test]
fn sinr_of_isolated_link_is_snr() {
    let p = SimParams { num_bss: 1, stas_per_bss: 1, ..SimParams::default() };
    let dep = Deployment {
        ap_positions: vec![Point::new(0.0, 0.0)],
        sta_positions: vec![Point::new(3.0, 4.0)],
        association: vec![0],
        rng_seed: None,
    };
    let links = LinkMap::new(&dep, &p).unwrap();
    assert_eq!(links.sinr_db(0, 0, &[]), links.snr_db(0, 0));
}
