mod support;

use micromano::sdn::{run_slice_load, ForwardMode, SliceLoad, SliceProfile};
use micromano::sim::secs;
use proptest::prelude::*;

fn line_with_slices(guarantees: &[f64]) -> micromano::sdn::SlicedLink {
    let mut f = support::line3(ForwardMode::MacLearning);
    let path = ["s1".to_string(), "s2".to_string()];
    for (i, g) in guarantees.iter().enumerate() {
        f.apply_slice(
            SliceProfile {
                slice_id: format!("s{i}"),
                guaranteed_mbps: *g,
                priority: 0,
                slice_tag: i as u32 + 1,
            },
            &path,
            0,
        )
        .unwrap();
    }
    f.sliced_link("l12", "s1").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn learning_and_static_tables_deliver_alike(
        order in Just((0..support::all_frames(&support::line3(ForwardMode::MacLearning)).len()).collect::<Vec<_>>()).prop_shuffle()
    ) {
        let mut learning = support::line3(ForwardMode::MacLearning);
        let mut fixed = support::line3(ForwardMode::StaticFlows);
        support::install_complete_tables(&mut fixed);
        let frames = support::all_frames(&learning);
        // two passes: cold tables, then warm
        for pass in 0..2u64 {
            for &i in &order {
                let (from, frame) = &frames[i];
                let a = learning.send_frame(from, *frame, pass).unwrap();
                let b = fixed.send_frame(from, *frame, pass).unwrap();
                prop_assert_eq!(&a.accepted, &b.accepted, "{} -> {:?} pass {}", from, frame.dst, pass);
            }
        }
    }

    #[test]
    fn sliced_link_never_exceeds_line_rate(
        guarantees in prop::collection::vec(1.0f64..30.0, 1..4),
        rates in prop::collection::vec(5.0f64..400.0, 4),
        with_best_effort in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let link = line_with_slices(&guarantees);
        let mut loads: Vec<SliceLoad> = guarantees
            .iter()
            .enumerate()
            .map(|(i, _)| SliceLoad { slice_tag: Some(i as u32 + 1), rate_mbps: rates[i], packet_bytes: 1500 })
            .collect();
        if with_best_effort {
            loads.push(SliceLoad { slice_tag: None, rate_mbps: rates[3] * 3.0, packet_bytes: 1500 });
        }
        let r = run_slice_load(link, &loads, secs(1), seed);
        prop_assert!(r.total_mbps <= 1000.0 * 1.001, "total {}", r.total_mbps);
        for (i, l) in loads.iter().enumerate() {
            prop_assert!(r.goodput_mbps[i] <= l.rate_mbps * 1.02 + 0.1, "load {} got {} of {}", i, r.goodput_mbps[i], l.rate_mbps);
        }
        // a slice offering at least its guarantee gets it
        for (i, g) in guarantees.iter().enumerate() {
            if rates[i] >= *g * 1.05 {
                prop_assert!(r.goodput_mbps[i] >= g * 0.95, "slice {} got {} under guarantee {}", i, r.goodput_mbps[i], g);
            }
        }
    }
}
