mod common;

use common::*;
use proptest::prelude::*;
use vecrep_core::traffic::*;

fn road_vehicle(id: u64, role: Role, pos_m: f64, direction: i8) -> VehicleSnapshot {
    VehicleSnapshot {
        time_s: 0.0,
        vehicle_id: id,
        role,
        position: Position::Road { pos_m, direction },
        speed_mps: 10.0,
    }
}

#[test]
fn ppp_counts_have_poisson_moments_and_are_independent() {
    let road = RoadSpec {
        length_km: 10.0,
        gamma_t: 5.0,
        gamma_s: 20.0,
    };
    let draws = 1000;
    let counts: Vec<(f64, f64)> = (0..draws)
        .map(|seed| {
            let s = generate_ppp_snapshot(&road, seed).unwrap();
            let t = s.iter().filter(|v| v.role == Role::Tav).count() as f64;
            (t, s.len() as f64 - t)
        })
        .collect();
    let n = draws as f64;
    let (mt, ms) = (
        counts.iter().map(|c| c.0).sum::<f64>() / n,
        counts.iter().map(|c| c.1).sum::<f64>() / n,
    );
    // 3σ of the sample mean of Poisson(50) and Poisson(200).
    assert!((mt - 50.0).abs() < 3.0 * (50.0 / n).sqrt(), "{mt}");
    assert!((ms - 200.0).abs() < 3.0 * (200.0 / n).sqrt(), "{ms}");
    let cov = counts.iter().map(|c| (c.0 - mt) * (c.1 - ms)).sum::<f64>() / (n - 1.0);
    let corr = cov / (50f64 * 200.0).sqrt();
    // Sample correlation of independent counts has sd 1/√n.
    assert!(corr.abs() < 3.0 / n.sqrt(), "{corr}");
}

#[test]
fn ppp_positions_pass_kolmogorov_smirnov() {
    let road = RoadSpec {
        length_km: 2.0,
        gamma_t: 0.5,
        gamma_s: 0.0,
    };
    let mut xs = Vec::new();
    let mut seed = 0;
    while xs.len() < 1000 {
        for v in generate_ppp_snapshot(&road, seed).unwrap() {
            if let Position::Road { pos_m, .. } = v.position {
                xs.push(pos_m / 2000.0);
            }
        }
        seed += 1;
    }
    xs.truncate(1000);
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max);
    // Asymptotic 1% critical value 1.628/√n.
    assert!(d < 1.628 / n.sqrt(), "D = {d}");
}

#[test]
fn uplink_rate_reference_values() {
    let p = ChannelParams::default();
    let expected = 1e7 * (1.0f64 + 5e8).log2();
    assert!((p.rate_at(100.0) - expected).abs() / expected < 1e-12);
    assert!((expected - 2.89e8).abs() / 2.89e8 < 0.001);
    let (rate, delay) = multicast_rate_and_upload_delay(&[2.89e8, 1e8], 1e6).unwrap();
    assert_eq!(rate, 1e8);
    assert!((delay - 0.01).abs() < 1e-15);
    let loud = ChannelParams {
        interference_w: 1e6,
        ..p
    };
    assert!(loud.rate_at(100.0) < 1.0);
}

#[test]
fn equal_speeds_keep_spacing() {
    let init = [
        road_vehicle(0, Role::Tav, 10.0, 1),
        road_vehicle(1, Role::Sev, 60.0, 1),
    ];
    let ring = Topology::Ring { length_m: 500.0 };
    let trace = generate_synthetic_trace(
        &init,
        40.0,
        1.0,
        SpeedLaw::Constant { speed_mps: 17.0 },
        ring,
        0,
    )
    .unwrap();
    for f in &trace.frames {
        assert!((distance(&f.vehicles[0], &f.vehicles[1], ring) - 50.0).abs() < 1e-9);
    }
}

fn road_vehicles() -> impl Strategy<Value = Vec<VehicleSnapshot>> {
    prop::collection::vec((0.0f64..1000.0, prop::bool::ANY, prop::bool::ANY), 1..30).prop_map(
        |vs| {
            vs.into_iter()
                .enumerate()
                .map(|(i, (pos, tav, fwd))| {
                    road_vehicle(
                        i as u64,
                        if tav { Role::Tav } else { Role::Sev },
                        pos,
                        if fwd { 1 } else { -1 },
                    )
                })
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn candidate_sets_are_translation_invariant(vs in road_vehicles(), shift in 0.0f64..5000.0, range in 10.0f64..400.0) {
        let ring = Topology::Ring { length_m: 1000.0 };
        let moved: Vec<VehicleSnapshot> = vs
            .iter()
            .map(|v| match v.position {
                Position::Road { pos_m, direction } => {
                    VehicleSnapshot { position: Position::Road { pos_m: (pos_m + shift) % 1000.0, direction }, ..*v }
                }
                _ => unreachable!(),
            })
            .collect();
        for (a, b) in vs.iter().zip(&moved) {
            if a.role != Role::Tav {
                continue;
            }
            // Shifting can move a boundary vehicle by an ulp; stay clear of the edge.
            let near_edge = vs.iter().any(|o| (distance(a, o, ring) - range).abs() < 1e-6);
            prop_assume!(!near_edge);
            prop_assert_eq!(candidate_set(a, &vs, range, ring), candidate_set(b, &moved, range, ring));
        }
    }

    #[test]
    fn rate_falls_with_distance_and_rises_with_power(d in 1.0f64..1e4, step in 1e-3f64..100.0, p in 1e-3f64..10.0, dp in 1e-3f64..10.0) {
        let c = ChannelParams { tx_power_w: p, ..ChannelParams::default() };
        prop_assert!(c.rate_at(d + step) < c.rate_at(d));
        let louder = ChannelParams { tx_power_w: p + dp, ..c };
        prop_assert!(louder.rate_at(d) > c.rate_at(d));
    }

    #[test]
    fn multicast_rate_is_min_and_ignores_duplicates(rates in prop::collection::vec(1.0f64..1e9, 1..10)) {
        let (r, _) = multicast_rate_and_upload_delay(&rates, 1e6).unwrap();
        prop_assert_eq!(r, rates.iter().copied().fold(f64::INFINITY, f64::min));
        let doubled: Vec<f64> = rates.iter().chain(&rates).copied().collect();
        prop_assert_eq!(multicast_rate_and_upload_delay(&doubled, 1e6).unwrap().0, r);
    }

    #[test]
    fn trace_files_round_trip(seed in any::<u64>(), gt in 0.0f64..20.0, gs in 0.0f64..40.0, secs in 0.0f64..20.0, step in 0.25f64..3.0) {
        let road = RoadSpec { length_km: 1.0, gamma_t: gt, gamma_s: gs };
        let snap = generate_ppp_snapshot(&road, seed).unwrap();
        prop_assume!(!snap.is_empty());
        let ring = Topology::Ring { length_m: 1000.0 };
        let trace = generate_synthetic_trace(&snap, secs, step, SpeedLaw::Uniform { max_mps: 20.0 }, ring, seed).unwrap();
        let mut buf = Vec::new();
        write_trace(&trace, &mut buf).unwrap();
        prop_assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
    }
}
