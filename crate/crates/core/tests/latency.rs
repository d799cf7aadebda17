use edgeseg::geometry::Point;
use edgeseg::latency::{build_latency_matrix, pairwise_latency, LatencyError, LatencyModelParams, MIN_LATENCY_MS};
use edgeseg::model::{CommTech, DeviceId, EdgeDevice, EndUser, MobilityClass, ServiceTypeId, UserId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TECHS: [CommTech; 3] = [CommTech::WiFi, CommTech::Cellular5G, CommTech::Bluetooth];

fn devices(rng: &mut ChaCha8Rng, n: usize) -> Vec<EdgeDevice> {
    (0..n)
        .map(|i| EdgeDevice {
            id: DeviceId(i as u32),
            physical_pos: Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)),
            vm_slots_total: 4,
            vm_slots_free: 4,
            vm_mips: 4000.0,
            comm_tech: TECHS[rng.random_range(0..2)],
            map_pos: None,
        })
        .collect()
}

fn users(rng: &mut ChaCha8Rng, n: usize) -> Vec<EndUser> {
    (0..n)
        .map(|i| EndUser {
            id: UserId(i as u32),
            physical_pos: Point::new(rng.random_range(0.0..1000.0), rng.random_range(0.0..1000.0)),
            speed: 1.0,
            heading: 0.0,
            mobility_class: MobilityClass::LowMobility,
            comm_tech: TECHS[rng.random_range(0..3)],
            service: ServiceTypeId::AR,
            map_pos: None,
            subspace: None,
        })
        .collect()
}

#[test]
fn noiseless_latency_is_base_plus_distance() {
    let p = LatencyModelParams {
        jitter_sd_ms: 0.0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Point::new(0.0, 0.0);
    let b = Point::new(300.0, 400.0);
    let v = pairwise_latency(a, CommTech::WiFi, b, CommTech::Cellular5G, &p, &mut rng);
    assert!((v - (12.0 + 0.05 * 500.0)).abs() < 1e-12);
}

#[test]
fn bluetooth_beyond_range_hits_the_ceiling() {
    let p = LatencyModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let far = Point::new(p.bluetooth_range_m + 1.0, 0.0);
    let v = pairwise_latency(Point::ORIGIN, CommTech::Bluetooth, far, CommTech::WiFi, &p, &mut rng);
    assert_eq!(v, p.ceiling_ms);
    let near = Point::new(p.bluetooth_range_m - 1.0, 0.0);
    assert!(pairwise_latency(Point::ORIGIN, CommTech::Bluetooth, near, CommTech::WiFi, &p, &mut rng) < p.ceiling_ms);
}

#[test]
fn too_few_devices_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let d = devices(&mut rng, 2);
    assert!(matches!(
        build_latency_matrix(&[], &d, &LatencyModelParams::default(), 0, 0.0),
        Err(LatencyError::TooFewAnchors(2))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matrix_shape_symmetry_and_bounds(seed in any::<u64>(), nd in 3usize..15, nu in 0usize..30, t in 0.0f64..1000.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = devices(&mut rng, nd);
        let u = users(&mut rng, nu);
        let p = LatencyModelParams::default();
        let m = build_latency_matrix(&u, &d, &p, seed, t).unwrap();
        prop_assert_eq!(m.n_devices(), nd);
        prop_assert_eq!(m.n_users(), nu);
        prop_assert!(m.device_device.is_symmetric());
        for i in 0..nd {
            prop_assert_eq!(m.device_device.get(i, i), 0.0);
            for j in 0..nd {
                let v = m.device_device.get(i, j);
                prop_assert!(i == j || (MIN_LATENCY_MS..=p.ceiling_ms).contains(&v));
            }
        }
        for i in 0..nu {
            for &v in m.user_device.row(i) {
                prop_assert!((MIN_LATENCY_MS..=p.ceiling_ms).contains(&v));
            }
        }
    }

    #[test]
    fn rows_do_not_depend_on_other_users(seed in any::<u64>(), nu in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = devices(&mut rng, 6);
        let u = users(&mut rng, nu);
        let p = LatencyModelParams::default();
        let full = build_latency_matrix(&u, &d, &p, seed, 5.0).unwrap();
        let fewer = build_latency_matrix(&u[..nu - 1], &d, &p, seed, 5.0).unwrap();
        for i in 0..nu - 1 {
            prop_assert_eq!(full.user_device.row(i), fewer.user_device.row(i));
        }
        prop_assert_eq!(&full.device_device, &fewer.device_device);
        // A new measurement time draws fresh jitter.
        let later = build_latency_matrix(&u, &d, &p, seed, 6.0).unwrap();
        prop_assert_ne!(&full.device_device, &later.device_device);
    }
}
