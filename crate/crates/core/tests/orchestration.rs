use edgeseg::geometry::{Matrix, Point};
use edgeseg::latency::LatencyMatrix;
use edgeseg::model::{CommTech, DeviceId, EdgeDevice, EndUser, MobilityClass, ServiceTypeId, TaskId, UserId};
use edgeseg::orchestration::{
    candidate_pool, place_task, release, CapacityLedger, PlacementMetric, PlacementOutcome, Policy,
};
use edgeseg::segmentation::{
    build_segmentation, ClusteringMode, KmeansConfig, Layering, RadialConfig, Segmentation, SegmentationParams,
};
use proptest::prelude::*;

fn devices(slots: &[u32]) -> Vec<EdgeDevice> {
    slots
        .iter()
        .enumerate()
        .map(|(i, &s)| EdgeDevice {
            id: DeviceId(i as u32),
            physical_pos: Point::new(i as f64 * 100.0, 0.0),
            vm_slots_total: s,
            vm_slots_free: s,
            vm_mips: 4000.0,
            comm_tech: CommTech::WiFi,
            map_pos: None,
        })
        .collect()
}

fn user() -> EndUser {
    EndUser {
        id: UserId(0),
        physical_pos: Point::ORIGIN,
        speed: 0.0,
        heading: 0.0,
        mobility_class: MobilityClass::LowMobility,
        comm_tech: CommTech::WiFi,
        service: ServiceTypeId::AR,
        map_pos: Some(Point::ORIGIN),
        subspace: None,
    }
}

fn matrix(row: &[f64]) -> LatencyMatrix {
    LatencyMatrix {
        device_device: Matrix::zeros(row.len(), row.len()),
        user_device: Matrix::from_rows(&[row.to_vec()]),
        measured_at: 0.0,
        ceiling_ms: 1000.0,
    }
}

fn located(i: u32, pos: Point) -> EndUser {
    EndUser {
        id: UserId(i),
        physical_pos: pos,
        map_pos: Some(pos),
        ..user()
    }
}

#[test]
fn candidate_pool_fallbacks() {
    // Two tight groups far apart, each with its own devices.
    let mut users: Vec<EndUser> = (0..8)
        .map(|i| located(i, Point::new(f64::from(i % 4), if i < 4 { 0.0 } else { 100.0 })))
        .collect();
    let ds = devices(&[2, 2, 2, 2]);
    let anchors = vec![
        (DeviceId(0), Point::new(1.0, 0.0)),
        (DeviceId(1), Point::new(2.0, 1.0)),
        (DeviceId(2), Point::new(1.0, 100.0)),
        (DeviceId(3), Point::new(2.0, 101.0)),
    ];
    let params = SegmentationParams {
        layering: Layering::Single,
        mode: ClusteringMode::Lax,
        speed_threshold_mps: 3.0,
        churn_threshold: 0.3,
        kmeans: KmeansConfig {
            target_cluster_size: 4,
            outlier_radius: 10.0,
            ..Default::default()
        },
        radial: RadialConfig::default(),
    };
    let seg = build_segmentation(&users, &anchors, &params, 3, 0.0, 0).unwrap();
    assert_eq!(seg.subspaces.len(), 2);
    let low = candidate_pool(&users[0], Some(&seg), &ds, Policy::SingleLayer);
    assert_eq!(low, vec![DeviceId(0), DeviceId(1)]);
    let all: Vec<DeviceId> = ds.iter().map(|d| d.id).collect();
    assert_eq!(candidate_pool(&users[0], Some(&seg), &ds, Policy::Monolithic), all);
    assert_eq!(candidate_pool(&users[0], None, &ds, Policy::DualLayer), all);

    // A nomad near the upper group borrows its devices.
    let nomad = located(20, Point::new(1.0, 80.0));
    assert!(seg.subspace_of(nomad.id).is_none());
    assert_eq!(candidate_pool(&nomad, Some(&seg), &ds, Policy::SingleLayer), vec![DeviceId(2), DeviceId(3)]);
    // Without a map position there is nothing to be near.
    users[0].map_pos = None;
    let lost = EndUser { id: UserId(21), ..users[0].clone() };
    assert_eq!(candidate_pool(&lost, Some(&seg), &ds, Policy::SingleLayer), all);
    let empty = Segmentation::empty(8, ClusteringMode::Lax, 0.0);
    assert_eq!(candidate_pool(&nomad, Some(&empty), &ds, Policy::DualLayer), all);
}

#[test]
fn unreachable_devices_are_never_chosen() {
    let mut ds = devices(&[4, 4]);
    let mut ledger = CapacityLedger::default();
    let lat = matrix(&[1000.0, 50.0]);
    let pool = [DeviceId(0), DeviceId(1)];
    let d = place_task(TaskId(1), &user(), &pool, &mut ds, &mut ledger, &lat, PlacementMetric::Geographic).unwrap();
    // Device 0 is physically closer but out of reach.
    assert_eq!(d.device, Some(DeviceId(1)));
    let only_far = [DeviceId(0)];
    let d = place_task(TaskId(2), &user(), &only_far, &mut ds, &mut ledger, &lat, PlacementMetric::Latency).unwrap();
    assert_eq!(d.outcome, PlacementOutcome::FailedCapacity);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_place_release_sequences_keep_the_ledger_consistent(
        slots in prop::collection::vec(0u32..4, 1..6),
        ops in prop::collection::vec((any::<bool>(), 0u64..20), 0..80),
        latencies in prop::collection::vec(1.0f64..100.0, 6),
    ) {
        let mut ds = devices(&slots);
        let lat = matrix(&latencies[..slots.len()]);
        let pool: Vec<DeviceId> = ds.iter().map(|d| d.id).collect();
        let mut ledger = CapacityLedger::default();
        let capacity: u32 = slots.iter().sum();
        for (place, t) in ops {
            let task = TaskId(t);
            if place {
                let held = ledger.holder(task).is_some();
                match place_task(task, &user(), &pool, &mut ds, &mut ledger, &lat, PlacementMetric::Latency) {
                    Ok(d) => {
                        prop_assert!(!held);
                        match d.outcome {
                            PlacementOutcome::PlacedEdge => {
                                let id = d.device.unwrap();
                                prop_assert_eq!(ledger.holder(task), Some(id));
                                // No free device has strictly lower latency.
                                for other in &ds {
                                    if other.vm_slots_free > 0 {
                                        prop_assert!(latencies[other.id.index()] >= latencies[id.index()]);
                                    }
                                }
                            }
                            PlacementOutcome::FailedCapacity => {
                                prop_assert!(ds.iter().all(|x| x.vm_slots_free == 0));
                                prop_assert_eq!(ledger.len() as u32, capacity);
                            }
                        }
                    }
                    Err(_) => prop_assert!(held),
                }
            } else {
                let held = ledger.holder(task);
                match release(task, &mut ds, &mut ledger) {
                    Ok(id) => prop_assert_eq!(Some(id), held),
                    Err(_) => prop_assert!(held.is_none()),
                }
            }
            prop_assert!(ledger.consistent_with(&ds));
        }
    }
}
