#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use proptest::prelude::*;

use helmx_core::telemetry::{BehaviourLabel, TraceRecord, VehicleState};

pub fn epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 7, 1, 14, 0, 0).unwrap()
}

pub fn label() -> impl Strategy<Value = BehaviourLabel> {
    prop::sample::select(BehaviourLabel::ALL.to_vec())
}

pub fn objective_id() -> impl Strategy<Value = Option<String>> {
    prop::option::of(prop::sample::select(vec![
        "Survey1".to_string(),
        "Transit1".to_string(),
        "Home".to_string(),
    ]))
}

pub fn obstacle_range() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(f64::INFINITY),
        4 => 0.0..100.0f64,
    ]
}

pub fn state() -> impl Strategy<Value = VehicleState> {
    (
        (
            0.0..5000.0f64,
            -1000.0..1000.0f64,
            -1000.0..1000.0f64,
            0.0..50.0f64,
        ),
        (0.0..3.0f64, 0.0..360.0f64, 0.0..=100.0f64),
        (
            objective_id(),
            any::<bool>(),
            obstacle_range(),
            any::<bool>(),
            0.0..1000.0f64,
        ),
    )
        .prop_map(
            |(
                (t, x, y, depth),
                (speed, heading, battery),
                (objective_id, complete, range, excl, age),
            )| {
                let heading = if heading >= 360.0 { 0.0 } else { heading };
                VehicleState {
                    t,
                    wall: epoch() + Duration::milliseconds((t * 1000.0).round() as i64),
                    x,
                    y,
                    depth,
                    speed,
                    heading,
                    battery,
                    objective_id,
                    objective_complete: complete,
                    obstacle_range: range,
                    in_exclusion_zone: excl,
                    gps_fix_age: age,
                }
            },
        )
}

pub fn record() -> impl Strategy<Value = TraceRecord> {
    (state(), prop::option::of(label()))
        .prop_map(|(state, behaviour)| TraceRecord { state, behaviour })
}

/// A plain state at time `t` for hand-built streams.
pub fn tick(t: f64) -> VehicleState {
    VehicleState {
        t,
        wall: epoch() + Duration::milliseconds((t * 1000.0).round() as i64),
        x: 0.0,
        y: 0.0,
        depth: 5.0,
        speed: 1.5,
        heading: 90.0,
        battery: 80.0,
        objective_id: Some("Survey1".into()),
        objective_complete: false,
        obstacle_range: f64::INFINITY,
        in_exclusion_zone: false,
        gps_fix_age: 10.0,
    }
}
