//! Reference threat models used by the test suites and example configs.

use crate::dist::DistributionSpec;
use crate::sim::ThresholdEvent;
use crate::threat::{ScenarioTag, ThreatModel};

/// Car-following model with hard braking made common enough that default
/// IDM crashes in roughly 1% of episodes.
pub fn inflated_car_following() -> ThreatModel {
    ThreatModel::from_pairs(
        ScenarioTag::CarFollowing,
        [
            ("v0", DistributionSpec::truncated_normal(25.0, 5.0, 5.0, 40.0).expect("valid")),
            ("decel", DistributionSpec::truncated_normal(4.0, 1.5, 0.5, 9.0).expect("valid")),
            ("duration", DistributionSpec::truncated_normal(3.0, 1.0, 0.0, 10.0).expect("valid")),
        ],
    )
    .expect("valid model")
}

/// Cut-in at 1 m with 10 m/s closing: no policy can avoid contact.
pub fn always_crash_cut_in() -> ThreatModel {
    ThreatModel::from_pairs(
        ScenarioTag::CutIn,
        [
            ("range", DistributionSpec::point(1.0)),
            ("closing_speed", DistributionSpec::point(10.0)),
            ("lead_speed", DistributionSpec::point(15.0)),
        ],
    )
    .expect("valid model")
}

/// 4×4×4 discrete car-following grid.
pub fn enumerable_car_following() -> ThreatModel {
    let d = |values: Vec<f64>, probs: Vec<f64>| DistributionSpec::discrete(values, probs).expect("valid");
    ThreatModel::from_pairs(
        ScenarioTag::CarFollowing,
        [
            ("v0", d(vec![15.0, 20.0, 25.0, 30.0], vec![0.2, 0.3, 0.3, 0.2])),
            ("decel", d(vec![2.0, 4.0, 6.0, 8.0], vec![0.4, 0.3, 0.2, 0.1])),
            ("duration", d(vec![1.0, 2.0, 3.5, 5.0], vec![0.3, 0.3, 0.25, 0.15])),
        ],
    )
    .expect("valid model")
}

/// X ~ Exponential(1) with the event {X > threshold}.
pub fn exponential_threshold(threshold: f64) -> (ThreatModel, ThresholdEvent) {
    let model = ThreatModel::from_pairs(ScenarioTag::Synthetic, [("x", DistributionSpec::exponential(1.0).expect("valid"))])
        .expect("valid model");
    (model, ThresholdEvent { index: 0, threshold })
}
