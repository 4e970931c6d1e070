use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::model::{Assignment, ChannelPlan, NetworkScenario, Point, SensitivityTable, SpreadingFactor, LIGHT_SPEED};
use crate::units::dbm_to_mw;

fn sf(v: u8) -> SpreadingFactor {
    SpreadingFactor::new(v).unwrap()
}

fn scenario(gateways: &[(f64, f64)], devices: &[(f64, f64)]) -> NetworkScenario {
    NetworkScenario::from_positions(
        1,
        gateways.iter().map(|&(x, y)| Point::new(x, y)).collect(),
        devices.iter().map(|&(x, y)| Point::new(x, y)).collect(),
    )
    .unwrap()
}

/// Distance at which `p · a(d)` equals the sensitivity of `sf`.
fn unit_margin_distance(sf: SpreadingFactor, tp_dbm: f64) -> f64 {
    let ratio = dbm_to_mw(tp_dbm).unwrap() / SensitivityTable::default().sensitivity_mw(sf);
    LIGHT_SPEED / (4.0 * std::f64::consts::PI * 868e6) * ratio.powf(1.0 / 2.7)
}

#[test]
fn lone_device_is_limited_by_sensitivity_only() {
    let s = scenario(&[(0.0, 0.0)], &[(3000.0, 0.0)]);
    let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let a = Assignment::uniform(1, 0, sf(9), 14.0);
    let rx = dbm_to_mw(14.0).unwrap() * path_loss(3000.0, 868e6, 2.7).unwrap();
    let expected = (-dbm_to_mw(-129.0).unwrap() / rx).exp();
    assert_relative_eq!(model.pdr_single_gw(&a, 0, 0).unwrap(), expected, max_relative = 1e-12);
}

#[test]
fn unit_margin_gives_inverse_e() {
    let d = unit_margin_distance(sf(12), 14.0);
    assert!(d < 12_000.0);
    let s = scenario(&[(0.0, 0.0)], &[(d, 0.0)]);
    let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let a = Assignment::uniform(1, 0, sf(12), 14.0);
    assert_relative_eq!(model.pdr_single_gw(&a, 0, 0).unwrap(), (-1.0f64).exp(), max_relative = 1e-9);
}

#[test]
fn ee_reference_value() {
    let s = scenario(&[(0.0, 0.0)], &[(500.0, 0.0)]);
    let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let mut tx = model.transmitter(0, sf(7), 14.0, 125e3);
    tx.power_w = 0.11;
    let ee = model.ee_from_pdr(&tx, 0.8);
    assert_relative_eq!(ee, 128.0 / (0.11 * 0.056576), max_relative = 1e-12);
    assert!((ee - 20_570.0).abs() < 5.0, "ee = {ee}");
    assert_relative_eq!(model.ee_from_pdr(&tx, 0.4), ee / 2.0, max_relative = 1e-12);
    assert_eq!(model.ee_from_pdr(&tx, 0.0), 0.0);
    assert_relative_eq!(model.ee_from_pdr(&tx, 1.0), 160.0 / (0.11 * tx.toa_s), max_relative = 1e-12);
}

#[test]
fn sir_example_entries() {
    let s = scenario(&[(0.0, 0.0)], &[]);
    let plan = ChannelPlan::tight(1, 125e3, 0).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    assert!((model.sir().threshold(sf(7), sf(7)) - 1.2589).abs() < 1e-4);
    assert!((model.sir().threshold(sf(12), sf(7)) - 0.0031623).abs() < 1e-7);
    assert!((model.sir().threshold(sf(7), sf(12)) - 0.12589).abs() < 1e-5);
}

#[test]
fn empty_network_has_zero_ee() {
    let s = scenario(&[(0.0, 0.0)], &[]);
    let plan = ChannelPlan::tight(2, 125e3, 0).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let eval = model.evaluate(&Assignment::uniform(0, 0, sf(7), 14.0)).unwrap();
    assert_eq!(eval.ee.system, 0.0);
    assert_eq!(eval.ee.per_channel, vec![0.0, 0.0]);
}

#[test]
fn two_device_factor_by_hand() {
    let s = scenario(&[(0.0, 0.0)], &[(1000.0, 0.0), (0.0, 1500.0)]);
    let plan = ChannelPlan::tight(1, 125e3, 2).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let a = Assignment::new(vec![0, 0], vec![sf(7), sf(8)], vec![14.0, 10.0]).unwrap();

    let toa7 = time_on_air(sf(7), 125e3, 5, 20, false, 8);
    let toa8 = time_on_air(sf(8), 125e3, 5, 20, false, 8);
    let window = toa7 + toa8 - 3.0 * 1.024e-3;
    let h = 1.0 - (-0.001 * window * (1.0 - 0.099 * toa8)).exp();
    let s0 = dbm_to_mw(14.0).unwrap() * path_loss(1000.0, 868e6, 2.7).unwrap();
    let s1 = dbm_to_mw(10.0).unwrap() * path_loss(1500.0, 868e6, 2.7).unwrap();
    // row SF7, column SF8
    let eta = 10f64.powf(-8.0 / 10.0);
    let sens = (-dbm_to_mw(-123.0).unwrap() / s0).exp();

    let expected = sens * (h / (1.0 + eta * s1 / s0) + 1.0 - h);
    assert_relative_eq!(model.pdr_single_gw(&a, 0, 0).unwrap(), expected, max_relative = 1e-12);

    let mean = model.clone().with_fading(FadingMode::Mean);
    let expected_mean = sens * (h * (-eta * s1 / s0).exp() + 1.0 - h);
    assert_relative_eq!(mean.pdr_single_gw(&a, 0, 0).unwrap(), expected_mean, max_relative = 1e-12);
}

#[test]
fn report_invariants_and_duality() {
    let s = crate::model::generate_scenario(3, 3, 40, &crate::model::PlacementRules::default()).unwrap();
    let plan = ChannelPlan::tight(3, 125e3, 40).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let a = crate::model::distance_based_assignment(&s, &plan).unwrap();
    let eval = model.evaluate(&a).unwrap();

    let mut per_channel_sum = 0.0;
    for (i, &d) in eval.pdr.per_device.iter().enumerate() {
        let best = (0..3).map(|k| eval.pdr.at(i, k)).fold(0.0, f64::max);
        assert!(d >= best && d <= 1.0);
        assert_relative_eq!(d, model.pdr_multi_gw(&a, i).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(eval.ee.per_device[i], model.energy_efficiency(&a, i).unwrap(), max_relative = 1e-12);
        assert_relative_eq!(eval.ee.per_device[i] * eval.ee.success_energy_j[i], 160.0, max_relative = 1e-12);
    }
    for c in &eval.ee.per_channel {
        per_channel_sum += c;
    }
    assert_relative_eq!(per_channel_sum, eval.ee.system, max_relative = 1e-12);
}

#[test]
fn system_ee_is_permutation_invariant() {
    let pts = [(1000.0, 200.0), (-3000.0, 2500.0), (500.0, -7000.0), (9000.0, 1000.0)];
    let s = scenario(&[(0.0, 0.0)], &pts);
    let mut rev = pts;
    rev.reverse();
    let r = scenario(&[(0.0, 0.0)], &rev);
    let plan = ChannelPlan::tight(2, 125e3, 4).unwrap();
    let a = Assignment::new(vec![0, 1, 0, 1], vec![sf(7), sf(9), sf(10), sf(12)], vec![2.0, 8.0, 14.0, 20.0]).unwrap();
    let b = Assignment::new(vec![1, 0, 1, 0], vec![sf(12), sf(10), sf(9), sf(7)], vec![20.0, 14.0, 8.0, 2.0]).unwrap();
    let ea = AnalyticalModel::new(&s, &plan).unwrap().evaluate(&a).unwrap();
    let eb = AnalyticalModel::new(&r, &plan).unwrap().evaluate(&b).unwrap();
    assert_relative_eq!(ea.ee.system, eb.ee.system, max_relative = 1e-12);
}

#[test]
fn single_device_system_equals_device_ee() {
    let s = scenario(&[(0.0, 0.0)], &[(4000.0, 0.0)]);
    let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    let a = Assignment::uniform(1, 0, sf(9), 14.0);
    assert_eq!(model.system_ee(&a).unwrap().ee.system, model.energy_efficiency(&a, 0).unwrap());
}

#[test]
fn malformed_assignments_are_rejected() {
    let s = scenario(&[(0.0, 0.0)], &[(4000.0, 0.0)]);
    let plan = ChannelPlan::tight(1, 125e3, 1).unwrap();
    let model = AnalyticalModel::new(&s, &plan).unwrap();
    assert!(model.evaluate(&Assignment::uniform(2, 0, sf(9), 14.0)).is_err());
    assert!(model.evaluate(&Assignment::uniform(1, 0, sf(9), 25.0)).is_err());
    assert!(model.evaluate(&Assignment::uniform(1, 3, sf(9), 14.0)).is_err());
}

#[test]
fn fading_mode_parses() {
    assert_eq!("expected".parse::<FadingMode>().unwrap(), FadingMode::Expected);
    assert_eq!("mean-fading".parse::<FadingMode>().unwrap(), FadingMode::Mean);
    assert!("bogus".parse::<FadingMode>().is_err());
}

type Layout = (Vec<(f64, f64)>, Vec<(u8, f64)>);

fn arb_layout() -> impl Strategy<Value = Layout> {
    (1usize..8).prop_flat_map(|n| {
        (
            prop::collection::vec((-8000.0..8000.0f64, -8000.0..8000.0f64), n),
            prop::collection::vec((7u8..=12, 2.0..20.0f64), n),
        )
    })
}

fn build(points: &[(f64, f64)], params: &[(u8, f64)], gateways: &[(f64, f64)]) -> (AnalyticalModel, Assignment) {
    let points: Vec<(f64, f64)> =
        points.iter().map(|&(x, y)| if x.hypot(y) < 1.0 { (x + 10.0, y) } else { (x, y) }).collect();
    let s = scenario(gateways, &points);
    let plan = ChannelPlan::tight(1, 125e3, points.len()).unwrap();
    let a = Assignment::new(
        vec![0; points.len()],
        params.iter().map(|p| sf(p.0)).collect(),
        params.iter().map(|p| p.1).collect(),
    )
    .unwrap();
    (AnalyticalModel::new(&s, &plan).unwrap(), a)
}

proptest! {
    #[test]
    fn probabilities_stay_in_unit_interval((pts, params) in arb_layout()) {
        let (model, a) = build(&pts, &params, &[(0.0, 0.0), (12_000.0, 0.0)]);
        let eval = model.evaluate(&a).unwrap();
        for &p in eval.pdr.per_gateway.iter().chain(&eval.pdr.per_device) {
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn adding_an_interferer_never_helps((pts, params) in arb_layout(), extra in (-8000.0..8000.0f64, -8000.0..8000.0f64, 7u8..=12, 2.0..20.0f64)) {
        let gws = [(0.0, 0.0)];
        let (model, a) = build(&pts, &params, &gws);
        let before = model.evaluate(&a).unwrap();
        let mut pts2 = pts.clone();
        let mut params2 = params.clone();
        pts2.push((extra.0, extra.1));
        params2.push((extra.2, extra.3));
        let (model2, a2) = build(&pts2, &params2, &gws);
        let after = model2.evaluate(&a2).unwrap();
        for i in 0..pts.len() {
            prop_assert!(after.pdr.at(i, 0) <= before.pdr.at(i, 0));
        }
    }

    #[test]
    fn adding_a_gateway_never_hurts((pts, params) in arb_layout()) {
        let (one, a) = build(&pts, &params, &[(0.0, 0.0)]);
        let (two, _) = build(&pts, &params, &[(0.0, 0.0), (12_000.0, 3000.0)]);
        let d1 = one.evaluate(&a).unwrap().pdr.per_device;
        let d2 = two.evaluate(&a).unwrap().pdr.per_device;
        for (x, y) in d1.iter().zip(&d2) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn more_power_never_hurts((pts, params) in arb_layout(), bump in 0.0..18.0f64) {
        let (model, a) = build(&pts, &params, &[(0.0, 0.0)]);
        let mut b = a.clone();
        b.tp_dbm[0] = (b.tp_dbm[0] + bump).min(20.0);
        let before = model.pdr_single_gw(&a, 0, 0).unwrap();
        let after = model.pdr_single_gw(&b, 0, 0).unwrap();
        prop_assert!(after >= before);
    }
}
