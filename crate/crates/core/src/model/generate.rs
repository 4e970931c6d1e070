use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnergyProfile, Geometry, NetworkScenario, Point, RadioConfig, TrafficConfig};
use crate::error::{Error, Result};

/// Consecutive failed draws for one gateway before the partial layout is
/// discarded and placement restarts.
const RESTART_AFTER: usize = 200;

/// Devices closer than this to a gateway are redrawn; path loss is singular at 0.
const MIN_DEVICE_DISTANCE_M: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementRules {
    pub area_m: f64,
    pub min_gateway_spacing_m: f64,
    pub cell_radius_m: f64,
    /// Total candidate draws allowed for gateway placement.
    pub retry_budget: usize,
}

impl Default for PlacementRules {
    fn default() -> Self {
        Self { area_m: 20_000.0, min_gateway_spacing_m: 12_000.0, cell_radius_m: 12_000.0, retry_budget: 10_000 }
    }
}

/// Random deployment: gateways uniform in the square area with pairwise
/// spacing enforced by rejection, devices uniform over the union of the
/// gateway cells. Pure function of its arguments.
pub fn generate_scenario(
    seed: u64,
    gateway_count: usize,
    device_count: usize,
    rules: &PlacementRules,
) -> Result<NetworkScenario> {
    if gateway_count == 0 {
        return Err(Error::InvalidParameter("gateway count must be at least 1".into()));
    }
    if !(rules.area_m > 0.0 && rules.cell_radius_m > 0.0 && rules.min_gateway_spacing_m >= 0.0) {
        return Err(Error::InvalidParameter("placement dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gateways = place_gateways(&mut rng, gateway_count, rules)?;
    let devices = place_devices(&mut rng, &gateways, device_count, rules.cell_radius_m);

    let scenario = NetworkScenario {
        seed,
        geometry: Geometry {
            area_m: rules.area_m,
            min_gateway_spacing_m: rules.min_gateway_spacing_m,
            cell_radius_m: rules.cell_radius_m,
            gateways,
            devices,
        },
        radio: RadioConfig::default(),
        traffic: TrafficConfig::default(),
        energy: EnergyProfile::default(),
    };
    scenario.validate()?;
    Ok(scenario)
}

fn place_gateways(rng: &mut ChaCha8Rng, count: usize, rules: &PlacementRules) -> Result<Vec<Point>> {
    let mut placed: Vec<Point> = Vec::with_capacity(count);
    let mut draws = 0;
    let mut misses = 0;
    while placed.len() < count {
        if draws >= rules.retry_budget {
            return Err(Error::PlacementInfeasible {
                gateways: count,
                spacing_m: rules.min_gateway_spacing_m,
                attempts: draws,
            });
        }
        draws += 1;
        let candidate = Point::new(rng.random::<f64>() * rules.area_m, rng.random::<f64>() * rules.area_m);
        if placed.iter().all(|p| p.distance(&candidate) >= rules.min_gateway_spacing_m) {
            placed.push(candidate);
            misses = 0;
        } else {
            misses += 1;
            if misses >= RESTART_AFTER {
                placed.clear();
                misses = 0;
            }
        }
    }
    Ok(placed)
}

fn place_devices(rng: &mut ChaCha8Rng, gateways: &[Point], count: usize, radius: f64) -> Vec<Point> {
    let min_x = gateways.iter().map(|g| g.x).fold(f64::INFINITY, f64::min) - radius;
    let max_x = gateways.iter().map(|g| g.x).fold(f64::NEG_INFINITY, f64::max) + radius;
    let min_y = gateways.iter().map(|g| g.y).fold(f64::INFINITY, f64::min) - radius;
    let max_y = gateways.iter().map(|g| g.y).fold(f64::NEG_INFINITY, f64::max) + radius;

    let mut devices = Vec::with_capacity(count);
    while devices.len() < count {
        let p =
            Point::new(min_x + rng.random::<f64>() * (max_x - min_x), min_y + rng.random::<f64>() * (max_y - min_y));
        let nearest = gateways.iter().map(|g| g.distance(&p)).fold(f64::INFINITY, f64::min);
        if nearest <= radius && nearest >= MIN_DEVICE_DISTANCE_M {
            devices.push(p);
        }
    }
    devices
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_gateway_no_devices() {
        let s = generate_scenario(1, 1, 0, &PlacementRules::default()).unwrap();
        assert_eq!(s.gateway_count(), 1);
        assert_eq!(s.device_count(), 0);
        assert!(s.validate().is_ok());
    }

    #[test]
    fn deterministic_and_contained() {
        let rules = PlacementRules::default();
        let a = generate_scenario(42, 3, 160, &rules).unwrap();
        let b = generate_scenario(42, 3, 160, &rules).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.device_count(), 160);
        for i in 0..a.device_count() {
            assert!(a.nearest_gateway_distance(i) <= 12_000.0);
        }
        let c = generate_scenario(43, 3, 160, &rules).unwrap();
        assert_ne!(a.geometry.devices, c.geometry.devices);
    }

    #[test]
    fn gateway_spacing_holds_across_seeds() {
        let rules = PlacementRules::default();
        for seed in 0..100 {
            let s = generate_scenario(seed, 2, 0, &rules).unwrap();
            let g = &s.geometry.gateways;
            assert!(g[0].distance(&g[1]) >= 12_000.0, "seed {seed}");
        }
    }

    #[test]
    fn four_gateways_fit_the_default_area() {
        let rules = PlacementRules::default();
        for seed in 0..20 {
            let s = generate_scenario(seed, 4, 10, &rules).unwrap();
            let g = &s.geometry.gateways;
            for a in 0..4 {
                for b in (a + 1)..4 {
                    assert!(g[a].distance(&g[b]) >= 12_000.0);
                }
            }
        }
    }

    #[test]
    fn impossible_spacing_is_reported() {
        let rules = PlacementRules { min_gateway_spacing_m: 30_000.0, retry_budget: 500, ..PlacementRules::default() };
        assert!(matches!(generate_scenario(0, 2, 0, &rules), Err(Error::PlacementInfeasible { .. })));
        assert!(generate_scenario(0, 0, 5, &PlacementRules::default()).is_err());
    }
}
