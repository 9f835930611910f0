#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <random>

#include "atnmpc/nmpc.hpp"
#include "atnmpc/plant.hpp"

namespace atnmpc::testing {

inline plant::PlantParams energy_plant() {
  plant::PlantParams p;
  p.alpha = {2.0e-4, 6.9e-8, 2.0e-13, 1.0e-6};
  p.gamma = {-1.0e-6, -6.3e-8, -4.7e-13};
  p.fuel_price = 1.35;
  p.electricity_price = 0.53;
  return p;
}

inline nmpc::EnergyModel energy_model(const plant::PlantParams& p) {
  nmpc::EnergyModel e;
  e.fuel = p.alpha;
  e.soc = p.gamma;
  e.fuel_price = p.fuel_price;
  e.electricity_price = p.electricity_price;
  e.v_floor = p.v_floor;
  e.r_w = p.r_w;
  e.power_ratio = p.power_ratio;
  return e;
}

/// Horizon problem with unconstraining sets.
inline nmpc::OcpSpec wide_spec(int np = 10) {
  const auto p = energy_plant();
  nmpc::OcpSpec s;
  s.np = np;
  s.nominal_theta = plant::longitudinal_theta(p);
  s.adapted_theta = s.nominal_theta;
  s.energy = energy_model(p);
  s.k = {-3.15, -56.7, 0.026};
  s.weights = {1.0, 1.0, 1e-6, 1e3};
  for (int i = 0; i <= np; ++i) {
    s.state_sets.push_back(setalg::IntervalBox{{-50, -50, -1e5}, {50, 50, 1e5}});
    s.input_sets.push_back(setalg::IntervalBox{{-1e5}, {1e5}});
  }
  return s;
}

/// Horizon problem with the default constraint bands, lightly tightened.
inline nmpc::OcpSpec banded_spec(int np = 10) {
  nmpc::OcpSpec s = wide_spec(np);
  for (int i = 0; i <= np; ++i) {
    const double shrink = 0.1 * i;
    s.state_sets[i] = setalg::IntervalBox{{-5 + shrink, -5 + shrink, -1500.0 + 20.0 * i}, {5 - shrink, 5 - shrink, 1500.0 - 20.0 * i}};
    s.input_sets[i] = setalg::IntervalBox{{-1500.0 + 30.0 * i}, {1500.0 - 30.0 * i}};
  }
  return s;
}

/// Random car-following state near a feasible operating point.
inline nmpc::AugmentedState random_state(std::mt19937_64& rng, const nmpc::OcpSpec& s) {
  std::uniform_real_distribution<double> uv(5.0, 25.0), ue(-1.5, 1.5), ua(-0.5, 0.5), ut(-200.0, 600.0);
  const double v = uv(rng);
  const double gap = s.d0 + s.h * v + ue(rng);
  return nmpc::AugmentedState::anchored(0.0, v, ut(rng), gap, v + 0.5 * ue(rng), ua(rng));
}

}  // namespace atnmpc::testing
