#pragma once

// Seeded synthetic multi-machine system for scaling runs: one terminal bus
// and one network bus per machine, network buses on a ring with chords, a
// local load at every network bus. Machines 1..study are the study area.

#include <string>

#include "tdmor/power/system.hpp"

namespace tdmor {

struct SyntheticOptions {
  std::size_t study_machines = 3;
  std::size_t external_machines = 30;
  std::size_t chord_stride = 3;  // extra branch from ring bus i to i + stride (0: none)
  std::uint64_t seed = 7;
};

inline PowerSystem make_synthetic_system(const SyntheticOptions& opts = {}) {
  const std::size_t m = opts.study_machines + opts.external_machines;
  if (opts.study_machines == 0 || m < 3) throw ConfigError("synthetic system: need a study area and 3+ machines");
  SplitMix64 rng(opts.seed);
  PowerSystem s;
  s.name = "synthetic-" + std::to_string(m);
  const std::size_t slack = m - 1;  // last external machine
  for (std::size_t i = 0; i < m; ++i) {
    const int gen_bus = static_cast<int>(i + 1);
    const int net_bus = static_cast<int>(1001 + i);
    const double pg = rng.uniform(0.8, 1.6);
    Bus g;
    g.id = gen_bus;
    g.type = i == slack ? BusType::slack : BusType::pv;
    g.pg = pg;
    g.vm = 1.02;
    s.buses.push_back(g);
    Bus n;
    n.id = net_bus;
    n.pd = 0.85 * pg;
    n.qd = 0.25 * n.pd;
    s.buses.push_back(n);
    s.branches.push_back({gen_bus, net_bus, 0.0, 0.06, 0.0, 1.0});

    MachineParams mp;
    mp.id = gen_bus;
    mp.bus = gen_bus;
    mp.H = i == slack ? 40.0 : rng.uniform(3.0, 12.0);
    mp.D = 2.0;
    mp.Xd = rng.uniform(0.8, 1.0);
    mp.Xq = 0.95 * mp.Xd;
    mp.Xd_prime = rng.uniform(0.10, 0.14);
    mp.Xq_prime = mp.Xd_prime;
    mp.Td0_prime = rng.uniform(5.0, 8.0);
    mp.Tq0_prime = rng.uniform(0.4, 0.6);
    s.machines.push_back(mp);
    (i < opts.study_machines ? s.study_area : s.external_area).push_back(gen_bus);
  }
  auto line = [&](std::size_t a, std::size_t b) {
    const double x = rng.uniform(0.06, 0.14);
    s.branches.push_back({static_cast<int>(1001 + a), static_cast<int>(1001 + b), x / 10.0, x, 0.05, 1.0});
  };
  for (std::size_t i = 0; i < m; ++i) line(i, (i + 1) % m);
  if (opts.chord_stride > 1)
    for (std::size_t i = 0; i < m; i += 2) line(i, (i + opts.chord_stride) % m);
  validate(s);
  return s;
}

}  // namespace tdmor
