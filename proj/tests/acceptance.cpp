// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// `--record-baseline` rewrites the stored load-sweep error bound instead of checking it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "tdmor/reduction/model_io.hpp"
#include "tdmor/study/report.hpp"
#include "tdmor/study/synthetic.hpp"

using namespace tdmor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

const PowerSystem& wscc9() {
  static const PowerSystem s = load_system(std::string(TDMOR_DATA_DIR) + "/wscc9.json");
  return s;
}

const SystemModel& at_level(double level) {
  static std::map<double, SystemModel> cache;
  auto it = cache.find(level);
  if (it == cache.end()) it = cache.emplace(level, build_system_model(wscc9(), level)).first;
  return it->second;
}

const ModelSet& fixture_models() {
  static const ModelSet set = share_models(build_model_set(wscc9()));
  return set;
}

const std::vector<double> kSweepLevels{0.80, 0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15, 1.20};

double rel(const Vector& a, const Vector& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += std::pow(std::log(x[i]) - mx, 2);
  }
  return sxy / sxx;
}

Tensor random_tensor(const Dims& dims, SplitMix64& rng) {
  Tensor t(dims);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

// 1. tensor kernels against loop oracles, and the three evaluation paths of
// the quadratic and cubic terms at full rank.
Outcome tensor_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  SplitMix64 rng(2024);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 2 + rng.next() % 5;
    const auto ni = static_cast<Eigen::Index>(n);

    // mode-k product vs the contraction sum written out
    const Tensor t = random_tensor({n, n + 1, n + 2}, rng);
    for (std::size_t k = 0; k < 3; ++k) {
      const Matrix x = random_matrix(3, static_cast<Eigen::Index>(t.dim(k)), rng);
      const Tensor got = mode_k_product(t, x, k);
      Tensor want(got.dims());
      for (std::size_t a = 0; a < got.dim(0); ++a)
        for (std::size_t b = 0; b < got.dim(1); ++b)
          for (std::size_t c = 0; c < got.dim(2); ++c) {
            double s = 0.0;
            for (std::size_t j = 0; j < t.dim(k); ++j) {
              const std::size_t idx[3] = {k == 0 ? j : a, k == 1 ? j : b, k == 2 ? j : c};
              const std::size_t row = k == 0 ? a : (k == 1 ? b : c);
              s += t(idx[0], idx[1], idx[2]) * x(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j));
            }
            want(a, b, c) = s;
          }
      worst = std::max(worst, relative_error(got, want));
    }

    // Khatri-Rao vs column-wise Kronecker
    const Matrix p = random_matrix(ni, 3, rng), q = random_matrix(ni + 1, 3, rng);
    const Matrix kr = khatri_rao(p, q);
    for (Eigen::Index c = 0; c < 3; ++c) {
      Vector col(p.rows() * q.rows());
      for (Eigen::Index i = 0; i < p.rows(); ++i)
        for (Eigen::Index j = 0; j < q.rows(); ++j) col(i * q.rows() + j) = p(i, c) * q(j, c);
      worst = std::max(worst, rel(kr.col(c), col));
    }

    // matricize / tensorize round trip
    if (!(tensorize(matricize_mode1(t), t.dims()) == t)) worst = std::max(worst, 1.0);

    // Kronecker form, mode-product form and factored form of A1 x + A2 x x + A3 x x x
    TaylorModel m;
    m.x0 = Vector::Zero(ni);
    m.a1 = random_matrix(ni, ni, rng);
    const Tensor a2 = random_tensor({n, n, n}, rng);
    const Tensor a3 = random_tensor({n, n, n, n}, rng);
    m.a2 = cp_exact(a2);
    m.a3 = cp_exact(a3);
    const Vector dx = random_vector(ni, rng);
    const Vector kron_form =
        m.a1 * dx + matricize_mode1(a2) * kron(dx, dx) + matricize_mode1(a3) * kron(dx, kron(dx, dx));
    const Matrix row = dx.transpose();
    const Tensor t2 = mode_k_product(mode_k_product(a2, row, 1), row, 2);
    const Tensor t3 = mode_k_product(mode_k_product(mode_k_product(a3, row, 1), row, 2), row, 3);
    const Vector mode_form =
        m.a1 * dx + Eigen::Map<const Vector>(t2.data().data(), ni) + Eigen::Map<const Vector>(t3.data().data(), ni);
    worst = std::max({worst, rel(mode_form, kron_form), rel(reduced_rhs(m, dx), kron_form)});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst <= 1e-8 && secs < 30.0, "worst rel error " + fmt(worst, 3) + " over 50 instances, " + fmt(secs, 3) + " s"};
}

// 2. CP recovery of planted low-rank tensors.
Outcome cp_recovery() {
  SplitMix64 rng(77);
  double worst = 0.0;
  bool monotone = true;
  int cases = 0;
  for (std::size_t rank : {1, 2, 3})
    for (const Dims& dims : {Dims{5, 5, 5}, Dims{10, 12, 8}, Dims{20, 20, 20}}) {
      CpFactors truth;
      truth.rank = rank;
      for (std::size_t d : dims) {
        // unit columns with well-separated directions
        Matrix a = random_matrix(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rank), rng);
        for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j).normalize();
        truth.factors.push_back(a);
      }
      truth.weights = random_vector(static_cast<Eigen::Index>(rank), rng, 1.0, 2.0);
      const Tensor t = cp_reconstruct(truth);
      CpOptions o;
      o.max_iters = 3000;
      o.fit_tolerance = 1e-14;
      o.restarts = 3;
      o.seed = 5;
      const CpResult r = cp_decompose(t, rank, o);
      worst = std::max(worst, relative_error(cp_reconstruct(r.factors), t));
      for (std::size_t i = 1; i < r.fit_history.size(); ++i)
        if (r.fit_history[i] < r.fit_history[i - 1] - 1e-12) monotone = false;
      ++cases;
    }
  return {worst <= 1e-5 && monotone, std::to_string(cases) + " tensors, worst reconstruction error " + fmt(worst, 3) +
                                         ", fit monotone: " + (monotone ? "yes" : "no")};
}

// 3. remainder of the third-order expansion shrinks with the fourth power.
Outcome taylor_order() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& sys = at_level(1.0);
  const TaylorModel m = build_taylor_model(sys);
  SplitMix64 rng(303);
  double lo = 1e9, hi = -1e9;
  for (int dir = 0; dir < 10; ++dir) {
    const Vector v = random_vector(static_cast<Eigen::Index>(sys.states()), rng);
    std::vector<double> eps, res;
    for (int k = 0; k <= 8; ++k) {
      eps.push_back(std::pow(10.0, -3.0 + 0.25 * k));
      const Vector dx = eps.back() * v;
      res.push_back((f_full(sys, sys.x0 + dx) - reduced_rhs(m, dx)).norm());
    }
    const double s = loglog_slope(eps, res);
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {lo >= 3.6 && hi <= 4.4 && secs < 120.0,
          "slopes in [" + fmt(lo) + ", " + fmt(hi) + "] over 10 directions, " + fmt(secs, 3) + " s"};
}

// 4. equilibrium at every load level; electrical power blind to a common angle shift.
Outcome equilibrium_symmetry() {
  double worst_res = 0.0, worst_shift = 0.0;
  for (double level : kSweepLevels) {
    const auto& sys = at_level(level);
    worst_res = std::max(worst_res, equilibrium_residual(sys));
    Vector shifted = sys.x0;
    for (std::size_t g = 0; g < sys.machines(); ++g) shifted(static_cast<Eigen::Index>(state_index(g, kDelta))) += 0.7;
    const Vector pe0 = machine_outputs(sys, sys.prefault, sys.x0).pe;
    const Vector pe1 = machine_outputs(sys, sys.prefault, shifted).pe;
    worst_shift = std::max(worst_shift, (pe1 - pe0).cwiseAbs().maxCoeff());
  }
  return {worst_res < 1e-8 && worst_shift < 1e-10,
          "max |f(x0)| " + fmt(worst_res, 3) + " over 9 levels, max Pe change under shift " + fmt(worst_shift, 3)};
}

// 5. RK4 global error ratio on x' = -x.
Outcome rk4_order() {
  const Rhs f = [](const Vector& x, Vector& dx) { dx = -x; };
  auto err = [&](double dt) {
    const auto tr = integrate(f, Vector::Ones(1), 0.0, 1.0, dt);
    return std::abs(tr.states.back()(0) - std::exp(-1.0));
  };
  const double ratio = err(0.1) / err(0.05);
  return {ratio >= 14.0 && ratio <= 18.0, "error ratio " + fmt(ratio)};
}

Scenario fault_at(int bus, double t_clear, double t_end = 16.0) {
  Scenario sc;
  sc.fault_bus = bus;
  sc.t_clear = t_clear;
  sc.t_end = t_end;
  return sc;
}

// 6. accuracy ordering at 0.95 CCT, with only the study area simulated nonlinearly.
Outcome accuracy_ordering() {
  const auto& sys = at_level(1.0);
  const int bus = 7;
  SwitchPolicy p;
  // every external machine of the fixture is tightly coupled; a threshold above
  // all of them keeps the hybrid model distinct from the full one
  p.norm_threshold = std::numeric_limits<double>::infinity();
  p.mode = SimMode::force_full;
  const auto cct = cct_search(sys, {}, p, bus);
  if (!cct.cct) return {false, "no CCT found at bus 7"};
  const double clear = std::floor(0.95 * *cct.cct / 0.01 + 1e-9) * 0.01;
  const auto sc = fault_at(bus, clear);
  const std::size_t ref = reference_index(sys, p);
  const auto full = run_adaptive(sys, fixture_models(), sc, p);
  auto err = [&](SimMode mode) {
    SwitchPolicy q = p;
    q.mode = mode;
    return study_error(run_adaptive(sys, fixture_models(), sc, q), full, sys, ref);
  };
  const double hybrid = err(SimMode::force_hybrid), taylor = err(SimMode::force_taylor);
  const double linear = err(SimMode::force_linear), adaptive = err(SimMode::adaptive);
  const bool pass = hybrid <= taylor && taylor <= 1.05 * linear && adaptive < linear;
  return {pass, "bus 7, clear " + fmt(clear) + " s (CCT " + fmt(*cct.cct) + "): RMS hybrid " + fmt(hybrid) +
                    ", taylor " + fmt(taylor) + ", linear " + fmt(linear) + ", adaptive " + fmt(adaptive) + " deg"};
}

// 7. adaptive CCT equals full CCT at every generator bus; full CCT non-increasing in load.
Outcome cct_fidelity() {
  const auto& sys = at_level(1.0);
  std::string detail;
  bool pass = true;
  for (const auto& m : wscc9().machines) {
    SwitchPolicy full;
    full.mode = SimMode::force_full;
    const auto a = cct_search(sys, fixture_models(), SwitchPolicy{}, m.bus);
    const auto f = cct_search(sys, {}, full, m.bus);
    const bool same = a.cct.has_value() == f.cct.has_value() && (!a.cct || std::abs(*a.cct - *f.cct) < 1e-9);
    pass = pass && same;
    detail += "bus " + std::to_string(m.bus) + " adaptive " + (a.cct ? fmt(*a.cct) : "none") + " full " +
              (f.cct ? fmt(*f.cct) : "none") + "; ";
  }
  SwitchPolicy full;
  full.mode = SimMode::force_full;
  std::optional<double> prev;
  bool monotone = true;
  std::string trend;
  for (double level : kSweepLevels) {
    const auto r = cct_search(at_level(level), {}, full, 7);
    if (!r.cct || (prev && *r.cct > *prev + 1e-9)) monotone = false;
    if (r.cct) prev = r.cct;
    trend += (trend.empty() ? "" : " ") + (r.cct ? fmt(*r.cct) : std::string("none"));
  }
  return {pass && monotone, detail + "bus 7 CCT by load: " + trend + (monotone ? " (non-increasing)" : " (NOT monotone)")};
}

double sweep_max_rms() {
  SweepOptions o;
  o.levels = kSweepLevels;
  double worst = 0.0;
  for (const auto& r : load_sweep(wscc9(), fixture_models(), SwitchPolicy{}, o))
    worst = std::max(worst, r.diagnostic.empty() ? r.max_rms_deg : std::numeric_limits<double>::infinity());
  return worst;
}

const std::string kBaselinePath = std::string(TDMOR_DATA_DIR) + "/acceptance_baseline.json";

// 8. load sweep stays within the recorded bound (+10%).
Outcome load_sweep_bound(bool record) {
  const double worst = sweep_max_rms();
  if (record) {
    const nlohmann::json b = {{"load_sweep_max_rms_deg", worst},
                              {"fault_bus", 7},
                              {"levels", kSweepLevels},
                              {"representative_levels", {0.8, 1.0, 1.2}},
                              {"tool_version", kToolVersion}};
    write_text_file(kBaselinePath, b.dump(2) + "\n");
    return {std::isfinite(worst), "recorded bound " + fmt(worst, 6) + " deg"};
  }
  std::ifstream in(kBaselinePath);
  if (!in) return {false, "no recorded bound at " + kBaselinePath};
  const double bound = nlohmann::json::parse(in).at("load_sweep_max_rms_deg").get<double>();
  return {worst <= 1.1 * bound, "max RMS " + fmt(worst) + " deg over 9 levels, recorded bound " + fmt(bound) +
                                    " deg (limit " + fmt(1.1 * bound) + ")"};
}

// 9. speed and operation count on an enlarged synthetic system.
Outcome speed_direction() {
  SyntheticOptions so;
  so.external_machines = 30;
  const PowerSystem ps = make_synthetic_system(so);
  const auto sys = build_system_model(ps, 1.0);
  TaylorBuildOptions b;
  b.ranks = {4, 4};
  b.retain_raw = false;
  b.cp.restarts = 1;
  b.cp.max_iters = 100;
  const ModelSet set{std::make_shared<const TaylorModel>(build_taylor_model(sys, b))};
  SwitchPolicy p;
  p.representative_levels = {1.0};
  const auto sc = fault_at(1001, 0.05, 5.0);
  const auto rows = timing_compare(sys, set, sc, p, {SimMode::force_full, SimMode::force_taylor}, 5);
  const auto& full = rows[0];
  const auto& taylor = rows[1];
  const bool pass = taylor.median_s < full.median_s && 2 * taylor.rhs_flops < full.rhs_flops;
  return {pass, std::to_string(sys.machines()) + " machines, ranks 4/4: median full " + fmt(full.median_s, 3) +
                    " s, taylor " + fmt(taylor.median_s, 3) + " s; RHS flops full " + std::to_string(full.rhs_flops) +
                    ", taylor " + std::to_string(taylor.rhs_flops)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Concatenated contents of every file in a directory, by name.
std::string dir_payload(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().string().find(".measured.") == std::string::npos) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += f.filename().string() + "\n" + slurp(f);
  return out;
}

// 10. every command twice with the same config; payloads byte-identical.
Outcome determinism() {
  const std::filesystem::path root = std::filesystem::temp_directory_path() / "tdmor_acceptance_determinism";
  std::filesystem::remove_all(root);
  const std::string sys = std::string(TDMOR_DATA_DIR) + "/wscc9.json";
  const std::vector<std::string> commands = {
      "build --ranks 3,4",
      "simulate --fault-bus 7 --t-clear 0.1 --t-end 3",
      "cct --fault-bus 7 --max-duration 0.5 --horizon 4",
      "rank-search --fault-bus 7 --t-clear 0.1 --t-end 1 --max-rank 2",
      "threshold-search --fault-bus 7 --t-clear 0.1 --t-end 2 --threshold-upper 6 --threshold-step 2",
      "sweep --fault-bus 7 --sweep-levels 0.9,1.1 --horizon 4 --max-duration 0.5",
      "compare --fault-bus 7 --t-clear 0.1 --t-end 0.5",
  };
  std::string detail;
  bool pass = true;
  for (std::size_t i = 0; i < commands.size(); ++i) {
    std::string payload[2];
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = root / (std::to_string(i) + "_" + std::to_string(rep));
      const std::string cmd = std::string("\"") + TDMOR_CLI + "\" " + commands[i] + " --system \"" + sys +
                              "\" --seed 3 --out \"" + out.string() + "\" > /dev/null";
      if (std::system(cmd.c_str()) != 0) {
        pass = false;
        detail += "'" + commands[i].substr(0, commands[i].find(' ')) + "' failed; ";
        break;
      }
      payload[rep] = dir_payload(out);
    }
    if (payload[0].empty() || payload[0] != payload[1]) {
      pass = false;
      detail += "'" + commands[i].substr(0, commands[i].find(' ')) + "' differs; ";
    }
  }
  std::filesystem::remove_all(root);
  return {pass, pass ? std::to_string(commands.size()) + " commands reproduced byte-identical payloads" : detail};
}

}  // namespace

int main(int argc, char** argv) {
  const bool record = argc > 1 && std::string(argv[1]) == "--record-baseline";
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"tensor oracle suite", tensor_suite},
      {"CP recovery", cp_recovery},
      {"Taylor remainder order", taylor_order},
      {"equilibrium and angle-shift symmetry", equilibrium_symmetry},
      {"RK4 order", rk4_order},
      {"accuracy ordering", accuracy_ordering},
      {"CCT fidelity", cct_fidelity},
      {"load-sweep robustness", [record] { return load_sweep_bound(record); }},
      {"speed direction", speed_direction},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("CRITERION %zu %s: %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed ? 1 : 0;
}
