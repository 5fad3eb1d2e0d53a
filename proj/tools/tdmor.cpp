// tdmor: command-line front end for model building, simulation and studies.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "tdmor/reduction/model_io.hpp"
#include "tdmor/study/report.hpp"
#include "tdmor/study/synthetic.hpp"

using namespace tdmor;
using nlohmann::json;

namespace {

struct Options {
  std::string system;
  std::optional<std::size_t> synthetic;
  std::vector<double> levels{0.8, 1.0, 1.2};
  double load_level = 1.0;
  std::string ranks = "full";
  std::string models;
  std::vector<int> fault_buses;
  double t_on = 0.0;
  std::optional<double> t_clear;
  std::optional<double> t_end;
  double dt = 0.01;
  double horizon = 16.0;
  std::string mode = "adaptive";
  double angle_threshold = 26.0;
  double load_swap = 0.10;
  double norm_threshold = 1.0;
  std::optional<int> reference_gen;
  std::string out = "out";
  std::uint64_t seed = 1;
  int repetitions = 5;
  double max_error = 5.0;
  double threshold_step = 1.0;
  double threshold_upper = 90.0;
  bool instantaneous_max = false;
  double improvement_tol = 0.1;
  std::size_t start_rank = 1;
  std::size_t max_rank = 0;
  std::vector<double> sweep_levels{0.80, 0.85, 0.90, 0.95, 1.00, 1.05, 1.10, 1.15, 1.20};
  double max_duration = 1.5;
  std::vector<std::string> compare_modes{"force_full", "force_hybrid", "force_taylor", "force_linear", "adaptive"};
};

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::numerical: return 3;
    case ErrorKind::io: return 4;
  }
  return 1;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return "config";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::io: return "io";
  }
  return "internal";
}

int fail(const char* kind, int code, const std::string& message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

class Runner {
public:
  Runner(const Options& o, std::string command) : o_(o), command_(std::move(command)) {}

  int run() {
    validate();
    system_ = load();
    config_ = effective_config();
    hash_ = config_hash(config_);
    std::filesystem::create_directories(o_.out);
    if (command_ == "build") return build();
    if (command_ == "simulate") return simulate();
    if (command_ == "cct") return cct();
    if (command_ == "rank-search") return rank();
    if (command_ == "threshold-search") return threshold();
    if (command_ == "sweep") return sweep();
    if (command_ == "compare") return compare();
    throw ConfigError("unknown command '" + command_ + "'");
  }

private:
  void validate() const {
    if (o_.system.empty() == !o_.synthetic) throw ConfigError("give exactly one of --system or --synthetic");
    if (!(o_.dt > 0.0)) throw ConfigError("--dt must be positive");
    if (!(o_.horizon > 0.0)) throw ConfigError("--horizon must be positive");
    if (!(o_.load_level > 0.0)) throw ConfigError("--load-level must be positive");
    if (o_.levels.empty()) throw ConfigError("--levels must not be empty");
    if (o_.repetitions < 5) throw ConfigError("--repetitions must be at least 5");
    parse_sim_mode(o_.mode);
    for (const auto& m : o_.compare_modes) parse_sim_mode(m);
  }

  PowerSystem load() const {
    if (o_.synthetic) {
      SyntheticOptions s;
      s.external_machines = *o_.synthetic;
      s.seed = o_.seed;
      return make_synthetic_system(s);
    }
    return load_system(o_.system);
  }

  json effective_config() const {
    json c;
    c["command"] = command_;
    // content digest, not the path: moving the file keeps the hash
    if (o_.synthetic) c["synthetic"] = *o_.synthetic;
    c["system_digest"] = config_hash(to_json(system_));
    c["levels"] = o_.levels;
    c["load_level"] = o_.load_level;
    c["ranks"] = o_.ranks;
    c["models"] = o_.models.empty() ? json(nullptr) : json(config_hash(json(read_file(o_.models))));
    c["fault_buses"] = o_.fault_buses;
    c["t_on"] = o_.t_on;
    c["t_clear"] = o_.t_clear ? json(*o_.t_clear) : json(nullptr);
    c["t_end"] = t_end();
    c["dt"] = o_.dt;
    c["mode"] = o_.mode;
    c["angle_threshold"] = o_.angle_threshold;
    c["load_swap"] = o_.load_swap;
    c["norm_threshold"] = o_.norm_threshold;
    c["reference_gen"] = o_.reference_gen ? json(*o_.reference_gen) : json(nullptr);
    c["seed"] = o_.seed;
    if (command_ == "compare") {
      c["repetitions"] = o_.repetitions;
      c["compare_modes"] = o_.compare_modes;
    }
    if (command_ == "threshold-search") {
      c["max_error"] = o_.max_error;
      c["threshold_step"] = o_.threshold_step;
      c["threshold_upper"] = o_.threshold_upper;
      c["instantaneous_max"] = o_.instantaneous_max;
    }
    if (command_ == "rank-search") {
      c["improvement_tol"] = o_.improvement_tol;
      c["start_rank"] = o_.start_rank;
      c["max_rank"] = o_.max_rank;
    }
    if (command_ == "sweep") c["sweep_levels"] = o_.sweep_levels;
    if (command_ == "cct" || command_ == "sweep") c["max_duration"] = o_.max_duration;
    return c;
  }

  static std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  double t_end() const { return o_.t_end ? *o_.t_end : o_.t_on + o_.horizon; }

  std::string path(const std::string& stem, const std::string& ext) const {
    return (std::filesystem::path(o_.out) / (stem + "_" + hash_ + ext)).string();
  }

  void emit(const std::string& file, const std::string& content) {
    write_text_file(file, content);
    written_.push_back(file);
  }

  int done() {
    std::cout << json{{"config_hash", hash_}, {"written", written_}}.dump() << '\n';
    return 0;
  }

  SwitchPolicy policy() const {
    SwitchPolicy p;
    p.mode = parse_sim_mode(o_.mode);
    p.angle_threshold_deg = o_.angle_threshold;
    p.load_change_fraction = o_.load_swap;
    p.norm_threshold = o_.norm_threshold;
    p.reference_generator = o_.reference_gen;
    p.representative_levels = o_.levels;
    return p;
  }

  int fault_bus() const {
    if (o_.fault_buses.size() != 1) throw ConfigError("this command needs exactly one --fault-bus");
    return o_.fault_buses.front();
  }

  Scenario scenario(bool needs_clear = true) const {
    Scenario sc;
    sc.dt = o_.dt;
    sc.t_end = t_end();
    if (!o_.fault_buses.empty()) {
      sc.fault_bus = fault_bus();
      sc.t_fault_on = o_.t_on;
      if (!o_.t_clear && needs_clear) throw ConfigError("--t-clear is required with --fault-bus");
      sc.t_clear = o_.t_clear.value_or(o_.t_on);
    }
    return sc;
  }

  const SystemModel& at(double level) {
    auto it = systems_.find(level);
    if (it == systems_.end()) it = systems_.emplace(level, build_system_model(system_, level)).first;
    return it->second;
  }

  std::vector<TaylorModel> build_models() {
    TaylorBuildOptions b;
    b.retain_raw = false;
    b.cp.seed = o_.seed;
    if (o_.ranks == "full") {
      b.ranks = {0, 0};
    } else if (o_.ranks == "auto") {
      const auto& base = at(1.0);
      if (base.states() <= kRawTensorLimit) {
        b.ranks = {0, 0};  // lossless is affordable at this size
      } else {
        RankSearchOptions ro;
        ro.improvement_tol_deg = o_.improvement_tol;
        ro.start_rank = o_.start_rank;
        ro.max_rank = o_.max_rank;
        b.ranks = rank_search(base, scenario(), policy(), ro, b.cp).ranks;
      }
    } else {
      std::size_t r2 = 0, r3 = 0;
      char comma = 0;
      std::istringstream in(o_.ranks);
      if (!(in >> r2 >> comma >> r3) || comma != ',' || !in.eof() || r2 == 0 || r3 == 0)
        throw ConfigError("--ranks must be 'full', 'auto' or 'r2,r3' with positive ranks");
      b.ranks = {r2, r3};
    }
    ModelSetOptions mo;
    mo.levels = o_.levels;
    mo.build = b;
    return build_model_set(system_, mo);
  }

  const ModelSet& models() {
    if (!models_) {
      models_ = share_models(o_.models.empty() ? build_models() : load_model_set(o_.models));
    }
    return *models_;
  }

  int build() {
    const auto set = build_models();
    json artifact = model_set_json(set);
    artifact["tool_version"] = kToolVersion;
    artifact["config_hash"] = hash_;
    artifact["seed"] = o_.seed;
    emit(path("model_set", ".json"), artifact.dump() + "\n");
    json rep = report_envelope("build", config_, o_.seed);
    json levels = json::array();
    for (const auto& m : set)
      levels.push_back({{"load_level", m.load_level}, {"n", m.n()}, {"r2", m.a2.rank}, {"r3", m.a3.rank},
                        {"fit2", number_json(m.fit2)}, {"fit3", number_json(m.fit3)}});
    rep["models"] = levels;
    emit(path("build", ".json"), rep.dump(2) + "\n");
    return done();
  }

  int simulate() {
    const auto& sys = at(o_.load_level);
    const auto p = policy();
    const ModelSet& set = p.mode == SimMode::force_full ? empty_ : models();
    const auto tr = run_adaptive(sys, set, scenario(), p);
    std::ostringstream csv, log;
    write_trajectory_csv(csv, tr, sys.state_names());
    write_switch_log_jsonl(log, tr.switch_log);
    emit(path("trajectory", ".csv"), csv.str());
    emit(path("switch_log", ".jsonl"), log.str());
    json rep = report_envelope("simulate", config_, o_.seed);
    rep["samples"] = tr.size();
    rep["t_final"] = tr.times.back();
    rep["truncated"] = tr.truncated;
    rep["truncation_reason"] = tr.truncation_reason;
    rep["reference_generator"] = sys.system.machines[reference_index(sys, p)].id;
    rep["switch_log"] = switch_log_json(tr.switch_log);
    emit(path("simulate", ".json"), rep.dump(2) + "\n");
    if (tr.truncated) std::cerr << "warning: " << tr.truncation_reason << '\n';
    return done();
  }

  CctOptions cct_options() const {
    CctOptions c;
    c.resolution = o_.dt;
    c.horizon = o_.horizon;
    c.t_fault_on = o_.t_on;
    c.max_duration = o_.max_duration;
    return c;
  }

  int cct() {
    if (o_.fault_buses.empty()) throw ConfigError("cct needs at least one --fault-bus");
    const auto& sys = at(o_.load_level);
    const auto p = policy();
    const ModelSet& set = p.mode == SimMode::force_full ? empty_ : models();
    json rep = report_envelope("cct", config_, o_.seed);
    json rows = json::array();
    for (int bus : o_.fault_buses) {
      json r = to_json(cct_search(sys, set, p, bus, cct_options()));
      r["bus"] = bus;
      rows.push_back(r);
    }
    rep["results"] = rows;
    emit(path("cct", ".json"), rep.dump(2) + "\n");
    return done();
  }

  int rank() {
    const auto& sys = at(o_.load_level);
    RankSearchOptions ro;
    ro.improvement_tol_deg = o_.improvement_tol;
    ro.start_rank = o_.start_rank;
    ro.max_rank = o_.max_rank;
    CpOptions cp;
    cp.seed = o_.seed;
    json rep = report_envelope("rank-search", config_, o_.seed);
    rep["result"] = to_json(rank_search(sys, scenario(), policy(), ro, cp));
    emit(path("rank_search", ".json"), rep.dump(2) + "\n");
    return done();
  }

  int threshold() {
    const auto& sys = at(o_.load_level);
    ThresholdSearchOptions to;
    to.max_error_deg = o_.max_error;
    to.start_deg = o_.threshold_step;
    to.step_deg = o_.threshold_step;
    to.upper_deg = o_.threshold_upper;
    to.metric = o_.instantaneous_max ? ErrorMetric::max_abs : ErrorMetric::rms;
    json rep = report_envelope("threshold-search", config_, o_.seed);
    rep["result"] = to_json(threshold_search(sys, models(), scenario(), policy(), to));
    emit(path("threshold_search", ".json"), rep.dump(2) + "\n");
    return done();
  }

  int sweep() {
    SweepOptions so;
    so.levels = o_.sweep_levels;
    so.fault_bus = fault_bus();
    so.cct = cct_options();
    const auto rows = load_sweep(system_, models(), policy(), so);
    json rep = report_envelope("sweep", config_, o_.seed);
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(to_json(r));
    rep["rows"] = arr;
    emit(path("sweep", ".json"), rep.dump(2) + "\n");
    std::vector<std::string> names;
    for (std::size_t g : at(1.0).study) names.push_back(std::to_string(system_.machines[g].id));
    std::ostringstream csv;
    write_sweep_csv(csv, rows, names);
    emit(path("sweep", ".csv"), csv.str());
    return done();
  }

  int compare() {
    const auto& sys = at(o_.load_level);
    std::vector<SimMode> modes;
    for (const auto& m : o_.compare_modes) modes.push_back(parse_sim_mode(m));
    const auto rows = timing_compare(sys, models(), scenario(), policy(), modes, o_.repetitions);
    json rep = report_envelope("compare", config_, o_.seed);
    rep["rows"] = timing_counts_json(rows);
    emit(path("compare", ".json"), rep.dump(2) + "\n");
    // wall times vary run to run and stay out of the reproducible payload
    json measured = report_envelope("compare-timing", config_, o_.seed);
    measured["rows"] = timing_measured_json(rows);
    emit(path("timing", ".measured.json"), measured.dump(2) + "\n");
    std::ostringstream csv;
    write_timing_csv(csv, rows);
    emit(path("timing", ".measured.csv"), csv.str());
    return done();
  }

  const Options& o_;
  std::string command_;
  PowerSystem system_;
  json config_;
  std::string hash_;
  std::map<double, SystemModel> systems_;
  std::optional<ModelSet> models_;
  ModelSet empty_;
  std::vector<std::string> written_;
};

}  // namespace

int main(int argc, char** argv) {
  Options o;
  CLI::App app{"Tensor-reduced transient stability simulation and studies"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "TOML config file; flags given on the command line take precedence");
  app.require_subcommand(1);
  app.fallthrough();

  app.add_option("--system", o.system, "System file (JSON)");
  app.add_option("--synthetic", o.synthetic, "Use a generated system with this many external machines instead of --system");
  app.add_option("--levels", o.levels, "Representative load levels of the model set")->delimiter(',')->capture_default_str();
  app.add_option("--load-level", o.load_level, "Operating load level of the simulated system")->capture_default_str();
  app.add_option("--ranks", o.ranks, "CP ranks: 'full' (lossless), 'auto', or 'r2,r3'")->capture_default_str();
  app.add_option("--models", o.models, "Prebuilt model-set file; skips model building");
  app.add_option("--fault-bus", o.fault_buses, "Faulted bus id (cct accepts a comma-separated list)")->delimiter(',');
  app.add_option("--t-on", o.t_on, "Fault-on time (s)")->capture_default_str();
  app.add_option("--t-clear", o.t_clear, "Fault clearing time (s)");
  app.add_option("--t-end", o.t_end, "End of the simulation (s); default t-on + horizon");
  app.add_option("--dt", o.dt, "Integration step (s); also the CCT resolution")->capture_default_str();
  app.add_option("--horizon", o.horizon, "Simulated time after fault-on (s)")->capture_default_str();
  app.add_option("--mode", o.mode, "adaptive | force_full | force_hybrid | force_taylor | force_linear")->capture_default_str();
  app.add_option("--angle-threshold", o.angle_threshold, "Rotor-angle deviation threshold for leaving the hybrid model (deg)")
      ->capture_default_str();
  app.add_option("--load-swap", o.load_swap, "Load change fraction that triggers a model swap")->capture_default_str();
  app.add_option("--norm-threshold", o.norm_threshold, "Admittance column-norm threshold for boundary machines (pu)")
      ->capture_default_str();
  app.add_option("--reference-gen", o.reference_gen, "Reference machine id; default chosen from inertia and coupling");
  app.add_option("--out", o.out, "Output directory")->capture_default_str();
  app.add_option("--seed", o.seed, "Seed for CP initialization and synthetic systems")->capture_default_str();
  app.add_option("--repetitions", o.repetitions, "compare: timed runs per mode")->capture_default_str();
  app.add_option("--compare-modes", o.compare_modes, "compare: modes to time")->delimiter(',')->capture_default_str();
  app.add_option("--max-error", o.max_error, "threshold-search: error bound (deg)")->capture_default_str();
  app.add_option("--threshold-step", o.threshold_step, "threshold-search: sweep step and first value (deg)")->capture_default_str();
  app.add_option("--threshold-upper", o.threshold_upper, "threshold-search: largest threshold tried (deg)")->capture_default_str();
  app.add_flag("--instantaneous-max", o.instantaneous_max, "threshold-search: bound the instantaneous maximum error instead of RMS");
  app.add_option("--improvement-tol", o.improvement_tol, "rank-search: minimum improvement per rank step (deg)")->capture_default_str();
  app.add_option("--start-rank", o.start_rank, "rank-search: first r2")->capture_default_str();
  app.add_option("--max-rank", o.max_rank, "rank-search: largest r2 (0: n^2)")->capture_default_str();
  app.add_option("--sweep-levels", o.sweep_levels, "sweep: load levels")->delimiter(',')->capture_default_str();
  app.add_option("--max-duration", o.max_duration, "cct/sweep: longest fault duration tried (s)")->capture_default_str();

  app.add_subcommand("build", "Build the per-level Taylor model set");
  app.add_subcommand("simulate", "Run one contingency and export the trajectory and switch log");
  app.add_subcommand("cct", "Critical clearing time by bisection");
  app.add_subcommand("rank-search", "Smallest CP ranks whose next increment stops improving accuracy");
  app.add_subcommand("threshold-search", "Largest switching threshold that meets the error bound");
  app.add_subcommand("sweep", "CCT and adaptive-model error across load levels");
  app.add_subcommand("compare", "Wall time and operation counts per model mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::FileError& e) {
    return fail("io", 4, e.what());
  } catch (const CLI::ParseError& e) {
    return fail("config", 2, e.what());
  }

  try {
    return Runner(o, app.get_subcommands().front()->get_name()).run();
  } catch (const Error& e) {
    return fail(kind_name(e.kind()), exit_code(e.kind()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io", 4, e.what());
  } catch (const std::exception& e) {
    return fail("internal", 1, e.what());
  }
}
