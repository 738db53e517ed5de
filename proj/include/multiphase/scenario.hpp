#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "multiphase/circuits.hpp"
#include "multiphase/estimate.hpp"
#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"
#include "multiphase/povm.hpp"
#include "multiphase/probes.hpp"

namespace multiphase {

using nlohmann::json;

// Config-file problems; the CLI maps these to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace cfg {

inline const json& require(const json& obj, const std::string& path, const std::string& key) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(path + key + ": missing required field");
  return *it;
}

inline void reject_unknown(const json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) throw ConfigError(path + it.key() + ": unknown field");
  }
}

inline double as_number(const json& v, const std::string& where) {
  if (!v.is_number()) throw ConfigError(where + ": expected a number");
  return v.get<double>();
}

inline int as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
  return v.get<int>();
}

inline bool as_bool(const json& v, const std::string& where) {
  if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a string");
  return v.get<std::string>();
}

template <typename T, typename Fn>
std::vector<T> as_array(const json& v, const std::string& where, Fn&& element) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<T> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(element(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

}  // namespace cfg

// --- CircuitSpec wire format (owned here; circuits stays JSON-free) ---------

inline json circuit_to_json(const CircuitSpec& spec) {
  json layers = json::array();
  for (const auto& layer : spec.layers) {
    if (const auto* b = std::get_if<BeamSplitterElement>(&layer))
      layers.push_back({{"type", "beam_splitter"},
                        {"modes", {b->mode_a, b->mode_b}},
                        {"transmittivity", b->transmittivity}});
    else if (const auto* p = std::get_if<PhaseShifterElement>(&layer))
      layers.push_back({{"type", "phase_shifter"}, {"mode", p->mode}, {"theta", p->theta}});
    else if (const auto* u = std::get_if<UnknownPhaseElement>(&layer))
      layers.push_back({{"type", "unknown_phase"}, {"mode", u->mode}, {"symbol", u->symbol}});
  }
  return json{{"mode_count", spec.mode_count}, {"layers", layers}};
}

inline CircuitSpec circuit_from_json(const json& j, const std::string& path) {
  cfg::reject_unknown(j, path, {"mode_count", "layers"});
  CircuitSpec spec;
  spec.mode_count = cfg::as_int(cfg::require(j, path, "mode_count"), path + "mode_count");
  const json& layers = cfg::require(j, path, "layers");
  if (!layers.is_array()) throw ConfigError(path + "layers: expected an array");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string lp = path + "layers[" + std::to_string(i) + "].";
    const json& lj = layers[i];
    const std::string type = cfg::as_string(cfg::require(lj, lp, "type"), lp + "type");
    if (type == "beam_splitter") {
      cfg::reject_unknown(lj, lp, {"type", "modes", "transmittivity"});
      auto modes = cfg::as_array<int>(cfg::require(lj, lp, "modes"), lp + "modes", cfg::as_int);
      if (modes.size() != 2) throw ConfigError(lp + "modes: expected two mode indices");
      spec.layers.push_back(BeamSplitterElement{
          modes[0], modes[1],
          cfg::as_number(cfg::require(lj, lp, "transmittivity"), lp + "transmittivity")});
    } else if (type == "phase_shifter") {
      cfg::reject_unknown(lj, lp, {"type", "mode", "theta"});
      spec.layers.push_back(
          PhaseShifterElement{cfg::as_int(cfg::require(lj, lp, "mode"), lp + "mode"),
                              cfg::as_number(cfg::require(lj, lp, "theta"), lp + "theta")});
    } else if (type == "unknown_phase") {
      cfg::reject_unknown(lj, lp, {"type", "mode", "symbol"});
      spec.layers.push_back(
          UnknownPhaseElement{cfg::as_int(cfg::require(lj, lp, "mode"), lp + "mode"),
                              cfg::as_int(cfg::require(lj, lp, "symbol"), lp + "symbol")});
    } else {
      throw ConfigError(lp + "type: unknown element type '" + type + "'");
    }
  }
  try {
    spec.validate();
  } catch (const std::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return spec;
}

// Balanced tritter in this circuit convention (every |U_ij|^2 = 1/3).
inline constexpr double kBalancedTritterT1 = 0.5;
inline constexpr double kBalancedTritterT2 = 1.0 / 3.0;
inline constexpr double kBalancedTritterT3 = 0.5;
inline constexpr double kBalancedTritterTheta = kPi / 2.0;

// Prepare-phases-measure interferometer: balanced preparation tritter, d=2
// unknown phases on arms 1 and 2, two control phases on the same arms, and an
// asymmetric measurement tritter. The measurement transmittivities were picked
// so that the two-photon outcome map has no near-collisions over the torus
// (smallest off-peak KL ~ 4.6e-2 per shot); a balanced measurement stage
// leaves distant phase pairs nearly indistinguishable.
inline CircuitSpec two_tritter_circuit() {
  CircuitSpec spec;
  spec.mode_count = 3;
  spec.layers.push_back(BeamSplitterElement{0, 1, kBalancedTritterT1});
  spec.layers.push_back(BeamSplitterElement{1, 2, kBalancedTritterT2});
  spec.layers.push_back(PhaseShifterElement{0, kBalancedTritterTheta});
  spec.layers.push_back(BeamSplitterElement{0, 1, kBalancedTritterT3});
  spec.layers.push_back(UnknownPhaseElement{1, 1});
  spec.layers.push_back(UnknownPhaseElement{2, 2});
  spec.layers.push_back(UnknownPhaseElement{1, 3});
  spec.layers.push_back(UnknownPhaseElement{2, 4});
  spec.layers.push_back(BeamSplitterElement{0, 1, 0.84});
  spec.layers.push_back(BeamSplitterElement{1, 2, 0.12});
  spec.layers.push_back(PhaseShifterElement{0, 4.73});
  spec.layers.push_back(BeamSplitterElement{0, 1, 0.19});
  return spec;
}

// --- Scenario configs --------------------------------------------------------

struct ScalingLawsParams {
  std::vector<int> dims;
  std::vector<double> energies;
};

struct HongBenchmarkParams {
  int d = 3;
  int photons = 2;
};

struct CoherentReferencesParams {
  int d = 2;
  double probe_energy = 1.0;      // total across probing modes, split equally
  double reference_energy = 1.0;  // total reference energy
};

struct PovmSaturationParams {
  int d = 2;
  int photons = 2;
};

struct SmcConvergenceParams {
  CircuitSpec circuit;
  std::vector<int> input_occupation;
  double visibility = 1.0;
  int unknowns = 2;
  int controls = 2;
  std::vector<double> truth;
  std::vector<double> fixed_controls;
  bool adaptive = false;
  int candidates_per_dim = 4;
  int repetitions = 100;
  int particles = 1000;
  int runs = 5;
  std::vector<int> checkpoints;
};

using ScenarioParams = std::variant<ScalingLawsParams, HongBenchmarkParams,
                                    CoherentReferencesParams, PovmSaturationParams,
                                    SmcConvergenceParams>;

struct ScenarioConfig {
  std::string family;
  std::string name;
  std::uint64_t seed = 0;
  ScenarioParams params;
  std::optional<std::string> csv_output;    // relative file names; CLI resolves
  std::optional<std::string> jsonl_output;
  json canonical;  // the validated config document, hashed for traceability
};

struct ScenarioInfo {
  std::string family;
  std::string description;
};

inline std::vector<ScenarioInfo> list_scenarios() {
  return {
      {"scaling_laws",
       "closed-form Tr(V) bounds (coherent, separate NOON, generalized NOON) over d and energy "
       "sweeps, with the simultaneous/sequential ratio"},
      {"hong_benchmark",
       "generalized NOON trace bounds for the four-mode, two-photon setting: uniform weights vs "
       "the optimal |alpha|^2"},
      {"coherent_references",
       "coherent-probe trace bounds under infinite, separate and single phase references"},
      {"povm_saturation",
       "projective-measurement quality: completeness, orthonormality and the FI/QFI gap at the "
       "recorded saturation point"},
      {"smc_convergence",
       "adaptive sequential-Monte-Carlo estimation on an interferometer model: posterior "
       "covariance trace per step against the CRB reference"},
  };
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string config_hash(const json& canonical) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical.dump())));
  return std::string(buf);
}

inline ScenarioConfig parse_scenario_config(const json& j) {
  cfg::reject_unknown(j, "", {"scenario", "name", "seed", "params", "output"});
  ScenarioConfig config;
  config.family = cfg::as_string(cfg::require(j, "", "scenario"), "scenario");
  const json& seed = cfg::require(j, "", "seed");
  if (!seed.is_number_unsigned() && !seed.is_number_integer())
    throw ConfigError("seed: expected a non-negative integer (wall-clock defaults are not allowed)");
  config.seed = seed.get<std::uint64_t>();
  config.name = j.contains("name") ? cfg::as_string(j["name"], "name") : config.family;
  if (j.contains("output")) {
    cfg::reject_unknown(j["output"], "output.", {"csv", "jsonl"});
    if (j["output"].contains("csv"))
      config.csv_output = cfg::as_string(j["output"]["csv"], "output.csv");
    if (j["output"].contains("jsonl"))
      config.jsonl_output = cfg::as_string(j["output"]["jsonl"], "output.jsonl");
  }
  const json& params = cfg::require(j, "", "params");
  const std::string p = "params.";

  if (config.family == "scaling_laws") {
    cfg::reject_unknown(params, p, {"d", "energy"});
    ScalingLawsParams sp;
    sp.dims = cfg::as_array<int>(cfg::require(params, p, "d"), p + "d", cfg::as_int);
    sp.energies =
        cfg::as_array<double>(cfg::require(params, p, "energy"), p + "energy", cfg::as_number);
    if (sp.dims.empty() || sp.energies.empty())
      throw ConfigError(p + ": sweep axes must be non-empty");
    config.params = sp;
  } else if (config.family == "hong_benchmark") {
    cfg::reject_unknown(params, p, {"d", "photons"});
    HongBenchmarkParams hp;
    hp.d = cfg::as_int(cfg::require(params, p, "d"), p + "d");
    hp.photons = cfg::as_int(cfg::require(params, p, "photons"), p + "photons");
    config.params = hp;
  } else if (config.family == "coherent_references") {
    cfg::reject_unknown(params, p, {"d", "probe_energy", "reference_energy"});
    CoherentReferencesParams cp;
    cp.d = cfg::as_int(cfg::require(params, p, "d"), p + "d");
    cp.probe_energy =
        cfg::as_number(cfg::require(params, p, "probe_energy"), p + "probe_energy");
    cp.reference_energy =
        cfg::as_number(cfg::require(params, p, "reference_energy"), p + "reference_energy");
    config.params = cp;
  } else if (config.family == "povm_saturation") {
    cfg::reject_unknown(params, p, {"d", "photons"});
    PovmSaturationParams pp;
    pp.d = cfg::as_int(cfg::require(params, p, "d"), p + "d");
    pp.photons = cfg::as_int(cfg::require(params, p, "photons"), p + "photons");
    config.params = pp;
  } else if (config.family == "smc_convergence") {
    cfg::reject_unknown(params, p,
                        {"circuit", "input", "visibility", "unknowns", "controls", "truth",
                         "fixed_controls", "adaptive", "candidates_per_dim", "repetitions",
                         "particles", "runs", "checkpoints"});
    SmcConvergenceParams mp;
    const json& circuit = cfg::require(params, p, "circuit");
    if (circuit.is_string()) {
      const std::string which = circuit.get<std::string>();
      if (which != "two_tritter")
        throw ConfigError(p + "circuit: unknown builtin '" + which + "'");
      mp.circuit = two_tritter_circuit();
    } else {
      mp.circuit = circuit_from_json(circuit, p + "circuit.");
    }
    mp.input_occupation =
        cfg::as_array<int>(cfg::require(params, p, "input"), p + "input", cfg::as_int);
    if (params.contains("visibility"))
      mp.visibility = cfg::as_number(params["visibility"], p + "visibility");
    mp.unknowns = cfg::as_int(cfg::require(params, p, "unknowns"), p + "unknowns");
    mp.controls = cfg::as_int(cfg::require(params, p, "controls"), p + "controls");
    mp.truth = cfg::as_array<double>(cfg::require(params, p, "truth"), p + "truth",
                                     cfg::as_number);
    mp.fixed_controls = cfg::as_array<double>(cfg::require(params, p, "fixed_controls"),
                                              p + "fixed_controls", cfg::as_number);
    mp.adaptive = cfg::as_bool(cfg::require(params, p, "adaptive"), p + "adaptive");
    if (params.contains("candidates_per_dim"))
      mp.candidates_per_dim = cfg::as_int(params["candidates_per_dim"], p + "candidates_per_dim");
    mp.repetitions = cfg::as_int(cfg::require(params, p, "repetitions"), p + "repetitions");
    mp.particles = cfg::as_int(cfg::require(params, p, "particles"), p + "particles");
    mp.runs = cfg::as_int(cfg::require(params, p, "runs"), p + "runs");
    mp.checkpoints = cfg::as_array<int>(cfg::require(params, p, "checkpoints"),
                                        p + "checkpoints", cfg::as_int);
    if (mp.checkpoints.empty()) throw ConfigError(p + "checkpoints: must be non-empty");
    for (int ck : mp.checkpoints)
      if (ck < 1 || ck > mp.repetitions)
        throw ConfigError(p + "checkpoints: values must lie in [1, repetitions]");
    if (static_cast<int>(mp.input_occupation.size()) != mp.circuit.mode_count)
      throw ConfigError(p + "input: length must equal the circuit mode count");
    if (mp.circuit.symbol_count() != mp.unknowns + mp.controls)
      throw ConfigError(p + "unknowns/controls: circuit has " +
                        std::to_string(mp.circuit.symbol_count()) + " phase symbols");
    if (static_cast<int>(mp.truth.size()) != mp.unknowns)
      throw ConfigError(p + "truth: length must equal unknowns");
    if (static_cast<int>(mp.fixed_controls.size()) != mp.controls)
      throw ConfigError(p + "fixed_controls: length must equal controls");
    if (!(mp.visibility >= 0.0) || !(mp.visibility <= 1.0))
      throw ConfigError(p + "visibility: must lie in [0, 1]");
    if (mp.runs < 1) throw ConfigError(p + "runs: must be >= 1");
    if (mp.repetitions < 1) throw ConfigError(p + "repetitions: must be >= 1");
    config.params = mp;
  } else {
    throw ConfigError("scenario: unknown family '" + config.family + "'");
  }

  config.canonical = j;
  return config;
}

inline ScenarioConfig load_scenario_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
  try {
    return parse_scenario_config(j);
  } catch (const ConfigError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

// --- Result tables -----------------------------------------------------------

struct ResultRow {
  std::map<std::string, std::string> sweep;
  std::string quantity;
  double value = 0.0;
  double tol_lo = 0.0;
  double tol_hi = 0.0;
  std::string provenance;
};

struct ResultTable {
  std::string scenario;  // instance name
  std::string config_hash;
  std::vector<ResultRow> rows;
};

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

inline std::string format_sweep(const std::map<std::string, std::string>& sweep) {
  std::string out;
  for (const auto& [k, v] : sweep) {
    if (!out.empty()) out += ";";
    out += k + "=" + v;
  }
  return out;
}

namespace detail {

inline ResultRow exact_row(std::map<std::string, std::string> sweep, std::string quantity,
                           double value, std::string provenance) {
  const double tol = 1e-12 * std::max(1.0, std::abs(value));
  return ResultRow{std::move(sweep), std::move(quantity), value, value - tol, value + tol,
                   std::move(provenance)};
}

inline ResultRow band_row(std::map<std::string, std::string> sweep, std::string quantity,
                          double value, double lo, double hi, std::string provenance) {
  return ResultRow{std::move(sweep), std::move(quantity), value, lo, hi, std::move(provenance)};
}

inline std::vector<PhaseVector> grid_candidates(int dims, int per_dim) {
  if (dims <= 0) return {};
  if (per_dim < 2) throw ConfigError("candidates_per_dim must be >= 2");
  std::vector<PhaseVector> out;
  std::vector<int> idx(dims, 0);
  while (true) {
    std::vector<double> values(dims);
    for (int k = 0; k < dims; ++k) values[k] = -kPi + idx[k] * (kTwoPi / per_dim);
    out.emplace_back(std::move(values));
    int k = dims - 1;
    while (k >= 0 && ++idx[k] == per_dim) idx[k--] = 0;
    if (k < 0) break;
  }
  return out;
}

inline ResultTable run_scaling_laws(const ScenarioConfig& config, const ScalingLawsParams& sp) {
  ResultTable table{config.name, config_hash(config.canonical), {}};
  for (int d : sp.dims) {
    for (double energy : sp.energies) {
      std::map<std::string, std::string> sweep{{"d", std::to_string(d)},
                                               {"nbar", format_double(energy)}};
      const double coherent = scaling_table(ScalingFamily::CoherentEqual, d, energy);
      const double separate = scaling_table(ScalingFamily::SeparateNoon, d, energy);
      const double optimal = scaling_table(ScalingFamily::GeneralizedNoonOptimal, d, energy);
      table.rows.push_back(exact_row(sweep, "coherent_equal", coherent, "closed_form"));
      table.rows.push_back(exact_row(sweep, "separate_noon", separate, "closed_form"));
      table.rows.push_back(exact_row(sweep, "generalized_noon_optimal", optimal, "closed_form"));
      table.rows.push_back(
          exact_row(sweep, "simultaneous_sequential_ratio", optimal / separate, "closed_form"));
    }
  }
  return table;
}

inline ResultTable run_hong_benchmark(const ScenarioConfig& config,
                                      const HongBenchmarkParams& hp) {
  ResultTable table{config.name, config_hash(config.canonical), {}};
  const CostMatrix identity = CostMatrix::identity(hp.d);
  const double uniform_alpha = static_cast<double>(hp.d) / (hp.d + 1);
  const FockState uniform =
      make_generalized_noon(GeneralizedNoonSpec(hp.d, hp.photons, uniform_alpha));
  table.rows.push_back(exact_row({{"weight", "uniform"}}, "trace_qcrb",
                                 weighted_bound(qfi_matrix(uniform), identity), "matrix_route"));
  const double alpha = optimal_alpha_sq(hp.d);
  const FockState optimal = make_generalized_noon(GeneralizedNoonSpec(hp.d, hp.photons, alpha));
  table.rows.push_back(exact_row({{"weight", "optimal"}}, "trace_qcrb",
                                 weighted_bound(qfi_matrix(optimal), identity), "matrix_route"));
  table.rows.push_back(exact_row({{"weight", "optimal"}}, "optimal_alpha_sq", alpha,
                                 "closed_form"));
  return table;
}

inline ResultTable run_coherent_references(const ScenarioConfig& config,
                                           const CoherentReferencesParams& cp) {
  ResultTable table{config.name, config_hash(config.canonical), {}};
  const CostMatrix identity = CostMatrix::identity(cp.d);
  const std::vector<double> energies(cp.d, cp.probe_energy / cp.d);
  const auto bound = [&](ReferenceLayout layout) {
    const CoherentBenchmark bench(energies, layout, cp.reference_energy);
    return weighted_bound(coherent_qfi_matrix(bench), identity);
  };
  table.rows.push_back(exact_row({{"reference", "infinite"}}, "trace_bound",
                                 bound(ReferenceLayout::Infinite), "matrix_route"));
  table.rows.push_back(exact_row({{"reference", "separate"}}, "trace_bound",
                                 bound(ReferenceLayout::SeparateReferences), "matrix_route"));
  table.rows.push_back(exact_row({{"reference", "single"}}, "trace_bound",
                                 bound(ReferenceLayout::SingleReference), "matrix_route"));
  return table;
}

inline ResultTable run_povm_saturation(const ScenarioConfig& config,
                                       const PovmSaturationParams& pp) {
  ResultTable table{config.name, config_hash(config.canonical), {}};
  const Povm printed = optimal_povm(pp.d);
  double completeness = 0.0;
  {
    Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(printed.dim(), printed.dim());
    for (const auto& e : printed.elements()) sum += e;
    completeness =
        (sum - Eigen::MatrixXcd::Identity(printed.dim(), printed.dim())).cwiseAbs().maxCoeff();
  }
  double orthonormality = 0.0;
  for (int i = 0; i < printed.outcome_count(); ++i)
    for (int j = 0; j < printed.outcome_count(); ++j) {
      const Eigen::MatrixXcd prod = printed.elements()[i] * printed.elements()[j];
      const Eigen::MatrixXcd expected =
          i == j ? printed.elements()[i] : Eigen::MatrixXcd::Zero(printed.dim(), printed.dim());
      orthonormality = std::max(orthonormality, (prod - expected).cwiseAbs().maxCoeff());
    }
  table.rows.push_back(band_row({}, "completeness_defect", completeness, 0.0, 1e-12, "numeric"));
  table.rows.push_back(
      band_row({}, "orthonormality_defect", orthonormality, 0.0, 1e-12, "numeric"));

  const FockState probe =
      make_generalized_noon(GeneralizedNoonSpec(pp.d, pp.photons, optimal_alpha_sq(pp.d)));
  const InfoMatrix qfi = qfi_matrix(probe);
  const SaturationResult sat = find_saturation_point(probe, optimal_povm(pp.d, probe), qfi);
  table.rows.push_back(band_row({}, "fi_qfi_gap_at_saturation", sat.gap, 0.0, 1e-6, "numeric"));
  table.rows.push_back(exact_row({}, "saturation_phase_scale",
                                 sat.phases.size() ? sat.phases[0] : 0.0, "numeric"));
  return table;
}

inline ResultTable run_smc_convergence(const ScenarioConfig& config,
                                       const SmcConvergenceParams& mp) {
  const FockState input = FockState::basis(OccupationVector(mp.input_occupation));
  const ProbabilityModel model = interferometer_model(mp.circuit, input, mp.visibility);

  EstimationScenario scenario;
  scenario.model = model;
  scenario.unknown_dims = mp.unknowns;
  scenario.control_dims = mp.controls;
  scenario.truth = PhaseVector(mp.truth);
  scenario.fixed_controls = PhaseVector(mp.fixed_controls);
  scenario.estimator = EstimatorKind::SequentialMonteCarlo;
  scenario.adaptive = mp.adaptive;
  if (mp.adaptive) scenario.control_candidates = grid_candidates(mp.controls, mp.candidates_per_dim);
  scenario.repetitions = mp.repetitions;
  scenario.particle_count = mp.particles;

  ResultTable table{config.name, config_hash(config.canonical), {}};
  std::vector<double> mean_trace(mp.repetitions, 0.0);
  double crb_reference = 0.0;
  Rng root(config.seed);
  for (int run = 0; run < mp.runs; ++run) {
    scenario.seed = root.split(run).seed();
    const std::vector<EstimationRecord> records = run_estimation(scenario);
    for (int nu = 0; nu < mp.repetitions; ++nu)
      mean_trace[nu] += records[nu].covariance.trace() / mp.runs;
    crb_reference = records.back().crb_trace.value() * records.back().step;
  }
  for (std::size_t c = 0; c < mp.checkpoints.size(); ++c) {
    std::map<std::string, std::string> sweep{{"nu", std::to_string(mp.checkpoints[c])}};
    table.rows.push_back(
        exact_row(sweep, "mean_cov_trace", mean_trace[mp.checkpoints[c] - 1], "simulation"));
    table.rows.push_back(exact_row(sweep, "crb_trace", crb_reference / mp.checkpoints[c],
                                   "reference"));
  }
  // exponential-approach constant of the mean convergence curve
  if (const std::optional<double> tau = fit_convergence_rate(mean_trace, crb_reference))
    table.rows.push_back(exact_row({}, "tau_fit", *tau, "fit"));
  return table;
}

}  // namespace detail

inline ResultTable run_scenario(const ScenarioConfig& config) {
  if (const auto* sp = std::get_if<ScalingLawsParams>(&config.params))
    return detail::run_scaling_laws(config, *sp);
  if (const auto* hp = std::get_if<HongBenchmarkParams>(&config.params))
    return detail::run_hong_benchmark(config, *hp);
  if (const auto* cp = std::get_if<CoherentReferencesParams>(&config.params))
    return detail::run_coherent_references(config, *cp);
  if (const auto* pp = std::get_if<PovmSaturationParams>(&config.params))
    return detail::run_povm_saturation(config, *pp);
  if (const auto* mp = std::get_if<SmcConvergenceParams>(&config.params))
    return detail::run_smc_convergence(config, *mp);
  throw ConfigError("run_scenario: unhandled scenario family");
}

// --- Emission ---------------------------------------------------------------

inline const char* kCsvHeader = "scenario,config_hash,sweep,quantity,value,tol_lo,tol_hi,provenance";

inline std::string csv_row(const ResultTable& table, const ResultRow& row) {
  return table.scenario + "," + table.config_hash + "," + format_sweep(row.sweep) + "," +
         row.quantity + "," + format_double(row.value) + "," + format_double(row.tol_lo) + "," +
         format_double(row.tol_hi) + "," + row.provenance;
}

// The deterministic portion of the CSV: everything but the timestamp header.
inline std::vector<std::string> csv_data_rows(const ResultTable& table) {
  std::vector<std::string> rows;
  rows.reserve(table.rows.size());
  for (const auto& row : table.rows) rows.push_back(csv_row(table, row));
  return rows;
}

inline std::string now_utc_iso8601() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return std::string(buf);
}

inline void write_csv(const ResultTable& table, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << "# multiphase result v1\n";
  out << "# generated: " << now_utc_iso8601() << "\n";  // only nondeterministic line
  out << "# scenario: " << table.scenario << "\n";
  out << "# config_hash: " << table.config_hash << "\n";
  out << kCsvHeader << "\n";
  for (const auto& row : csv_data_rows(table)) out << row << "\n";
}

inline json row_to_json(const ResultTable& table, const ResultRow& row) {
  json sweep = json::object();
  for (const auto& [k, v] : row.sweep) sweep[k] = v;
  return json{{"scenario", table.scenario}, {"config_hash", table.config_hash},
              {"sweep", sweep},             {"quantity", row.quantity},
              {"value", row.value},         {"tol_lo", row.tol_lo},
              {"tol_hi", row.tol_hi},       {"provenance", row.provenance}};
}

inline void write_jsonl(const ResultTable& table, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& row : table.rows) out << row_to_json(table, row).dump() << "\n";
}

// --- EstimationRecord streams -------------------------------------------------

inline const char* kRecordCsvHeader =
    "step,estimate,covariance,controls,utility,crb_trace,qcrb_trace,multimodal";

namespace detail {

inline std::string join_values(const std::vector<double>& values) {
  std::string out;
  for (double v : values) {
    if (!out.empty()) out += ";";
    out += format_double(v);
  }
  return out;
}

inline std::vector<double> flatten(const Eigen::MatrixXd& m) {
  std::vector<double> out;
  out.reserve(m.size());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

}  // namespace detail

inline std::string record_csv_row(const EstimationRecord& rec) {
  return std::to_string(rec.step) + "," + detail::join_values(rec.estimate.values()) + "," +
         detail::join_values(detail::flatten(rec.covariance)) + "," +
         detail::join_values(rec.controls.values()) + "," + format_double(rec.utility) + "," +
         (rec.crb_trace ? format_double(*rec.crb_trace) : "") + "," +
         (rec.qcrb_trace ? format_double(*rec.qcrb_trace) : "") + "," +
         (rec.multimodal ? "1" : "0");
}

inline void write_records_csv(const std::vector<EstimationRecord>& records,
                              const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << kRecordCsvHeader << "\n";
  for (const auto& rec : records) out << record_csv_row(rec) << "\n";
}

inline json record_to_json(const EstimationRecord& rec) {
  json j{{"step", rec.step},
         {"estimate", rec.estimate.values()},
         {"covariance", detail::flatten(rec.covariance)},
         {"controls", rec.controls.values()},
         {"utility", rec.utility},
         {"multimodal", rec.multimodal}};
  if (rec.crb_trace) j["crb_trace"] = *rec.crb_trace;
  if (rec.qcrb_trace) j["qcrb_trace"] = *rec.qcrb_trace;
  return j;
}

inline void write_records_jsonl(const std::vector<EstimationRecord>& records,
                                const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  for (const auto& rec : records) out << record_to_json(rec).dump() << "\n";
}

// --- Fixture verification -----------------------------------------------------

struct GoldenRow {
  std::string scenario, config_hash, sweep, quantity, provenance;
  double value = 0.0, tol_lo = 0.0, tol_hi = 0.0;
};

inline std::vector<GoldenRow> parse_result_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::vector<GoldenRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kCsvHeader)
        throw std::runtime_error(file.string() + ": unexpected CSV header");
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != 8)
      throw std::runtime_error(file.string() + ": malformed row: " + line);
    GoldenRow row;
    row.scenario = fields[0];
    row.config_hash = fields[1];
    row.sweep = fields[2];
    row.quantity = fields[3];
    row.value = std::stod(fields[4]);
    row.tol_lo = std::stod(fields[5]);
    row.tol_hi = std::stod(fields[6]);
    row.provenance = fields[7];
    rows.push_back(std::move(row));
  }
  return rows;
}

struct FixtureResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<FixtureResult> fixtures;
  bool all_passed() const {
    for (const auto& f : fixtures)
      if (!f.passed) return false;
    return !fixtures.empty();
  }
};

// Rerun every fixture config in `dir` and compare against its golden CSV
// within the declared tolerance bands (closed intervals).
inline VerifyReport verify_fixtures(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw ConfigError("fixture directory not found: " + dir.string());
  std::vector<std::filesystem::path> configs;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".json") configs.push_back(entry.path());
  std::sort(configs.begin(), configs.end());
  if (configs.empty())
    throw ConfigError("fixture directory contains no fixture configs: " + dir.string());

  VerifyReport report;
  for (const auto& config_path : configs) {
    FixtureResult result;
    result.name = config_path.stem().string();
    std::filesystem::path golden_path = config_path;
    golden_path.replace_extension(".csv");
    try {
      if (!std::filesystem::exists(golden_path))
        throw std::runtime_error("missing golden table " + golden_path.string());
      const ScenarioConfig config = load_scenario_config(config_path);
      const ResultTable rerun = run_scenario(config);
      const std::vector<GoldenRow> golden = parse_result_csv(golden_path);
      if (golden.size() != rerun.rows.size())
        throw std::runtime_error("row count changed: golden " + std::to_string(golden.size()) +
                                 ", rerun " + std::to_string(rerun.rows.size()));
      for (std::size_t i = 0; i < golden.size(); ++i) {
        const GoldenRow& g = golden[i];
        const ResultRow& r = rerun.rows[i];
        const std::string where = "row " + std::to_string(i) + " (" + g.quantity + ")";
        if (g.config_hash != rerun.config_hash)
          throw std::runtime_error(where + ": config hash changed");
        if (g.quantity != r.quantity || g.sweep != format_sweep(r.sweep) ||
            g.provenance != r.provenance)
          throw std::runtime_error(where + ": row identity changed");
        if (r.value < g.tol_lo || r.value > g.tol_hi)
          throw std::runtime_error(where + ": value " + format_double(r.value) +
                                   " outside golden band [" + format_double(g.tol_lo) + ", " +
                                   format_double(g.tol_hi) + "]");
      }
      result.passed = true;
      result.detail = std::to_string(golden.size()) + " rows within bands";
    } catch (const std::exception& e) {
      result.passed = false;
      result.detail = e.what();
    }
    report.fixtures.push_back(std::move(result));
  }
  return report;
}

}  // namespace multiphase

