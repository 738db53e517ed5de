#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "multiphase/circuits.hpp"
#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"
#include "multiphase/povm.hpp"
#include "multiphase/probes.hpp"
#include "multiphase/scenario.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfigError = 2;

std::vector<double> parse_energy_list(const std::string& csv) {
  std::vector<double> values;
  std::stringstream ss(csv);
  std::string token;
  while (std::getline(ss, token, ',')) values.push_back(std::stod(token));
  return values;
}

void print_info_matrix(const multiphase::InfoMatrix& q) {
  std::cout << "QFI matrix (" << q.dim() << "x" << q.dim() << "):\n";
  for (int i = 0; i < q.dim(); ++i) {
    for (int j = 0; j < q.dim(); ++j)
      std::cout << (j ? " " : "  ") << multiphase::format_double(q(i, j));
    std::cout << "\n";
  }
  const auto inv = multiphase::inverse_bound(q);
  std::cout << "Tr(Q^-1) = " << multiphase::format_double(inv.matrix.trace());
  if (inv.singular) std::cout << "  (singular: bound valid on the supported subspace only)";
  std::cout << "\nper-phase variance bounds:";
  for (int i = 0; i < q.dim(); ++i)
    std::cout << " " << multiphase::format_double(inv.matrix(i, i));
  std::cout << "\n";
}

int run_command(const std::string& config_file, std::optional<std::uint64_t> seed_override,
                const std::string& out_dir, const std::string& format) {
  namespace fs = std::filesystem;
  multiphase::ScenarioConfig config = multiphase::load_scenario_config(config_file);
  if (seed_override) {
    config.seed = *seed_override;
    config.canonical["seed"] = *seed_override;
  }
  const multiphase::ResultTable table = multiphase::run_scenario(config);
  fs::create_directories(out_dir);
  if (format == "csv" || format == "both") {
    const fs::path csv = fs::path(out_dir) / config.csv_output.value_or(config.name + ".csv");
    multiphase::write_csv(table, csv);
    std::cout << "wrote " << csv.string() << "\n";
  }
  if (format == "jsonl" || format == "both") {
    const fs::path jsonl =
        fs::path(out_dir) / config.jsonl_output.value_or(config.name + ".jsonl");
    multiphase::write_jsonl(table, jsonl);
    std::cout << "wrote " << jsonl.string() << "\n";
  }
  std::cout << config.name << ": " << table.rows.size() << " rows, config_hash "
            << table.config_hash << "\n";
  return kExitOk;
}

int qfi_command(const std::string& probe, int photons, int d, double alpha_sq,
                bool use_optimal_alpha, const std::string& energies_csv,
                const std::string& layout_name, double reference_energy) {
  using namespace multiphase;
  if (probe == "noon") {
    print_info_matrix(qfi_matrix(make_noon(photons)));
  } else if (probe == "zero-n") {
    // Single-mode probe: the scalar QFI 4 Var(N) of the phase generator.
    const FockState state = make_zero_n_superposition(photons);
    const double q = 4.0 * number_covariance(state, 0, 0);
    std::cout << "QFI = " << format_double(q) << "\nVar bound = " << format_double(1.0 / q)
              << "\n";
  } else if (probe == "generalized-noon") {
    const double a = use_optimal_alpha ? optimal_alpha_sq(d) : alpha_sq;
    std::cout << "alpha_sq = " << format_double(a) << "\n";
    print_info_matrix(qfi_matrix(make_generalized_noon(GeneralizedNoonSpec(d, photons, a))));
  } else if (probe == "coherent") {
    ReferenceLayout layout;
    if (layout_name == "infinite")
      layout = ReferenceLayout::Infinite;
    else if (layout_name == "single")
      layout = ReferenceLayout::SingleReference;
    else if (layout_name == "separate")
      layout = ReferenceLayout::SeparateReferences;
    else
      throw ConfigError("--layout must be one of infinite, single, separate");
    const CoherentBenchmark bench(parse_energy_list(energies_csv), layout, reference_energy);
    print_info_matrix(coherent_qfi_matrix(bench));
  } else {
    throw ConfigError("--probe must be one of noon, zero-n, generalized-noon, coherent");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiphase: quantum multiphase estimation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::optional<std::uint64_t> seed_override;
  std::string out_dir = ".";
  std::string format = "both";
  app.add_option("--seed", seed_override, "override the config seed")->group("Global");
  app.add_option("--out-dir", out_dir, "output directory for result tables")->group("Global");
  app.add_option("--format", format, "output format")
      ->check(CLI::IsMember({"csv", "jsonl", "both"}))
      ->group("Global");

  auto* run = app.add_subcommand("run", "run a scenario config and emit result tables");
  std::string config_file;
  run->add_option("config", config_file, "scenario config (JSON)")->required();

  auto* verify = app.add_subcommand("verify", "rerun fixture configs against golden tables");
  std::string fixtures_dir;
  verify->add_option("fixtures", fixtures_dir, "fixture directory")->required();

  app.add_subcommand("list-scenarios", "list available scenario families");

  auto* qfi = app.add_subcommand("qfi", "one-shot quantum bound calculator for a probe");
  std::string probe = "noon";
  int photons = 2;
  int d = 1;
  double alpha_sq = 0.5;
  bool use_optimal_alpha = false;
  std::string energies_csv = "1.0";
  std::string layout_name = "infinite";
  double reference_energy = 1.0;
  qfi->add_option("--probe", probe, "noon | zero-n | generalized-noon | coherent");
  qfi->add_option("--photons", photons, "total photon number N");
  qfi->add_option("--d", d, "number of probing modes");
  qfi->add_option("--alpha-sq", alpha_sq, "generalized NOON probing weight |alpha|^2");
  qfi->add_flag("--optimal", use_optimal_alpha, "use the optimal |alpha|^2 = sqrt(d)/(1+sqrt(d))");
  qfi->add_option("--energies", energies_csv, "comma-separated coherent probe energies");
  qfi->add_option("--layout", layout_name, "coherent reference layout");
  qfi->add_option("--reference-energy", reference_energy, "total reference energy");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_command(config_file, seed_override, out_dir, format);
    if (verify->parsed()) {
      const multiphase::VerifyReport report = multiphase::verify_fixtures(fixtures_dir);
      for (const auto& fixture : report.fixtures)
        std::cout << (fixture.passed ? "PASS " : "FAIL ") << fixture.name << ": "
                  << fixture.detail << "\n";
      return report.all_passed() ? kExitOk : kExitFailure;
    }
    if (app.get_subcommand("list-scenarios")->parsed()) {
      for (const auto& info : multiphase::list_scenarios())
        std::cout << info.family << "\n    " << info.description << "\n";
      return kExitOk;
    }
    if (qfi->parsed())
      return qfi_command(probe, photons, d, alpha_sq, use_optimal_alpha, energies_csv,
                         layout_name, reference_energy);
  } catch (const multiphase::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}
