// Acceptance suite: every release criterion as one pass/fail line, tolerances
// pinned in code. Returns the number of failed criteria.

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "multiphase/circuits.hpp"
#include "multiphase/estimate.hpp"
#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"
#include "multiphase/povm.hpp"
#include "multiphase/probes.hpp"
#include "multiphase/scenario.hpp"
#include "support/helpers.hpp"

using namespace multiphase;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& what) {
  if (!condition) throw Failure(what);
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(6);
  ss << v;
  return ss.str();
}

// --- 1: Hong-benchmark trace values -----------------------------------------

std::string hong_benchmark_values() {
  const CostMatrix identity = CostMatrix::identity(3);
  const double uniform =
      weighted_bound(qfi_matrix(make_generalized_noon(GeneralizedNoonSpec(3, 2, 0.75))), identity);
  require(std::abs(uniform - 1.5) <= 1e-10,
          "uniform trace " + fmt(uniform) + " != 1.5 within 1e-10");
  const double optimal = weighted_bound(
      qfi_matrix(make_generalized_noon(GeneralizedNoonSpec(3, 2, optimal_alpha_sq(3)))), identity);
  require(optimal >= 1.399 && optimal <= 1.400,
          "optimal trace " + fmt(optimal) + " outside [1.399, 1.400]");
  const double closed_form = 3.0 * std::pow(std::sqrt(3.0) + 1.0, 2) / 16.0;
  require(std::abs(optimal - closed_form) <= 1e-10, "optimal trace != d(sqrt(d)+1)^2/4N^2");
  return "uniform 1.5, optimal " + fmt(optimal);
}

// --- 2: scaling laws ---------------------------------------------------------

std::string scaling_laws() {
  for (int d = 1; d <= 6; ++d) {
    for (double energy : {1.0, 2.0, 4.0, 8.0}) {
      const double dd = d;
      const double coherent = scaling_table(ScalingFamily::CoherentEqual, d, energy);
      const double separate = scaling_table(ScalingFamily::SeparateNoon, d, energy);
      const double simultaneous = scaling_table(ScalingFamily::GeneralizedNoonOptimal, d, energy);
      require(std::abs(coherent - dd * dd / (4.0 * energy)) <= 1e-12, "coherent bound mismatch");
      require(std::abs(separate - dd * dd * dd / (4.0 * energy * energy)) <= 1e-12,
              "separate NOON bound mismatch");
      require(std::abs(simultaneous - dd * dd / (4.0 * energy * energy)) <= 1e-12,
              "generalized NOON bound mismatch");
      require(std::abs(simultaneous / separate - 1.0 / dd) <= 1e-12,
              "simultaneous/sequential ratio != 1/d");

      // matrix-route corroboration for the coherent benchmark
      const CoherentBenchmark bench(std::vector<double>(d, energy / d),
                                    ReferenceLayout::Infinite);
      const double matrix_route =
          weighted_bound(coherent_qfi_matrix(bench), CostMatrix::identity(d));
      require(std::abs(matrix_route - coherent) <= 1e-12, "coherent matrix route mismatch");
    }
  }
  return "d in 1..6, nbar in {1,2,4,8}, ratio 1/d exact";
}

// --- 3: QFI oracle equivalence ----------------------------------------------

std::string qfi_oracle_equivalence() {
  Rng rng(20260808);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int modes = 2 + static_cast<int>(rng.uniform() * 4);  // 2..5 modes
    const FockState state = test_support::random_fock_state(rng, modes, 4, 6);
    const int d = modes - 1;
    Eigen::MatrixXd brute(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        brute(i, j) = 4.0 * number_covariance(state, i + 1, j + 1);
    const double diff = test_support::max_abs_diff(qfi_matrix(state).entries(), brute);
    worst = std::max(worst, diff);
    require(diff <= 1e-10, "analytic vs brute-force QFI differ by " + fmt(diff));
  }
  return "100 random probes, worst deviation " + fmt(worst);
}

// --- 4: optimal POVM ----------------------------------------------------------

std::string optimal_povm_criterion() {
  Rng rng(31337);
  std::string note;
  for (int d = 1; d <= 6; ++d) {
    const Povm printed = optimal_povm(d);
    Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(d + 1, d + 1);
    for (const auto& e : printed.elements()) sum += e;
    require((sum - Eigen::MatrixXcd::Identity(d + 1, d + 1)).cwiseAbs().maxCoeff() <= 1e-12,
            "completeness defect above 1e-12 at d=" + std::to_string(d));
    for (int i = 0; i <= d; ++i)
      for (int j = 0; j <= d; ++j) {
        const Eigen::MatrixXcd prod = printed.elements()[i] * printed.elements()[j];
        const Eigen::MatrixXcd expected =
            i == j ? printed.elements()[i]
                   : Eigen::MatrixXcd::Zero(d + 1, d + 1).eval();
        require((prod - expected).cwiseAbs().maxCoeff() <= 1e-12,
                "orthonormality defect above 1e-12 at d=" + std::to_string(d));
      }

    // optimal generalized NOON probe with its probe-adapted projective basis
    const FockState probe = make_generalized_noon(GeneralizedNoonSpec(d, 2, optimal_alpha_sq(d)));
    const InfoMatrix qfi = qfi_matrix(probe);
    const Povm adapted = optimal_povm(d, probe);
    const ProbabilityModel model = measurement_model(probe, adapted);
    for (int trial = 0; trial < 100; ++trial) {
      const PhaseVector phi = test_support::random_phases(rng, d);
      const InfoMatrix fi = fi_matrix(model, phi, 1e-5).matrix;
      require(test_support::min_eigenvalue(qfi.entries() - fi.entries()) >= -1e-8,
              "FI exceeds QFI at a random phase, d=" + std::to_string(d));
    }
    const SaturationResult sat = find_saturation_point(probe, adapted, qfi);
    require(sat.saturated && sat.gap <= 1e-6,
            "no saturation point found at d=" + std::to_string(d) + " (best gap " +
                fmt(sat.gap) + ")");
    if (d == 3)
      note = "saturation at phi = " + fmt(sat.phases[0]) + " * ones, gap " + fmt(sat.gap);
  }
  return "d in 1..6 complete/orthonormal; FI <= QFI; " + note;
}

// --- 5: two-photon circuit physics -------------------------------------------

std::string two_photon_circuits() {
  CircuitSpec hom;
  hom.mode_count = 2;
  hom.layers.push_back(BeamSplitterElement{0, 1, 0.5});
  const FockState pair = FockState::basis(OccupationVector({1, 1}));
  const PhaseVector none = PhaseVector::zeros(0);
  const int coincidence = 1;  // outcome order (2,0), (1,1), (0,2)

  const double v1 = evaluate(interferometer_model(hom, pair, 1.0), none)[coincidence];
  require(std::abs(v1 - 0.0) <= 1e-12, "HOM coincidence at V=1 is " + fmt(v1));
  const double v0 = evaluate(interferometer_model(hom, pair, 0.0), none)[coincidence];
  require(std::abs(v0 - 0.5) <= 1e-12, "HOM coincidence at V=0 is " + fmt(v0));
  const double v95 = evaluate(interferometer_model(hom, pair, 0.95), none)[coincidence];
  require(std::abs(v95 - 0.025) <= 1e-12, "HOM coincidence at V=0.95 is " + fmt(v95));

  Rng rng(271828);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXcd g(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) g(i, j) = complexd(rng.gaussian(), rng.gaussian());
    const ModeUnitary u{
        Eigen::MatrixXcd(Eigen::HouseholderQR<Eigen::MatrixXcd>(g).householderQ())};
    std::vector<std::pair<OccupationVector, complexd>> terms;
    for (const auto& occ : enumerate_occupations(3, 2))
      terms.emplace_back(occ, complexd(rng.gaussian(), rng.gaussian()));
    double norm = 0.0;
    for (auto& [occ, amp] : terms) norm += std::norm(amp);
    for (auto& [occ, amp] : terms) amp /= std::sqrt(norm);
    const FockState input = FockState::superposition(3, terms);
    const double diff = test_support::max_amplitude_diff(
        test_support::dense_evolution_oracle(u.matrix(), input), fock_evolve(u, input));
    worst = std::max(worst, diff);
    require(diff <= 1e-10, "permanent vs dense oracle differ by " + fmt(diff));
  }
  return "HOM 0 / 0.5 / 0.025 exact; 50 oracle cases, worst " + fmt(worst);
}

// --- 6: estimator statistical validity ----------------------------------------

std::string estimator_validity() {
  const CircuitSpec circuit = two_tritter_circuit();
  const ProbabilityModel model =
      interferometer_model(circuit, FockState::basis(OccupationVector({1, 1, 0})), 1.0);
  const PhaseVector truth({0.7, -0.3});
  const int runs = 50;

  EstimationScenario base;
  base.model = model;
  base.unknown_dims = 2;
  base.control_dims = 2;
  base.truth = truth;
  base.fixed_controls = PhaseVector::zeros(2);

  // (a) MLE with 1e4 shots lands within 3 sigma_CRB of the truth in >= 47 runs
  int mle_hits = 0;
  {
    EstimationScenario sc = base;
    sc.estimator = EstimatorKind::MaximumLikelihood;
    sc.repetitions = 10000;
    sc.mle_grid_resolution = 64;
    Rng seeds(42);
    double sigma_crb = 0.0;
    for (int run = 0; run < runs; ++run) {
      sc.seed = seeds.next();
      const auto records = run_estimation(sc);
      sigma_crb = std::sqrt(records.back().crb_trace.value());
      double err_sq = 0.0;
      for (int k = 0; k < 2; ++k) {
        const double delta = wrap_phase(records.back().estimate[k] - truth[k]);
        err_sq += delta * delta;
      }
      if (std::sqrt(err_sq) <= 3.0 * sigma_crb) ++mle_hits;
    }
    require(mle_hits >= 47, "MLE within 3 sigma_CRB in only " + std::to_string(mle_hits) +
                                "/50 runs (sigma_CRB " + fmt(sigma_crb) + ")");
  }

  // (b) adaptive SMC reaches 1.5 x Tr(F^-1)/nu by nu = 100 in >= 40 runs and
  //     strictly beats fixed controls in mean final Tr(Cov);
  // (c) no run's nu Tr(V) undercuts Tr(F^-1) by more than 3 standard errors
  int adaptive_hits = 0;
  double adaptive_mean = 0.0, fixed_mean = 0.0;
  std::vector<double> scaled_traces;
  double crb_reference = 0.0;
  {
    EstimationScenario sc = base;
    sc.estimator = EstimatorKind::SequentialMonteCarlo;
    sc.repetitions = 100;
    sc.particle_count = 1000;
    sc.adaptive = true;
    sc.control_candidates = detail::grid_candidates(2, 4);
    Rng seeds(4242);
    for (int run = 0; run < runs; ++run) {
      sc.seed = seeds.next();
      const auto records = run_estimation(sc);
      const double trace = records.back().covariance.trace();
      crb_reference = records.back().crb_trace.value() * sc.repetitions;  // Tr(F^-1)
      if (trace <= 1.5 * records.back().crb_trace.value()) ++adaptive_hits;
      adaptive_mean += trace / runs;
      scaled_traces.push_back(sc.repetitions * trace);
    }
    sc.adaptive = false;
    sc.control_candidates.clear();
    Rng fixed_seeds(4242);
    int fixed_hits = 0;
    for (int run = 0; run < runs; ++run) {
      sc.seed = fixed_seeds.next();
      const auto records = run_estimation(sc);
      const double trace = records.back().covariance.trace();
      if (trace <= 1.5 * records.back().crb_trace.value()) ++fixed_hits;
      fixed_mean += trace / runs;
      scaled_traces.push_back(sc.repetitions * trace);
    }
    require(adaptive_hits >= 40, "adaptive SMC met 1.5x CRB in only " +
                                     std::to_string(adaptive_hits) + "/50 runs");
    require(adaptive_mean < fixed_mean,
            "adaptive mean Tr(Cov) " + fmt(adaptive_mean) + " not below fixed " + fmt(fixed_mean));
    require(fixed_hits < adaptive_hits, "fixed controls passed 1.5x CRB in " +
                                            std::to_string(fixed_hits) +
                                            " runs, not strictly fewer than adaptive");
    const double se = std::sqrt(test_support::variance(scaled_traces));
    for (double scaled : scaled_traces)
      require(scaled >= crb_reference - 3.0 * se,
              "a run's nu Tr(V) = " + fmt(scaled) + " undercuts Tr(F^-1) = " +
                  fmt(crb_reference) + " by more than 3 SE (" + fmt(se) + ")");
  }
  return "MLE " + std::to_string(mle_hits) + "/50; adaptive " + std::to_string(adaptive_hits) +
         "/50 at 1.5x CRB, mean " + fmt(adaptive_mean) + " vs fixed " + fmt(fixed_mean);
}

// --- 7: empirical FI -----------------------------------------------------------

std::string empirical_fi_criterion() {
  const ProbabilityModel model{2, 1, [](const PhaseVector& phi) {
                                 const double c = std::cos(phi[0] / 2.0);
                                 const double s = std::sin(phi[0] / 2.0);
                                 return std::vector<double>{c * c, s * s};
                               }};
  const PhaseVector phi({kPi / 3.0});
  const double step = 0.05;

  FrequencyTable exact(1, 2);
  exact.set_center(evaluate(model, phi));
  exact.set_offset(0, +1, evaluate(model, phi.shifted(0, step)));
  exact.set_offset(0, -1, evaluate(model, phi.shifted(0, -step)));
  const double plug_in = empirical_fi(exact, step, 1.0).matrix(0, 0);
  const double direct = fi_matrix(model, phi, step).matrix(0, 0);
  require(std::abs(plug_in - direct) <= 1e-10, "plug-in consistency violated");

  Rng rng(777);
  const int samples = 1000000;
  auto sampled = [&](const PhaseVector& at) {
    const std::vector<double> p = evaluate(model, at);
    std::vector<double> counts(2, 0.0);
    for (int s = 0; s < samples; ++s) counts[rng.uniform() < p[0] ? 0 : 1] += 1.0;
    return counts;
  };
  FrequencyTable table(1, 2);
  table.set_center(sampled(phi));
  table.set_offset(0, +1, sampled(phi.shifted(0, step)));
  table.set_offset(0, -1, sampled(phi.shifted(0, -step)));
  const double estimate = empirical_fi(table, step, samples).matrix(0, 0);
  require(std::abs(estimate - 1.0) <= 0.05,
          "empirical FI " + fmt(estimate) + " outside 5% of 1");
  return "empirical " + fmt(estimate) + ", plug-in gap " + fmt(std::abs(plug_in - direct));
}

// --- 8: determinism --------------------------------------------------------------

std::string determinism() {
  const std::filesystem::path fixtures = MULTIPHASE_FIXTURES_DIR;
  int configs = 0;
  for (const auto& entry : std::filesystem::directory_iterator(fixtures)) {
    if (entry.path().extension() != ".json") continue;
    ++configs;
    const ScenarioConfig config = load_scenario_config(entry.path());
    const auto rows_a = csv_data_rows(run_scenario(config));
    const auto rows_b = csv_data_rows(run_scenario(config));
    require(rows_a == rows_b,
            "rerun of " + entry.path().stem().string() + " changed data rows");
  }
  require(configs > 0, "no fixture configs found");
  return std::to_string(configs) + " fixture configs byte-identical on rerun";
}

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;
  std::function<std::string()> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "Hong-benchmark trace values", 1.0, hong_benchmark_values},
      {2, "scaling laws and 1/d ratio", 1.0, scaling_laws},
      {3, "QFI oracle equivalence", 10.0, qfi_oracle_equivalence},
      {4, "optimal POVM completeness and saturation", 30.0, optimal_povm_criterion},
      {5, "two-photon circuit physics", 10.0, two_photon_circuits},
      {6, "estimator statistical validity", 300.0, estimator_validity},
      {7, "empirical Fisher information", 30.0, empirical_fi_criterion},
      {8, "fixture determinism", 120.0, determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool passed = true;
    try {
      detail = criterion.body();
    } catch (const std::exception& e) {
      passed = false;
      detail = e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (passed && elapsed > criterion.time_limit_s) {
      passed = false;
      detail = "runtime " + fmt(elapsed) + "s exceeds " + fmt(criterion.time_limit_s) + "s";
    }
    std::cout << (passed ? "PASS" : "FAIL") << " criterion " << criterion.id << " ("
              << criterion.name << ", " << fmt(elapsed) << "s): " << detail << "\n";
    if (!passed) ++failures;
  }
  return failures;
}
