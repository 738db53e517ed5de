#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "multiphase/fock.hpp"

namespace multiphase {

inline constexpr double kSymmetryTol = 1e-12;
inline constexpr double kPsdEigTol = -1e-10;
inline constexpr double kPinvCutoff = 1e-10;   // relative singular-value threshold
inline constexpr double kFiDefaultStep = 1e-4; // rad, central differences
// Wider default for frequency-based estimates, where sampling noise has to be
// dominated by the genuine probability differences.
inline constexpr double kEmpiricalFiDefaultStep = 0.05;
inline constexpr double kProbFloor = 1e-12;    // outcomes below this are excluded from FI sums

// Symmetric positive-semidefinite d x d information matrix (FI or QFI).
class InfoMatrix {
 public:
  explicit InfoMatrix(Eigen::MatrixXd entries) : m_(std::move(entries)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw DimensionError("InfoMatrix: matrix must be square and non-empty");
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    if (asym > kSymmetryTol)
      throw std::invalid_argument("InfoMatrix: asymmetry " + std::to_string(asym) +
                                  " exceeds tolerance");
    m_ = ((m_ + m_.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < kPsdEigTol)
      throw std::invalid_argument("InfoMatrix: not positive semidefinite (min eigenvalue " +
                                  std::to_string(es.eigenvalues().minCoeff()) + ")");
  }

  static InfoMatrix diagonal(const std::vector<double>& diag) {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return InfoMatrix(std::move(m));
  }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& entries() const { return m_; }
  double operator()(int i, int j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

 private:
  Eigen::MatrixXd m_;
};

// Positive-semidefinite cost/weight matrix R for weighted Cramer-Rao bounds.
class CostMatrix {
 public:
  explicit CostMatrix(Eigen::MatrixXd entries) : m_(std::move(entries)) {
    if (m_.rows() != m_.cols() || m_.rows() < 1)
      throw DimensionError("CostMatrix: matrix must be square and non-empty");
    m_ = ((m_ + m_.transpose()) / 2.0).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m_, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < kPsdEigTol)
      throw std::invalid_argument("CostMatrix: not positive semidefinite");
  }

  static CostMatrix identity(int d) { return CostMatrix(Eigen::MatrixXd::Identity(d, d)); }
  static CostMatrix zero(int d) { return CostMatrix(Eigen::MatrixXd::Zero(d, d)); }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Eigen::MatrixXd& entries() const { return m_; }

 private:
  Eigen::MatrixXd m_;
};

// Outcome distribution p(n | phi). The callable must be pure and safe to
// evaluate concurrently.
struct ProbabilityModel {
  int outcome_count = 0;
  int phase_dim = 0;
  std::function<std::vector<double>(const PhaseVector&)> prob;
};

// Evaluate a model and enforce its normalization contract.
inline std::vector<double> evaluate(const ProbabilityModel& model, const PhaseVector& phases) {
  if (phases.size() != model.phase_dim)
    throw DimensionError("ProbabilityModel: expected " + std::to_string(model.phase_dim) +
                         " phases, got " + std::to_string(phases.size()));
  std::vector<double> p = model.prob(phases);
  if (static_cast<int>(p.size()) != model.outcome_count)
    throw std::runtime_error("ProbabilityModel: outcome count mismatch");
  double sum = 0.0;
  for (double& v : p) {
    if (v < 0.0) {
      if (v < -1e-12) throw std::runtime_error("ProbabilityModel: negative probability");
      v = 0.0;
    }
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-10)
    throw std::runtime_error("ProbabilityModel: probabilities sum to " + std::to_string(sum));
  return p;
}

// QFI matrix of a pure probe, Q_ij = 4 Re(<d_i psi|d_j psi> - <psi|d_i psi><d_j psi|psi>),
// computed through the generator route d_i|psi> = i N_i|psi>. The moment-based
// covariance in fock.hpp is the independent brute-force check of this.
inline InfoMatrix qfi_matrix(const FockState& state) {
  const int d = state.mode_count() - 1;
  if (d < 1)
    throw DimensionError("qfi_matrix: single-mode state has no probing modes");
  // D[i] holds the amplitudes of N_{i+1}|psi>.
  std::vector<FockState::AmplitudeMap> deriv(d);
  for (const auto& [occ, amp] : state.amplitudes()) {
    for (int i = 0; i < d; ++i) {
      if (occ[i + 1] != 0) deriv[i].emplace(occ, amp * static_cast<double>(occ[i + 1]));
    }
  }
  auto overlap = [](const FockState::AmplitudeMap& a, const FockState::AmplitudeMap& b) {
    complexd acc(0.0, 0.0);
    for (const auto& [occ, amp] : a) {
      auto it = b.find(occ);
      if (it != b.end()) acc += std::conj(amp) * it->second;
    }
    return acc;
  };
  std::vector<complexd> first(d);
  for (int i = 0; i < d; ++i) first[i] = overlap(state.amplitudes(), deriv[i]);
  Eigen::MatrixXd q(d, d);
  for (int i = 0; i < d; ++i) {
    for (int j = i; j < d; ++j) {
      const complexd g = overlap(deriv[i], deriv[j]);
      const double val = 4.0 * std::real(g - std::conj(first[i]) * first[j]);
      q(i, j) = val;
      q(j, i) = val;
    }
  }
  return InfoMatrix(std::move(q));
}

struct FisherEstimate {
  InfoMatrix matrix;
  // Set when an outcome with probability < 1e-12 still shows a finite-difference
  // derivative above 1e-6: the FI may genuinely diverge at this phase point.
  bool possibly_divergent = false;
};

// Classical FI matrix F_ij = sum_n p(n|phi) d_i ln p d_j ln p via central
// finite differences of width `step` per phase.
inline FisherEstimate fi_matrix(const ProbabilityModel& model, const PhaseVector& phases,
                                double step = kFiDefaultStep) {
  if (!(step > 0.0) || step > 0.1)
    throw std::invalid_argument("fi_matrix: step must be in (0, 0.1]");
  const int d = model.phase_dim;
  const std::vector<double> p0 = evaluate(model, phases);
  std::vector<std::vector<double>> grad(d);
  for (int i = 0; i < d; ++i) {
    const std::vector<double> pp = evaluate(model, phases.shifted(i, step));
    const std::vector<double> pm = evaluate(model, phases.shifted(i, -step));
    grad[i].resize(model.outcome_count);
    for (int n = 0; n < model.outcome_count; ++n)
      grad[i][n] = (pp[n] - pm[n]) / (2.0 * step);
  }
  bool divergent = false;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(d, d);
  for (int n = 0; n < model.outcome_count; ++n) {
    if (p0[n] < kProbFloor) {
      for (int i = 0; i < d; ++i)
        if (std::abs(grad[i][n]) > 1e-6) divergent = true;
      continue;
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) f(i, j) += grad[i][n] * grad[j][n] / p0[n];
  }
  return FisherEstimate{InfoMatrix(std::move(f)), divergent};
}

struct BoundInverse {
  InfoMatrix matrix;  // Moore-Penrose pseudoinverse
  // True when the smallest eigenvalue is below 1e-10 x the largest: the bound
  // applies only on the supported subspace.
  bool singular = false;
};

// V >= F^-1 >= Q^-1: pseudoinverse of an information matrix.
inline BoundInverse inverse_bound(const InfoMatrix& info) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info.entries());
  const Eigen::VectorXd& ev = es.eigenvalues();
  const double largest = ev.cwiseAbs().maxCoeff();
  const double cutoff = kPinvCutoff * largest;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  bool singular = false;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) > cutoff)
      inv(i) = 1.0 / ev(i);
    else
      singular = true;
  }
  if (largest == 0.0) singular = true;
  Eigen::MatrixXd pinv =
      es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  return BoundInverse{InfoMatrix(std::move(pinv)), singular};
}

// Tr(R . info^+), the weighted Cramer-Rao lower bound on Tr(R V). For QFI
// inputs the bound is attainable only up to a measurement-dependent factor
// f in [1, 2]; f itself is not computed here (it needs Holevo-bound
// machinery), so treat quantum bounds as tight within that factor.
inline double weighted_bound(const InfoMatrix& info, const CostMatrix& cost) {
  if (info.dim() != cost.dim())
    throw DimensionError("weighted_bound: dimension mismatch");
  return (cost.entries() * inverse_bound(info).matrix.entries()).trace();
}

enum class ScalingFamily { CoherentEqual, SeparateNoon, GeneralizedNoonOptimal };

// Closed-form Tr(V) lower bounds at total probing energy n:
//   coherent, equal energies     d^2 / 4n      (standard quantum limit)
//   d separate NOON states       d^3 / 4n^2
//   optimal generalized NOON     d^2 / 4n^2    (factor d below separate NOON)
inline double scaling_table(ScalingFamily family, int d, double energy) {
  if (d < 1) throw std::invalid_argument("scaling_table: d must be >= 1");
  if (!(energy > 0.0)) throw std::invalid_argument("scaling_table: energy must be positive");
  const double dd = static_cast<double>(d);
  switch (family) {
    case ScalingFamily::CoherentEqual:
      return dd * dd / (4.0 * energy);
    case ScalingFamily::SeparateNoon:
      return dd * dd * dd / (4.0 * energy * energy);
    case ScalingFamily::GeneralizedNoonOptimal:
      return dd * dd / (4.0 * energy * energy);
  }
  throw std::invalid_argument("scaling_table: unknown family");
}

// Outcome counts on the 2d+1 phase-grid settings {phi, phi +- step e_i} needed
// for a plug-in FI estimate. Counts may be fractional (exact probabilities in
// the infinite-sample limit are accepted as-is).
class FrequencyTable {
 public:
  FrequencyTable(int phase_dim, int outcome_count)
      : dim_(phase_dim), outcomes_(outcome_count),
        center_(), plus_(phase_dim), minus_(phase_dim) {
    if (phase_dim < 1 || outcome_count < 1)
      throw std::invalid_argument("FrequencyTable: bad dimensions");
  }

  void set_center(std::vector<double> counts) { center_ = checked(std::move(counts)); }
  void set_offset(int axis, int sign, std::vector<double> counts) {
    auto& slot = (sign > 0 ? plus_ : minus_).at(axis);
    slot = checked(std::move(counts));
  }

  int phase_dim() const { return dim_; }
  int outcome_count() const { return outcomes_; }
  const std::vector<double>& center() const { return require(center_, "center"); }
  const std::vector<double>& offset(int axis, int sign) const {
    return require((sign > 0 ? plus_ : minus_).at(axis),
                   std::string("offset axis ") + std::to_string(axis));
  }
  bool complete() const {
    if (center_.empty()) return false;
    for (int i = 0; i < dim_; ++i)
      if (plus_[i].empty() || minus_[i].empty()) return false;
    return true;
  }

 private:
  std::vector<double> checked(std::vector<double> counts) const {
    if (static_cast<int>(counts.size()) != outcomes_)
      throw DimensionError("FrequencyTable: counts length != outcome_count");
    double total = 0.0;
    for (double c : counts) {
      if (c < 0.0) throw std::invalid_argument("FrequencyTable: negative count");
      total += c;
    }
    if (total < 1.0 - 1e-12)
      throw std::invalid_argument("FrequencyTable: fewer than one count in a setting");
    return counts;
  }
  const std::vector<double>& require(const std::vector<double>& v, const std::string& what) const {
    if (v.empty()) throw std::invalid_argument("FrequencyTable: missing grid point: " + what);
    return v;
  }

  int dim_, outcomes_;
  std::vector<double> center_;
  std::vector<std::vector<double>> plus_, minus_;
};

// Plug-in FI estimate: observed frequencies replace probabilities, central
// differences over the grid replace derivatives. Outcomes with zero observed
// count at the center are excluded.
inline FisherEstimate empirical_fi(const FrequencyTable& freq, double step,
                                   double samples_per_setting) {
  if (!freq.complete())
    throw std::invalid_argument("empirical_fi: frequency table is missing grid points");
  if (!(step > 0.0)) throw std::invalid_argument("empirical_fi: step must be positive");
  if (!(samples_per_setting > 0.0))
    throw std::invalid_argument("empirical_fi: samples_per_setting must be positive");
  const int d = freq.phase_dim();
  const int k = freq.outcome_count();
  auto rate = [&](const std::vector<double>& counts, int n) {
    return counts[n] / samples_per_setting;
  };
  bool divergent = false;
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(d, d);
  for (int n = 0; n < k; ++n) {
    const double p = rate(freq.center(), n);
    std::vector<double> grad(d);
    for (int i = 0; i < d; ++i)
      grad[i] = (rate(freq.offset(i, +1), n) - rate(freq.offset(i, -1), n)) / (2.0 * step);
    if (p <= 0.0) {
      for (int i = 0; i < d; ++i)
        if (std::abs(grad[i]) > 1e-6) divergent = true;
      continue;
    }
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) f(i, j) += grad[i] * grad[j] / p;
  }
  return FisherEstimate{InfoMatrix(std::move(f)), divergent};
}

}  // namespace multiphase
