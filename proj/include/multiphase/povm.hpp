#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"
#include "multiphase/rng.hpp"

namespace multiphase {

// Finite measurement on the single-excitation subspace spanned by the kets
// |N_m> (all N photons in mode m, m = 0..d). Elements are Hermitian, PSD and
// sum to the identity; they need not be projectors, so larger POVM families
// fit behind the same type.
class Povm {
 public:
  Povm(int dim, std::vector<Eigen::MatrixXcd> elements)
      : dim_(dim), elements_(std::move(elements)) {
    if (dim_ < 1) throw std::invalid_argument("Povm: dimension must be >= 1");
    if (elements_.empty()) throw std::invalid_argument("Povm: no elements");
    Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(dim_, dim_);
    for (const auto& e : elements_) {
      if (e.rows() != dim_ || e.cols() != dim_)
        throw DimensionError("Povm: element dimension mismatch");
      if ((e - e.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
        throw std::invalid_argument("Povm: element not Hermitian");
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(e, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument("Povm: element not positive semidefinite");
      sum += e;
    }
    const double defect =
        (sum - Eigen::MatrixXcd::Identity(dim_, dim_)).cwiseAbs().maxCoeff();
    if (defect > 1e-10)
      throw std::invalid_argument("Povm: completeness defect " + std::to_string(defect));
  }

  int dim() const { return dim_; }
  int outcome_count() const { return static_cast<int>(elements_.size()); }
  const std::vector<Eigen::MatrixXcd>& elements() const { return elements_; }

 private:
  int dim_;
  std::vector<Eigen::MatrixXcd> elements_;
};

namespace detail {

// Orthonormal basis {v_0 = first; v_n supported on the index prefix 0..n with
// a negative last entry}. Each v_n is the unique unit vector of the prefix
// span orthogonal to the prefix truncations of all earlier vectors, found by
// Gram-Schmidt inside that span. For the uniform first vector this reproduces
// the closed-form coefficients 1/sqrt(n(n+1)), -n/sqrt(n(n+1)).
inline std::vector<Eigen::VectorXcd> prefix_orthonormal_basis(Eigen::VectorXcd first) {
  const int dim = static_cast<int>(first.size());
  std::vector<Eigen::VectorXcd> basis;
  first /= first.norm();
  basis.push_back(first);
  for (int n = 1; n < dim; ++n) {
    std::vector<Eigen::VectorXcd> constraints;
    for (const auto& b : basis) {
      Eigen::VectorXcd t = b.head(n + 1);
      for (const auto& u : constraints) t -= u.dot(t) * u;
      if (t.norm() > 1e-12) constraints.push_back(t / t.norm());
    }
    Eigen::VectorXcd v = Eigen::VectorXcd::Constant(n + 1, complexd(1.0, 0.0));
    v(n) = complexd(-1.0, 0.0);
    for (const auto& u : constraints) v -= u.dot(v) * u;
    double norm = v.norm();
    for (int j = 0; j <= n && norm < 1e-12; ++j) {
      // Degenerate seed; try bare coordinate vectors.
      v = Eigen::VectorXcd::Zero(n + 1);
      v(j) = complexd(1.0, 0.0);
      for (const auto& u : constraints) v -= u.dot(v) * u;
      norm = v.norm();
    }
    v /= norm;
    if (std::real(v(n)) > 0.0) v = -v;  // printed sign convention
    Eigen::VectorXcd full = Eigen::VectorXcd::Zero(dim);
    full.head(n + 1) = v;
    basis.push_back(full);
  }
  return basis;
}

inline std::vector<Eigen::MatrixXcd> projectors(const std::vector<Eigen::VectorXcd>& basis) {
  std::vector<Eigen::MatrixXcd> elems;
  elems.reserve(basis.size());
  for (const auto& v : basis) elems.push_back(v * v.adjoint());
  return elems;
}

}  // namespace detail

// The projective measurement for generalized NOON probes: rank-one projectors
// onto |Upsilon^(n)>, n = 0..d, with Upsilon^(0) uniform and, for n > 0,
// coefficients 1/sqrt(n(n+1)) on m <= n-1 and -n/sqrt(n(n+1)) on m = n.
inline Povm optimal_povm(int d) {
  if (d < 1) throw std::invalid_argument("optimal_povm: d must be >= 1");
  const int dim = d + 1;
  std::vector<Eigen::VectorXcd> basis;
  Eigen::VectorXcd uniform = Eigen::VectorXcd::Constant(dim, complexd(1.0 / std::sqrt(dim), 0.0));
  basis.push_back(uniform);
  for (int n = 1; n < dim; ++n) {
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(dim);
    const double off = 1.0 / std::sqrt(static_cast<double>(n) * (n + 1));
    for (int m = 0; m < n; ++m) v(m) = complexd(off, 0.0);
    v(n) = complexd(-n * off, 0.0);
    basis.push_back(v);
  }
  return Povm(dim, detail::projectors(basis));
}

// Coefficients of a state supported on the {|N_m>} subspace, indexed by the
// mode holding the photons. Throws when the support lies outside the subspace.
inline std::pair<int, Eigen::VectorXcd> noon_subspace_coefficients(const FockState& state) {
  const int modes = state.mode_count();
  int photons = -1;
  Eigen::VectorXcd coeff = Eigen::VectorXcd::Zero(modes);
  for (const auto& [occ, amp] : state.amplitudes()) {
    int mode = -1;
    for (int m = 0; m < modes; ++m) {
      if (occ[m] == 0) continue;
      if (mode != -1) throw std::invalid_argument("state support outside the |N_m> subspace");
      mode = m;
    }
    if (mode == -1)
      throw std::invalid_argument("state support outside the |N_m> subspace (vacuum term)");
    if (photons == -1) photons = occ[mode];
    if (occ[mode] != photons)
      throw std::invalid_argument("state support outside the |N_m> subspace (mixed N)");
    coeff(mode) = amp;
  }
  return {photons, coeff};
}

// Probe-adapted variant: the first basis vector is the probe itself, the rest
// complete it over index prefixes. Reduces to optimal_povm(d) for the uniform
// probe; this is the family whose FI reaches the QFI in the phi -> 0 limit
// for any generalized NOON probe.
inline Povm optimal_povm(int d, const FockState& probe) {
  if (d < 1) throw std::invalid_argument("optimal_povm: d must be >= 1");
  if (probe.mode_count() != d + 1)
    throw DimensionError("optimal_povm: probe must have d+1 modes");
  auto [photons, coeff] = noon_subspace_coefficients(probe);
  (void)photons;
  return Povm(d + 1, detail::projectors(detail::prefix_orthonormal_basis(coeff)));
}

// Born rule p(n | phi) = <psi_phi| Pi_n |psi_phi> on the |N_m> subspace.
inline std::vector<double> born_probabilities(const FockState& state, const Povm& povm,
                                              const PhaseVector& phases) {
  if (povm.dim() != state.mode_count())
    throw DimensionError("born_probabilities: POVM dimension != mode count");
  auto [photons, coeff] = noon_subspace_coefficients(state);
  if (phases.size() != state.mode_count() - 1)
    throw DimensionError("born_probabilities: phase count != probing modes");
  Eigen::VectorXcd v = coeff;
  for (int m = 1; m < state.mode_count(); ++m)
    v(m) *= std::polar(1.0, photons * phases[m - 1]);
  std::vector<double> p(povm.outcome_count());
  double sum = 0.0;
  for (int n = 0; n < povm.outcome_count(); ++n) {
    double val = std::real(v.dot(povm.elements()[n] * v));
    if (val < 0.0) {
      if (val < -1e-12)
        throw std::runtime_error("born_probabilities: probability " + std::to_string(val));
      val = 0.0;
    }
    p[n] = val;
    sum += val;
  }
  if (std::abs(sum - 1.0) > 1e-10)
    throw std::runtime_error("born_probabilities: probabilities sum to " + std::to_string(sum));
  return p;
}

// One simulated detection event; setting and seed are kept for replay.
struct OutcomeSample {
  int outcome_index = 0;
  PhaseVector setting;
  std::uint64_t seed_record = 0;
};

// i.i.d. draws from the Born distribution. Each shot uses its own child
// stream split off the call seed, so the sequence is deterministic no matter
// how shots are scheduled.
inline std::vector<OutcomeSample> sample_outcomes(const FockState& state, const Povm& povm,
                                                  const PhaseVector& phases, int shots,
                                                  std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("sample_outcomes: shots must be >= 1");
  const std::vector<double> p = born_probabilities(state, povm, phases);
  const Rng root(seed);
  std::vector<OutcomeSample> samples;
  samples.reserve(shots);
  for (int s = 0; s < shots; ++s) {
    Rng shot_rng = root.split(static_cast<std::uint64_t>(s));
    samples.push_back(OutcomeSample{shot_rng.categorical(p), phases, shot_rng.seed()});
  }
  return samples;
}

// Born-rule outcome distribution as a reusable ProbabilityModel.
inline ProbabilityModel measurement_model(FockState state, Povm povm) {
  const int outcomes = povm.outcome_count();
  const int dim = state.mode_count() - 1;
  return ProbabilityModel{
      outcomes, dim,
      [state = std::move(state), povm = std::move(povm)](const PhaseVector& phases) {
        return born_probabilities(state, povm, phases);
      }};
}

struct SaturationResult {
  PhaseVector phases;     // recorded saturation phase point
  double gap = 0.0;       // max |F - Q| entry there
  bool saturated = false; // gap <= tolerance
};

// Search for a phase point where the measurement's FI matrix reaches the QFI
// matrix. phi = 0 is tried first; exactly there the n >= 1 outcome
// probabilities of a probe-adapted basis vanish (a removable singularity where
// finite differences see no information), so the scan walks the uniform ray
// toward zero, where F approaches Q quadratically.
inline SaturationResult find_saturation_point(const FockState& probe, const Povm& povm,
                                              const InfoMatrix& qfi, double tolerance = 1e-6,
                                              double fd_step = 2e-5) {
  const int d = probe.mode_count() - 1;
  const ProbabilityModel model = measurement_model(probe, povm);
  std::vector<PhaseVector> candidates{PhaseVector::zeros(d)};
  for (double s : {0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 5e-4, 3e-4})
    candidates.emplace_back(std::vector<double>(d, s));
  SaturationResult best;
  best.gap = std::numeric_limits<double>::infinity();
  for (const auto& phi : candidates) {
    const InfoMatrix fi = fi_matrix(model, phi, fd_step).matrix;
    const double gap = (fi.entries() - qfi.entries()).cwiseAbs().maxCoeff();
    if (gap < best.gap) best = SaturationResult{phi, gap, false};
    if (gap <= tolerance) return SaturationResult{phi, gap, true};
  }
  return best;
}

}  // namespace multiphase
