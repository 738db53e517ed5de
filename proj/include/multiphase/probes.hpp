#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"

namespace multiphase {

inline constexpr double kInfiniteEnergy = std::numeric_limits<double>::infinity();

enum class ReferenceLayout { SeparateReferences, SingleReference, Infinite };

// Classical benchmark: multimode coherent probe with per-mode energies
// |alpha_i|^2 and a phase reference that is either infinitely strong, a single
// shared beam of energy |beta|^2, or d separate beams sharing reference_energy
// equally. Modeled analytically; coherent states are never expanded in the
// Fock basis.
struct CoherentBenchmark {
  std::vector<double> probe_energies;
  double reference_energy = kInfiniteEnergy;  // total; ignored for Infinite layout
  ReferenceLayout layout = ReferenceLayout::Infinite;

  CoherentBenchmark(std::vector<double> energies, ReferenceLayout layout_,
                    double reference = kInfiniteEnergy)
      : probe_energies(std::move(energies)), reference_energy(reference), layout(layout_) {
    if (probe_energies.empty())
      throw std::invalid_argument("CoherentBenchmark: need at least one probe mode");
    for (double e : probe_energies)
      if (!(e > 0.0)) throw std::invalid_argument("CoherentBenchmark: energies must be positive");
    if (layout != ReferenceLayout::Infinite && !(reference_energy > 0.0))
      throw std::invalid_argument("CoherentBenchmark: reference energy must be positive");
  }

  int d() const { return static_cast<int>(probe_energies.size()); }
  double total_probe_energy() const {
    double n = 0.0;
    for (double e : probe_energies) n += e;
    return n;
  }
};

// Generalized multimode NOON state: beta |N,0,...,0> + alpha/sqrt(d) sum_m |N_m>
// over the d probing modes, with |beta|^2 = 1 - alpha_sq.
struct GeneralizedNoonSpec {
  int d = 1;
  int photons = 1;
  double alpha_sq = 0.5;

  GeneralizedNoonSpec(int d_, int photons_, double alpha_sq_)
      : d(d_), photons(photons_), alpha_sq(alpha_sq_) {
    if (d < 1) throw std::invalid_argument("GeneralizedNoonSpec: d must be >= 1");
    if (photons < 1) throw std::invalid_argument("GeneralizedNoonSpec: N must be >= 1");
    if (!(alpha_sq > 0.0) || !(alpha_sq < 1.0))
      throw std::invalid_argument("GeneralizedNoonSpec: alpha_sq must lie in (0, 1)");
  }

  double beta_sq() const { return 1.0 - alpha_sq; }
};

// (|N,0> + |0,N>)/sqrt(2).
inline FockState make_noon(int photons) {
  if (photons < 1) throw std::invalid_argument("make_noon: N must be >= 1");
  const double r = 1.0 / std::sqrt(2.0);
  return FockState::superposition(
      2, {{OccupationVector::single_mode(2, 0, photons), complexd(r, 0.0)},
          {OccupationVector::single_mode(2, 1, photons), complexd(r, 0.0)}});
}

// Generalized NOON probe on d+1 modes; amplitudes are real non-negative
// (only |alpha|^2 and |beta|^2 enter any derived quantity).
inline FockState make_generalized_noon(const GeneralizedNoonSpec& spec) {
  const int modes = spec.d + 1;
  std::vector<std::pair<OccupationVector, complexd>> terms;
  terms.emplace_back(OccupationVector::single_mode(modes, 0, spec.photons),
                     complexd(std::sqrt(spec.beta_sq()), 0.0));
  const double probing = std::sqrt(spec.alpha_sq / spec.d);
  for (int m = 1; m < modes; ++m)
    terms.emplace_back(OccupationVector::single_mode(modes, m, spec.photons),
                       complexd(probing, 0.0));
  return FockState::superposition(modes, std::move(terms));
}

// |alpha|^2 minimizing Tr(Q^-1) for the generalized NOON family: sqrt(d)/(1+sqrt(d)).
inline double optimal_alpha_sq(int d) {
  if (d < 1) throw std::invalid_argument("optimal_alpha_sq: d must be >= 1");
  const double r = std::sqrt(static_cast<double>(d));
  return r / (1.0 + r);
}

// Single-mode (|0> + |N>)/sqrt(2); maximal Var(N) at fixed photon cap, QFI = N^2.
inline FockState make_zero_n_superposition(int photons) {
  if (photons < 1) throw std::invalid_argument("make_zero_n_superposition: N must be >= 1");
  const double r = 1.0 / std::sqrt(2.0);
  return FockState::superposition(
      1, {{OccupationVector::single_mode(1, 0, 0), complexd(r, 0.0)},
          {OccupationVector::single_mode(1, 0, photons), complexd(r, 0.0)}});
}

// QFI matrix for the coherent benchmark.
//   Infinite reference:   Q = diag(4|alpha_i|^2)
//   Separate references:  Q^-1 = diag((|alpha_i|^-2 + |beta_i|^-2)/4), beta split equally
//   Single reference:     4 Q^-1 = diag(|alpha_i|^-2) + |beta|^-2 J   (J = all-ones)
inline InfoMatrix coherent_qfi_matrix(const CoherentBenchmark& bench) {
  const int d = bench.d();
  switch (bench.layout) {
    case ReferenceLayout::Infinite: {
      std::vector<double> diag(d);
      for (int i = 0; i < d; ++i) diag[i] = 4.0 * bench.probe_energies[i];
      return InfoMatrix::diagonal(diag);
    }
    case ReferenceLayout::SeparateReferences: {
      const double beta_sq = bench.reference_energy / d;
      std::vector<double> diag(d);
      for (int i = 0; i < d; ++i)
        diag[i] = 4.0 / (1.0 / bench.probe_energies[i] + 1.0 / beta_sq);
      return InfoMatrix::diagonal(diag);
    }
    case ReferenceLayout::SingleReference: {
      Eigen::MatrixXd qinv =
          Eigen::MatrixXd::Constant(d, d, 1.0 / bench.reference_energy);
      for (int i = 0; i < d; ++i) qinv(i, i) += 1.0 / bench.probe_energies[i];
      qinv /= 4.0;
      return InfoMatrix(qinv.inverse().eval());
    }
  }
  throw std::invalid_argument("coherent_qfi_matrix: unknown layout");
}

// Propagated-error phase variance of homodyne detection against a reference
// beam: (1/|alpha|^2 + 1/|beta|^2) / (4 cos^2(mismatch)). Pass kInfiniteEnergy
// for an unbounded reference; returns +inf at mismatch +-pi/2.
inline double homodyne_variance(double alpha_sq, double beta_sq, double mismatch_angle) {
  if (!(alpha_sq > 0.0) || !(beta_sq > 0.0))
    throw std::invalid_argument("homodyne_variance: energies must be positive");
  const double c = std::cos(mismatch_angle);
  if (std::abs(c) < 1e-12) return std::numeric_limits<double>::infinity();
  const double inv_beta = std::isinf(beta_sq) ? 0.0 : 1.0 / beta_sq;
  return (1.0 / alpha_sq + inv_beta) / (4.0 * c * c);
}

}  // namespace multiphase
