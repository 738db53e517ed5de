#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"

namespace multiphase {

inline constexpr int kPhotonCap = 4;

// Passive linear-optics transformation on the mode operators.
class ModeUnitary {
 public:
  explicit ModeUnitary(Eigen::MatrixXcd u) : u_(std::move(u)) {
    if (u_.rows() != u_.cols() || u_.rows() < 1)
      throw DimensionError("ModeUnitary: matrix must be square");
    const double defect =
        (u_.adjoint() * u_ - Eigen::MatrixXcd::Identity(u_.rows(), u_.cols()))
            .cwiseAbs()
            .maxCoeff();
    if (defect > 1e-10)
      throw std::invalid_argument("ModeUnitary: unitarity defect " + std::to_string(defect));
  }

  static ModeUnitary identity(int modes) {
    return ModeUnitary(Eigen::MatrixXcd::Identity(modes, modes));
  }

  int dim() const { return static_cast<int>(u_.rows()); }
  const Eigen::MatrixXcd& matrix() const { return u_; }

  // Composition: apply this first, then `later`.
  ModeUnitary then(const ModeUnitary& later) const {
    if (later.dim() != dim()) throw DimensionError("ModeUnitary: dimension mismatch");
    return ModeUnitary(later.u_ * u_);
  }

 private:
  Eigen::MatrixXcd u_;
};

// Beam splitter between modes i and j with power transmittivity T, symmetric
// convention: 2x2 block [[sqrt(T), i sqrt(1-T)], [i sqrt(1-T), sqrt(T)]].
inline ModeUnitary beam_splitter(int i, int j, double transmittivity, int modes) {
  if (i == j || i < 0 || j < 0 || i >= modes || j >= modes)
    throw std::invalid_argument("beam_splitter: bad mode indices");
  if (!(transmittivity >= 0.0) || !(transmittivity <= 1.0))
    throw std::invalid_argument("beam_splitter: transmittivity must lie in [0, 1]");
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(modes, modes);
  const double t = std::sqrt(transmittivity);
  const double r = std::sqrt(1.0 - transmittivity);
  u(i, i) = u(j, j) = complexd(t, 0.0);
  u(i, j) = u(j, i) = complexd(0.0, r);
  return ModeUnitary(std::move(u));
}

inline ModeUnitary phase_shifter(int mode, double theta, int modes) {
  if (mode < 0 || mode >= modes) throw std::invalid_argument("phase_shifter: bad mode index");
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(modes, modes);
  u(mode, mode) = std::polar(1.0, theta);
  return ModeUnitary(std::move(u));
}

// Three-mode tritter U = U_12(T3) P(theta) U_23(T2) U_12(T1); P imparts the
// auxiliary phase theta on arm 1 (index 0).
inline ModeUnitary compose_tritter(double t1, double t2, double t3, double theta) {
  return beam_splitter(0, 1, t1, 3)
      .then(beam_splitter(1, 2, t2, 3))
      .then(phase_shifter(0, theta, 3))
      .then(beam_splitter(0, 1, t3, 3));
}

struct BeamSplitterElement {
  int mode_a = 0, mode_b = 1;
  double transmittivity = 0.5;
};
struct PhaseShifterElement {
  int mode = 0;
  double theta = 0.0;
};
// Placeholder for a phase to be supplied at evaluation time; symbols are
// 1-based and must cover 1..d without gaps across the circuit.
struct UnknownPhaseElement {
  int mode = 0;
  int symbol = 1;
};

using CircuitElement = std::variant<BeamSplitterElement, PhaseShifterElement, UnknownPhaseElement>;

struct CircuitSpec {
  int mode_count = 0;
  std::vector<CircuitElement> layers;  // applied first to last

  int symbol_count() const {
    int max_symbol = 0;
    for (const auto& layer : layers)
      if (const auto* u = std::get_if<UnknownPhaseElement>(&layer))
        max_symbol = std::max(max_symbol, u->symbol);
    return max_symbol;
  }

  void validate() const {
    if (mode_count < 1) throw std::invalid_argument("CircuitSpec: mode_count must be >= 1");
    std::set<int> symbols;
    for (const auto& layer : layers) {
      if (const auto* b = std::get_if<BeamSplitterElement>(&layer)) {
        if (b->mode_a == b->mode_b || b->mode_a < 0 || b->mode_b < 0 ||
            b->mode_a >= mode_count || b->mode_b >= mode_count)
          throw std::invalid_argument("CircuitSpec: beam splitter modes out of range");
        if (!(b->transmittivity >= 0.0) || !(b->transmittivity <= 1.0))
          throw std::invalid_argument("CircuitSpec: transmittivity out of [0, 1]");
      } else if (const auto* p = std::get_if<PhaseShifterElement>(&layer)) {
        if (p->mode < 0 || p->mode >= mode_count)
          throw std::invalid_argument("CircuitSpec: phase shifter mode out of range");
      } else if (const auto* u = std::get_if<UnknownPhaseElement>(&layer)) {
        if (u->mode < 0 || u->mode >= mode_count)
          throw std::invalid_argument("CircuitSpec: unknown phase mode out of range");
        if (u->symbol < 1) throw std::invalid_argument("CircuitSpec: symbols are 1-based");
        symbols.insert(u->symbol);
      }
    }
    const int d = symbol_count();
    for (int s = 1; s <= d; ++s)
      if (!symbols.count(s))
        throw std::invalid_argument("CircuitSpec: symbol " + std::to_string(s) +
                                    " missing (no gaps allowed)");
  }
};

// Mode unitary of the circuit with all unknown phases bound to `symbols`.
inline ModeUnitary circuit_unitary(const CircuitSpec& spec, const PhaseVector& symbols) {
  spec.validate();
  if (symbols.size() != spec.symbol_count())
    throw DimensionError("circuit_unitary: expected " + std::to_string(spec.symbol_count()) +
                         " symbol values");
  ModeUnitary u = ModeUnitary::identity(spec.mode_count);
  for (const auto& layer : spec.layers) {
    if (const auto* b = std::get_if<BeamSplitterElement>(&layer))
      u = u.then(beam_splitter(b->mode_a, b->mode_b, b->transmittivity, spec.mode_count));
    else if (const auto* p = std::get_if<PhaseShifterElement>(&layer))
      u = u.then(phase_shifter(p->mode, p->theta, spec.mode_count));
    else if (const auto* un = std::get_if<UnknownPhaseElement>(&layer))
      u = u.then(phase_shifter(un->mode, symbols[un->symbol - 1], spec.mode_count));
  }
  return u;
}

// All occupations of `total` photons over `modes` modes, mode-0 count
// descending. This is the outcome ordering used by interferometer models.
inline std::vector<OccupationVector> enumerate_occupations(int modes, int total) {
  std::vector<OccupationVector> out;
  std::vector<int> current(modes, 0);
  auto recurse = [&](auto&& self, int mode, int remaining) -> void {
    if (mode == modes - 1) {
      current[mode] = remaining;
      out.emplace_back(current);
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      current[mode] = k;
      self(self, mode + 1, remaining - k);
    }
  };
  if (modes >= 1) recurse(recurse, 0, total);
  return out;
}

namespace detail {

// Permanent by Laplace expansion over columns; fine for the <=4x4 matrices of
// desk-scale photon numbers.
template <typename Scalar>
Scalar permanent(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m) {
  const int n = static_cast<int>(m.rows());
  if (n == 0) return Scalar(1);
  std::vector<bool> used(n, false);
  auto expand = [&](auto&& self, int col) -> Scalar {
    if (col == n) return Scalar(1);
    Scalar acc(0);
    for (int row = 0; row < n; ++row) {
      if (used[row]) continue;
      used[row] = true;
      acc += m(row, col) * self(self, col + 1);
      used[row] = false;
    }
    return acc;
  };
  return expand(expand, 0);
}

inline double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

// Submatrix with rows repeated per out[] and columns repeated per in[].
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> repeated_submatrix(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& m,
    const OccupationVector& out, const OccupationVector& in) {
  const int t = out.total();
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> sub(t, t);
  int r = 0;
  for (int j = 0; j < out.modes(); ++j)
    for (int rep = 0; rep < out[j]; ++rep, ++r) {
      int c = 0;
      for (int i = 0; i < in.modes(); ++i)
        for (int rep2 = 0; rep2 < in[i]; ++rep2, ++c) sub(r, c) = m(j, i);
    }
  return sub;
}

// <m| U_F |n> = Per(U_{m,n}) / sqrt(prod m_j! prod n_i!).
inline complexd transition_amplitude(const Eigen::MatrixXcd& u, const OccupationVector& out,
                                     const OccupationVector& in) {
  double norm = 1.0;
  for (int j = 0; j < out.modes(); ++j) norm *= factorial(out[j]);
  for (int i = 0; i < in.modes(); ++i) norm *= factorial(in[i]);
  return permanent<complexd>(repeated_submatrix<complexd>(u, out, in)) / std::sqrt(norm);
}

// Distinguishable photons: each routes independently with |u|^2 weights.
inline double distinguishable_probability(const Eigen::MatrixXd& intensity,
                                          const OccupationVector& out,
                                          const OccupationVector& in) {
  double norm = 1.0;
  for (int j = 0; j < out.modes(); ++j) norm *= factorial(out[j]);
  return permanent<double>(repeated_submatrix<double>(intensity, out, in)) / norm;
}

inline FockState::AmplitudeMap evolve_amplitudes(const Eigen::MatrixXcd& u,
                                                 const FockState& state) {
  FockState::AmplitudeMap out;
  const int modes = state.mode_count();
  std::map<int, std::vector<OccupationVector>> outputs_by_total;
  for (const auto& [occ, amp] : state.amplitudes()) {
    const int total = occ.total();
    if (total > kPhotonCap)
      throw std::invalid_argument("fock_evolve: photon number above the desk-scale cap of " +
                                  std::to_string(kPhotonCap));
    auto it = outputs_by_total.find(total);
    if (it == outputs_by_total.end())
      it = outputs_by_total.emplace(total, enumerate_occupations(modes, total)).first;
    for (const auto& target : it->second) {
      const complexd a = amp * transition_amplitude(u, target, occ);
      if (a != complexd(0.0, 0.0)) out[target] += a;
    }
  }
  return out;
}

}  // namespace detail

// Second-quantized lift of a mode unitary onto few-photon Fock states.
inline FockState fock_evolve(const ModeUnitary& u, const FockState& state) {
  if (u.dim() != state.mode_count())
    throw DimensionError("fock_evolve: unitary dimension != mode count");
  return FockState(state.mode_count(), detail::evolve_amplitudes(u.matrix(), state));
}

// Photon-counting outcome distribution of a circuit fed with `input`, as a
// function of the unknown-phase symbols. Partial indistinguishability is a
// probability-level blend p = V p_indist + (1-V) p_dist, which is how the
// visibility parameter sets the two-photon fringe contrast.
inline ProbabilityModel interferometer_model(const CircuitSpec& spec, const FockState& input,
                                             double visibility) {
  spec.validate();
  if (!(visibility >= 0.0) || !(visibility <= 1.0))
    throw std::invalid_argument("interferometer_model: visibility must lie in [0, 1]");
  if (input.mode_count() != spec.mode_count)
    throw DimensionError("interferometer_model: input mode count != circuit mode count");

  // Compile: constant segments interleaved with unknown-phase insertions, so
  // each evaluation is a handful of small matrix products.
  struct DiagOp {
    int mode;
    int symbol;
  };
  std::vector<Eigen::MatrixXcd> segments;
  std::vector<DiagOp> diag_ops;
  Eigen::MatrixXcd acc = Eigen::MatrixXcd::Identity(spec.mode_count, spec.mode_count);
  for (const auto& layer : spec.layers) {
    if (const auto* b = std::get_if<BeamSplitterElement>(&layer)) {
      acc = (beam_splitter(b->mode_a, b->mode_b, b->transmittivity, spec.mode_count).matrix() *
             acc)
                .eval();
    } else if (const auto* p = std::get_if<PhaseShifterElement>(&layer)) {
      acc.row(p->mode) *= std::polar(1.0, p->theta);
    } else if (const auto* un = std::get_if<UnknownPhaseElement>(&layer)) {
      segments.push_back(acc);
      diag_ops.push_back(DiagOp{un->mode, un->symbol});
      acc = Eigen::MatrixXcd::Identity(spec.mode_count, spec.mode_count);
    }
  }
  segments.push_back(acc);

  // Fixed outcome list: occupations grouped by ascending photon total.
  std::set<int> totals;
  for (const auto& [occ, amp] : input.amplitudes()) {
    if (occ.total() > kPhotonCap)
      throw std::invalid_argument("interferometer_model: photon number above cap");
    totals.insert(occ.total());
  }
  std::vector<OccupationVector> outcomes;
  std::map<OccupationVector, int> outcome_index;
  for (int t : totals)
    for (auto& occ : enumerate_occupations(spec.mode_count, t)) {
      outcome_index.emplace(occ, static_cast<int>(outcomes.size()));
      outcomes.push_back(occ);
    }

  const int n_outcomes = static_cast<int>(outcomes.size());
  const int d = spec.symbol_count();
  auto eval = [segments, diag_ops, outcomes, outcome_index, input, visibility,
               modes = spec.mode_count, n_outcomes](const PhaseVector& symbols) {
    Eigen::MatrixXcd u = segments[0];
    for (std::size_t k = 0; k < diag_ops.size(); ++k) {
      u.row(diag_ops[k].mode) *= std::polar(1.0, symbols[diag_ops[k].symbol - 1]);
      u = (segments[k + 1] * u).eval();
    }
    std::vector<double> p(n_outcomes, 0.0);
    if (visibility > 0.0) {
      const FockState::AmplitudeMap evolved = detail::evolve_amplitudes(u, input);
      for (const auto& [occ, amp] : evolved) p[outcome_index.at(occ)] += visibility * std::norm(amp);
    }
    if (visibility < 1.0) {
      const Eigen::MatrixXd intensity = u.cwiseAbs2();
      for (const auto& [occ, amp] : input.amplitudes()) {
        const double w = (1.0 - visibility) * std::norm(amp);
        for (int idx = 0; idx < n_outcomes; ++idx) {
          if (outcomes[idx].total() != occ.total()) continue;
          p[idx] += w * detail::distinguishable_probability(intensity, outcomes[idx], occ);
        }
      }
    }
    return p;
  };
  return ProbabilityModel{n_outcomes, d, std::move(eval)};
}

}  // namespace multiphase
