#pragma once

#include <cmath>

namespace molspin::seq {

enum class EnvelopeKind { t2star_free, hahn, xy8, t1 };

// Phenomenological coherence (or population, for T1) decay exp(-(t/T)^beta).
struct DecoherenceEnvelope {
  EnvelopeKind kind = EnvelopeKind::hahn;
  double time_constant_ns = 1.0;
  double stretch = 1.0;

  // Throws InvalidArgument unless T > 0 and 0 < beta <= 3.
  void validate() const;

  double factor(double elapsed_ns) const {
    if (elapsed_ns <= 0.0) return 1.0;
    return std::exp(-std::pow(elapsed_ns / time_constant_ns, stretch));
  }
};

}  // namespace molspin::seq
