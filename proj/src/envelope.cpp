#include "molspin/envelope.hpp"

#include <string>

#include "molspin/error.hpp"

namespace molspin::seq {

void DecoherenceEnvelope::validate() const {
  if (!(time_constant_ns > 0.0))
    throw InvalidArgument("decoherence envelope: time constant must be > 0, got " +
                          std::to_string(time_constant_ns));
  if (!(stretch > 0.0 && stretch <= 3.0))
    throw InvalidArgument("decoherence envelope: stretch must be in (0, 3], got " + std::to_string(stretch));
}

}  // namespace molspin::seq
