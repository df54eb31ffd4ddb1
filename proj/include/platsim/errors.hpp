#pragma once

// Error types thrown by the solvers, metrics and config layers. Each carries
// enough context to report what failed without the caller re-deriving it.

#include <stdexcept>
#include <string>

namespace platsim {

// Fixed point iteration (shares) or best-response loop ran out of iterations.
struct NonConvergence : std::runtime_error {
  NonConvergence(const std::string& what, long iterations, double residual)
      : std::runtime_error(what + " (iterations=" + std::to_string(iterations) +
                           ", residual=" + std::to_string(residual) + ")"),
        iterations(iterations),
        residual(residual) {}
  long iterations;
  double residual;
};

// Equilibrium search exhausted all starts without an interior solution.
struct NoEquilibriumFound : std::runtime_error {
  explicit NoEquilibriumFound(const std::string& what) : std::runtime_error(what) {}
};

// Competitive and collusive anchors coincide; no price grid can be built.
struct DegenerateGrid : std::runtime_error {
  DegenerateGrid(double p_star, double p_coll)
      : std::runtime_error("degenerate price grid: anchors coincide (p*=" +
                           std::to_string(p_star) + ", pC=" + std::to_string(p_coll) + ")"),
        p_star(p_star),
        p_coll(p_coll) {}
  double p_star;
  double p_coll;
};

// Collusion index denominator |pi_coll - pi_star| is below tolerance.
struct DegenerateDenominator : std::runtime_error {
  explicit DegenerateDenominator(double gap)
      : std::runtime_error("collusion index undefined: profit gap " + std::to_string(gap) +
                           " below tolerance"),
        gap(gap) {}
  double gap;
};

// Two tables that must agree in shape do not.
struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

// Bootstrap was handed an empty sample vector.
struct EmptySample : std::runtime_error {
  EmptySample() : std::runtime_error("bootstrap requires a nonempty sample") {}
};

// Recorded action tail is too short for the requested diagnostic.
struct TailTooShort : std::runtime_error {
  TailTooShort(std::size_t have, std::size_t need)
      : std::runtime_error("recorded tail holds " + std::to_string(have) +
                           " steps, diagnostic needs >= " + std::to_string(need)),
        have(have),
        need(need) {}
  std::size_t have;
  std::size_t need;
};

// Not enough observations for a statistical routine.
struct TooFewSamples : std::runtime_error {
  TooFewSamples(const std::string& what, std::size_t have, std::size_t need)
      : std::runtime_error(what + ": have " + std::to_string(have) + ", need >= " +
                           std::to_string(need)),
        have(have),
        need(need) {}
  std::size_t have;
  std::size_t need;
};

// Config file failed validation; `field` is a slash-separated path into the JSON.
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& field, const std::string& why)
      : std::runtime_error("config field '" + field + "': " + why), field(field) {}
  std::string field;
};

// Filesystem problem while reading or writing experiment outputs.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace platsim
