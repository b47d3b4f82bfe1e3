#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "denma/model_spec.hpp"
#include "denma/rng.hpp"

namespace denma {

enum class MoveKind {
  RandomWalk,     // unconstrained coordinates
  LogRandomWalk,  // one positive scalar with an upper bound; walk on log scale, reflect at the bound
};

struct BlockSpec {
  std::string name;
  std::vector<std::size_t> indices;
  std::vector<std::size_t> terms;  // log-density terms that depend on the block (and its dependents)
  MoveKind move = MoveKind::RandomWalk;
  double upper = std::numeric_limits<double>::infinity();
  std::vector<double> initial_scales;   // proposal sd per coordinate before covariance adaptation
  std::vector<std::size_t> dependents;  // coordinates rewritten by Target::couple
};

// A log density split into additive terms so that a block update only
// re-evaluates the terms it touches.
class Target {
 public:
  virtual ~Target() = default;

  virtual std::size_t dimension() const = 0;
  virtual std::vector<std::string> parameter_names() const = 0;
  virtual const std::vector<BlockSpec>& blocks() const = 0;
  virtual std::size_t term_count() const = 0;
  virtual double term_log_density(std::span<const double> state, std::size_t term) const = 0;

  // For blocks with dependents: given the state before the move and the
  // proposal with the block coordinates already updated, rewrite the
  // dependent coordinates of `after` and return the log Jacobian of that map.
  virtual double couple(std::size_t block, std::span<const double> before, std::span<double> after) const;

  virtual std::vector<double> initial_state(Rng& rng, std::size_t chain) const = 0;

  double log_density(std::span<const double> state) const;
};

struct BlockStats {
  std::string name;
  std::size_t proposed = 0;  // after burn-in
  std::size_t accepted = 0;
  double final_scale = 1.0;

  double rate() const { return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0; }
};

struct ChainDraws {
  std::vector<double> values;       // row-major, rows x dimension
  std::vector<double> log_density;  // per row
  std::vector<std::size_t> iteration;
  std::vector<BlockStats> blocks;
  std::vector<double> initial;
};

struct PosteriorDraws {
  std::vector<std::string> names;
  std::size_t rows_per_chain = 0;
  std::vector<ChainDraws> chains;
  std::uint64_t seed = 0;

  std::size_t dimension() const { return names.size(); }
  std::size_t total_rows() const { return rows_per_chain * chains.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t require(std::string_view name) const;

  double at(std::size_t chain, std::size_t row, std::size_t param) const {
    return chains[chain].values[row * names.size() + param];
  }
  std::span<const double> row(std::size_t chain, std::size_t r) const {
    return {chains[chain].values.data() + r * names.size(), names.size()};
  }
  // Chain-major pooled row (flat index over all chains).
  std::span<const double> pooled_row(std::size_t flat) const {
    return row(flat / rows_per_chain, flat % rows_per_chain);
  }
  std::vector<double> pooled_column(std::size_t param) const;
  std::vector<std::vector<double>> per_chain(std::size_t param) const;
};

// Overdispersed start with finite log density; retries a bounded number of times.
std::vector<double> initialize(const Target& target, std::uint64_t seed, std::size_t chain);

// Multi-chain adaptive random-walk Metropolis-within-Gibbs. Proposal scales
// and block covariances adapt only during burn-in. Chains use disjoint RNG
// substreams and are merged by chain index, so output depends only on the seed.
PosteriorDraws run(const Target& target, const SamplerConfig& config);

std::string emit_draws(const PosteriorDraws& draws);
PosteriorDraws parse_draws(std::string_view csv_text);

}  // namespace denma
