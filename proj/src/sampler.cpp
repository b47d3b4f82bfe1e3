#include "denma/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

#include "denma/error.hpp"
#include "denma/io.hpp"

namespace denma {

double Target::couple(std::size_t, std::span<const double>, std::span<double>) const { return 0.0; }

double Target::log_density(std::span<const double> state) const {
  double total = 0.0;
  for (std::size_t t = 0; t < term_count(); ++t) total += term_log_density(state, t);
  return std::isnan(total) ? -std::numeric_limits<double>::infinity() : total;
}

std::optional<std::size_t> PosteriorDraws::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

std::size_t PosteriorDraws::require(std::string_view name) const {
  auto i = index_of(name);
  if (!i) throw Error(ErrorCode::LayoutMismatch, "no parameter named " + std::string(name));
  return *i;
}

std::vector<double> PosteriorDraws::pooled_column(std::size_t param) const {
  std::vector<double> out;
  out.reserve(total_rows());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    for (std::size_t r = 0; r < rows_per_chain; ++r) out.push_back(at(c, r, param));
  }
  return out;
}

std::vector<std::vector<double>> PosteriorDraws::per_chain(std::size_t param) const {
  std::vector<std::vector<double>> out(chains.size());
  for (std::size_t c = 0; c < chains.size(); ++c) {
    out[c].reserve(rows_per_chain);
    for (std::size_t r = 0; r < rows_per_chain; ++r) out[c].push_back(at(c, r, param));
  }
  return out;
}

namespace {

constexpr std::size_t kInitAttempts = 100;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool all_finite(const Target& target, std::span<const double> state, std::vector<double>* terms) {
  if (terms) terms->assign(target.term_count(), 0.0);
  for (std::size_t t = 0; t < target.term_count(); ++t) {
    const double v = target.term_log_density(state, t);
    if (!std::isfinite(v)) return false;
    if (terms) (*terms)[t] = v;
  }
  return true;
}

std::vector<double> initialize_with(const Target& target, Rng& rng, std::size_t chain) {
  for (std::size_t attempt = 0; attempt < kInitAttempts; ++attempt) {
    auto state = target.initial_state(rng, chain);
    if (state.size() != target.dimension()) {
      throw Error(ErrorCode::DimensionMismatch, "initial state has the wrong dimension");
    }
    if (all_finite(target, state, nullptr)) return state;
  }
  throw Error(ErrorCode::InitializationFailure,
              "no start with finite log density after " + std::to_string(kInitAttempts) + " attempts (chain " +
                  std::to_string(chain) + ")");
}

// In-place lower Cholesky factor of a small dense SPD matrix. False if not SPD.
bool cholesky(std::vector<double>& a, std::size_t d) {
  for (std::size_t j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (std::size_t k = 0; k < j; ++k) diag -= a[j * d + k] * a[j * d + k];
    if (!(diag > 0.0)) return false;
    const double root = std::sqrt(diag);
    a[j * d + j] = root;
    for (std::size_t i = j + 1; i < d; ++i) {
      double v = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) v -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = v / root;
    }
    for (std::size_t k = j + 1; k < d; ++k) a[j * d + k] = 0.0;
  }
  return true;
}

struct Adaptation {
  std::size_t dim = 0;
  double log_scale = 0.0;
  bool use_covariance = false;
  std::vector<double> factor;  // lower Cholesky of the proposal covariance shape
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> scatter;  // running sum of outer products of deviations
};

double coordinate(const BlockSpec& block, std::span<const double> state, std::size_t i) {
  const double v = state[block.indices[i]];
  return block.move == MoveKind::LogRandomWalk ? std::log(v) : v;
}

class ChainRunner {
 public:
  ChainRunner(const Target& target, const SamplerConfig& config, std::size_t chain)
      : target_(target), config_(config), chain_(chain), rng_(config.seed, chain) {}

  ChainDraws run() {
    ChainDraws out;
    state_ = initialize_with(target_, rng_, chain_);
    out.initial = state_;
    all_finite(target_, state_, &terms_);
    proposal_ = state_;

    const auto& blocks = target_.blocks();
    adapt_.resize(blocks.size());
    out.blocks.resize(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const auto& block = blocks[b];
      auto& a = adapt_[b];
      a.dim = block.indices.size();
      a.mean.assign(a.dim, 0.0);
      a.scatter.assign(a.dim * a.dim, 0.0);
      a.factor.assign(a.dim * a.dim, 0.0);
      for (std::size_t i = 0; i < a.dim; ++i) {
        a.factor[i * a.dim + i] = i < block.initial_scales.size() ? block.initial_scales[i] : 0.1;
      }
      out.blocks[b].name = block.name;
    }

    const std::size_t dim = state_.size();
    const std::size_t rows = config_.retained_per_chain();
    out.values.reserve(rows * dim);
    out.log_density.reserve(rows);
    const std::size_t adapt_start = config_.burn_in / 4;

    for (std::size_t iter = 0; iter < config_.iterations; ++iter) {
      const bool burning = iter < config_.burn_in;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        const bool accepted = step(b);
        if (burning) {
          adapt(b, accepted, iter, iter >= adapt_start);
        } else {
          ++out.blocks[b].proposed;
          if (accepted) ++out.blocks[b].accepted;
        }
      }
      if (!burning && (iter - config_.burn_in) % config_.thinning == 0) {
        out.values.insert(out.values.end(), state_.begin(), state_.end());
        double lp = 0.0;
        for (double t : terms_) lp += t;
        out.log_density.push_back(lp);
        out.iteration.push_back(iter + 1);
      }
    }
    for (std::size_t b = 0; b < blocks.size(); ++b) out.blocks[b].final_scale = std::exp(adapt_[b].log_scale);
    return out;
  }

 private:
  bool step(std::size_t b) {
    const auto& block = target_.blocks()[b];
    auto& a = adapt_[b];
    const std::size_t d = a.dim;
    z_.resize(d);
    for (std::size_t i = 0; i < d; ++i) z_[i] = rng_.normal();
    const double scale = std::exp(a.log_scale);

    double log_jacobian = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      double delta = 0.0;
      for (std::size_t k = 0; k <= i; ++k) delta += a.factor[i * d + k] * z_[k];
      delta *= scale;
      const std::size_t idx = block.indices[i];
      if (block.move == MoveKind::LogRandomWalk) {
        const double old_log = std::log(state_[idx]);
        double y = old_log + delta;
        const double log_upper = std::log(block.upper);
        while (y > log_upper) y = 2.0 * log_upper - y;
        proposal_[idx] = std::exp(y);
        log_jacobian += y - old_log;
      } else {
        proposal_[idx] = state_[idx] + delta;
      }
    }
    if (!block.dependents.empty()) log_jacobian += target_.couple(b, state_, proposal_);

    double old_sum = 0.0;
    double new_sum = 0.0;
    new_terms_.resize(block.terms.size());
    for (std::size_t j = 0; j < block.terms.size(); ++j) {
      const std::size_t t = block.terms[j];
      old_sum += terms_[t];
      new_terms_[j] = target_.term_log_density(proposal_, t);
      new_sum += new_terms_[j];
    }
    const double log_ratio = new_sum - old_sum + log_jacobian;
    const bool accept = std::isfinite(new_sum) && !std::isnan(log_ratio) && std::log(rng_.uniform()) < log_ratio;
    if (accept) {
      for (std::size_t j = 0; j < block.terms.size(); ++j) terms_[block.terms[j]] = new_terms_[j];
      for (std::size_t idx : block.indices) state_[idx] = proposal_[idx];
      for (std::size_t idx : block.dependents) state_[idx] = proposal_[idx];
    } else {
      for (std::size_t idx : block.indices) proposal_[idx] = state_[idx];
      for (std::size_t idx : block.dependents) proposal_[idx] = state_[idx];
    }
    return accept;
  }

  void adapt(std::size_t b, bool accepted, std::size_t iter, bool collect) {
    const auto& block = target_.blocks()[b];
    auto& a = adapt_[b];
    const double target_rate = a.dim == 1 ? config_.scalar_target : config_.vector_target;
    const double gain = 1.0 / std::pow(static_cast<double>(iter) + 1.0, 0.6);
    a.log_scale = std::clamp(a.log_scale + gain * ((accepted ? 1.0 : 0.0) - target_rate), -30.0, 10.0);

    if (a.dim < 2 || !collect) return;
    ++a.count;
    const double n = static_cast<double>(a.count);
    dev_.resize(a.dim);
    for (std::size_t i = 0; i < a.dim; ++i) {
      dev_[i] = coordinate(block, state_, i) - a.mean[i];
      a.mean[i] += dev_[i] / n;
    }
    for (std::size_t i = 0; i < a.dim; ++i) {
      const double after = coordinate(block, state_, i) - a.mean[i];
      for (std::size_t k = 0; k < a.dim; ++k) a.scatter[i * a.dim + k] += dev_[k] * after;
    }
    const std::size_t min_count = 20 + 2 * a.dim;
    if (a.count >= min_count && (iter + 1) % config_.adapt_interval == 0) {
      std::vector<double> cov(a.dim * a.dim);
      for (std::size_t i = 0; i < a.dim * a.dim; ++i) cov[i] = a.scatter[i] / (n - 1.0);
      for (std::size_t i = 0; i < a.dim; ++i) cov[i * a.dim + i] += 1e-10 * (1.0 + std::fabs(cov[i * a.dim + i]));
      if (cholesky(cov, a.dim)) {
        a.factor = std::move(cov);
        if (!a.use_covariance) {
          a.use_covariance = true;
          a.log_scale = std::log(2.38 / std::sqrt(static_cast<double>(a.dim)));
        }
      }
    }
  }

  const Target& target_;
  const SamplerConfig& config_;
  std::size_t chain_;
  Rng rng_;
  std::vector<double> state_;
  std::vector<double> proposal_;
  std::vector<double> terms_;
  std::vector<double> new_terms_;
  std::vector<double> z_;
  std::vector<double> dev_;
  std::vector<Adaptation> adapt_;
};

}  // namespace

std::vector<double> initialize(const Target& target, std::uint64_t seed, std::size_t chain) {
  Rng rng(seed, chain);
  return initialize_with(target, rng, chain);
}

PosteriorDraws run(const Target& target, const SamplerConfig& config) {
  config.validate();
  PosteriorDraws draws;
  draws.names = target.parameter_names();
  draws.rows_per_chain = config.retained_per_chain();
  draws.seed = config.seed;
  draws.chains.resize(config.chains);

  std::vector<std::exception_ptr> errors(config.chains);
  auto work = [&](std::size_t c) {
    try {
      ChainRunner runner(target, config, c);
      draws.chains[c] = runner.run();
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.parallel && config.chains > 1) {
    std::vector<std::thread> threads;
    for (std::size_t c = 0; c < config.chains; ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t c = 0; c < config.chains; ++c) work(c);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return draws;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string emit_draws(const PosteriorDraws& draws) {
  std::string out = "chain,iteration,lp__";
  for (const auto& n : draws.names) out += "," + csv_field(n);
  out += '\n';
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    const auto& chain = draws.chains[c];
    for (std::size_t r = 0; r < draws.rows_per_chain; ++r) {
      out += std::to_string(c) + "," + std::to_string(chain.iteration.empty() ? r + 1 : chain.iteration[r]) + "," +
             io::format_double(chain.log_density.empty() ? 0.0 : chain.log_density[r]);
      for (std::size_t p = 0; p < draws.names.size(); ++p) out += "," + io::format_double(draws.at(c, r, p));
      out += '\n';
    }
  }
  return out;
}

PosteriorDraws parse_draws(std::string_view csv_text) {
  const auto table = io::parse_csv(csv_text);
  if (table.header.size() < 3 || table.header[0] != "chain" || table.header[1] != "iteration" ||
      table.header[2] != "lp__") {
    throw Error(ErrorCode::ParseFailure, "draws file must start with chain,iteration,lp__");
  }
  PosteriorDraws draws;
  draws.names.assign(table.header.begin() + 3, table.header.end());
  const std::size_t dim = draws.names.size();
  for (const auto& row : table.rows) {
    auto chain = io::parse_integer(row[0]);
    auto iter = io::parse_integer(row[1]);
    auto lp = io::parse_double(row[2]);
    if (!chain || !iter || !lp || *chain < 0) throw Error(ErrorCode::ParseFailure, "malformed draws row");
    const auto c = static_cast<std::size_t>(*chain);
    if (c >= draws.chains.size()) draws.chains.resize(c + 1);
    auto& ch = draws.chains[c];
    ch.iteration.push_back(static_cast<std::size_t>(*iter));
    ch.log_density.push_back(*lp);
    for (std::size_t p = 0; p < dim; ++p) {
      auto v = io::parse_double(row[p + 3]);
      if (!v) throw Error(ErrorCode::ParseFailure, "non-numeric draw value");
      ch.values.push_back(*v);
    }
  }
  if (draws.chains.empty()) throw Error(ErrorCode::ParseFailure, "draws file has no rows");
  draws.rows_per_chain = draws.chains.front().log_density.size();
  for (const auto& ch : draws.chains) {
    if (ch.log_density.size() != draws.rows_per_chain) {
      throw Error(ErrorCode::ParseFailure, "chains in draws file have unequal lengths");
    }
  }
  return draws;
}

}  // namespace denma
