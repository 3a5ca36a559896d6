#pragma once
/**
 * @file process.hpp
 * @brief The law of the scatterer configurations and lazily generated tubes.
 *
 * Omega is a finite library of cell configurations (variants `iid` and
 * `markov`), or a continuous family obtained by translating every scatterer
 * of one library entry by an i.i.d. uniform offset (`iid_jitter`).
 *
 * Two-sided Markov realizations: l_0 ~ pi, l_n for n > 0 is drawn from
 * P(l_{n-1}, .), l_n for n < 0 from the reversed kernel
 * P~(a | b) = pi(a) P(a, b) / pi(b) given l_{n+1}. Every draw uses a uniform
 * keyed by (seed, n), so the realization does not depend on query order.
 */

#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "qtube/cell.hpp"
#include "qtube/rng.hpp"

namespace qtube {

enum class ProcessVariant { iid, markov, iid_jitter };

struct ConfigurationProcess {
  ProcessVariant variant{ProcessVariant::iid};
  std::vector<CellConfig> library;
  std::vector<double> probabilities;             // iid
  std::vector<std::vector<double>> transition;   // markov, row-stochastic
  std::vector<double> stationary;                // markov
  std::size_t jitter_base{0};                    // iid_jitter
  double jitter_amplitude{0.0};                  // iid_jitter, half-width of the offset box

  bool operator==(const ConfigurationProcess&) const = default;

  static ConfigurationProcess single(CellConfig cfg) {
    ConfigurationProcess p;
    p.library.push_back(std::move(cfg));
    p.probabilities = {1.0};
    return p;
  }
};

/// Stationary vector of a row-stochastic matrix by power iteration on the
/// lazy chain (P + I) / 2, which has the same stationary law and converges
/// for periodic chains too.
inline std::vector<double> stationary_distribution(const std::vector<std::vector<double>>& p,
                                                   int iterations = 100000, double tol = 1e-15) {
  const std::size_t n = p.size();
  std::vector<double> pi(n, 1.0 / static_cast<double>(n)), next(n);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t j = 0; j < n; ++j) next[j] = 0.5 * pi[j];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) next[j] += 0.5 * pi[i] * p[i][j];
    }
    double diff = 0.0, total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += next[j];
    for (std::size_t j = 0; j < n; ++j) {
      next[j] /= total;
      diff = std::max(diff, std::abs(next[j] - pi[j]));
    }
    pi.swap(next);
    if (diff < tol) break;
  }
  return pi;
}

/// Problems with the process parameters; empty iff usable.
inline std::vector<std::string> process_problems(const ConfigurationProcess& p) {
  std::vector<std::string> out;
  const std::size_t n = p.library.size();
  if (n == 0) {
    out.emplace_back("library: must not be empty");
    return out;
  }
  auto check_prob = [&](const std::vector<double>& v, const std::string& what) {
    if (v.size() != n) {
      out.push_back(what + ": expected " + std::to_string(n) + " entries");
      return;
    }
    double s = 0.0;
    for (double x : v) {
      if (!(x >= 0.0)) out.push_back(what + ": negative or NaN entry");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-12) out.push_back(what + ": entries must sum to 1");
  };
  switch (p.variant) {
    case ProcessVariant::iid:
      check_prob(p.probabilities, "probabilities");
      break;
    case ProcessVariant::markov: {
      if (p.transition.size() != n) {
        out.emplace_back("transition: expected one row per library entry");
        break;
      }
      for (std::size_t i = 0; i < n; ++i) check_prob(p.transition[i], "transition[" + std::to_string(i) + "]");
      check_prob(p.stationary, "stationary");
      if (!out.empty()) break;
      for (std::size_t j = 0; j < n; ++j) {
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) v += p.stationary[i] * p.transition[i][j];
        if (std::abs(v - p.stationary[j]) > 1e-10) {
          out.emplace_back("stationary: pi P != pi");
          break;
        }
        if (!(p.stationary[j] > 0.0)) {
          out.emplace_back("stationary: entries must be positive");
          break;
        }
      }
      break;
    }
    case ProcessVariant::iid_jitter:
      if (p.jitter_base >= n) out.emplace_back("jitter.base: library index out of range");
      if (!(p.jitter_amplitude >= 0.0)) out.emplace_back("jitter.amplitude: must be >= 0");
      break;
  }
  return out;
}

namespace detail {

inline std::size_t sample_discrete(const std::vector<double>& weights, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // u landed in the rounding gap above the last cumulative sum.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace detail

/**
 * One realization l of the configuration process. `cell(n)` is defined for
 * every integer n and is a pure function of (process, seed, n). Safe to share
 * between threads: the caches are insert-only and guarded.
 */
class TubeRealization {
 public:
  TubeRealization(CellTemplate tpl, ConfigurationProcess process, std::uint64_t master_seed)
      : tpl_(std::move(tpl)), process_(std::move(process)), seed_(master_seed) {
    if (auto problems = process_problems(process_); !problems.empty()) {
      throw std::invalid_argument("configuration process: " + problems.front());
    }
    for (const auto& cfg : process_.library) geometry_.push_back(CellGeometry::compile(tpl_, cfg));
    if (process_.variant == ProcessVariant::markov) {
      backward_.resize(process_.library.size(), std::vector<double>(process_.library.size()));
      for (std::size_t b = 0; b < process_.library.size(); ++b) {
        for (std::size_t a = 0; a < process_.library.size(); ++a) {
          backward_[b][a] = process_.stationary[a] * process_.transition[a][b] / process_.stationary[b];
        }
      }
    }
  }

  TubeRealization(const TubeRealization&) = delete;
  TubeRealization& operator=(const TubeRealization&) = delete;

  const CellTemplate& cell_template() const { return tpl_; }
  const ConfigurationProcess& process() const { return process_; }
  std::uint64_t master_seed() const { return seed_; }

  /// Library index of cell n (library variants only; iid_jitter returns the base).
  std::size_t index(std::int64_t n) const {
    switch (process_.variant) {
      case ProcessVariant::iid: {
        if (process_.library.size() == 1) return 0;
        KeyedRng rng(seed_, Stream::cell, n);
        return detail::sample_discrete(process_.probabilities, rng.uniform());
      }
      case ProcessVariant::markov:
        return markov_index(n);
      case ProcessVariant::iid_jitter:
        return process_.jitter_base;
    }
    return 0;
  }

  const CellConfig& cell(std::int64_t n) const {
    if (process_.variant != ProcessVariant::iid_jitter) return process_.library[index(n)];
    return jitter_entry(n).config;
  }

  const CellGeometry& geometry(std::int64_t n) const {
    if (process_.variant != ProcessVariant::iid_jitter) return geometry_[index(n)];
    return jitter_entry(n).geometry;
  }

 private:
  struct JitterEntry {
    CellConfig config;
    CellGeometry geometry;
  };

  std::size_t markov_index(std::int64_t n) const {
    {
      std::shared_lock lock(mutex_);
      if (n >= 0 && static_cast<std::size_t>(n) < forward_.size()) return forward_[static_cast<std::size_t>(n)];
      if (n < 0 && static_cast<std::size_t>(-(n + 1)) < negative_.size()) {
        return negative_[static_cast<std::size_t>(-(n + 1))];
      }
    }
    std::unique_lock lock(mutex_);
    if (forward_.empty()) {
      KeyedRng rng(seed_, Stream::cell, 0);
      forward_.push_back(detail::sample_discrete(process_.stationary, rng.uniform()));
    }
    while (n >= 0 && static_cast<std::size_t>(n) >= forward_.size()) {
      const auto k = static_cast<std::int64_t>(forward_.size());
      KeyedRng rng(seed_, Stream::cell, k);
      forward_.push_back(detail::sample_discrete(process_.transition[forward_.back()], rng.uniform()));
    }
    while (n < 0 && static_cast<std::size_t>(-(n + 1)) >= negative_.size()) {
      const auto k = -static_cast<std::int64_t>(negative_.size()) - 1;
      const std::size_t after = negative_.empty() ? forward_.front() : negative_.back();
      KeyedRng rng(seed_, Stream::cell, k);
      negative_.push_back(detail::sample_discrete(backward_[after], rng.uniform()));
    }
    return n >= 0 ? forward_[static_cast<std::size_t>(n)] : negative_[static_cast<std::size_t>(-(n + 1))];
  }

  const JitterEntry& jitter_entry(std::int64_t n) const {
    {
      std::shared_lock lock(mutex_);
      if (auto it = jitter_.find(n); it != jitter_.end()) return *it->second;
    }
    KeyedRng rng(seed_, Stream::cell_jitter, n);
    const double a = process_.jitter_amplitude;
    const Vec2 offset{(2.0 * rng.uniform() - 1.0) * a, (2.0 * rng.uniform() - 1.0) * a};
    auto entry = std::make_unique<JitterEntry>();
    entry->config = process_.library[process_.jitter_base];
    for (auto& s : entry->config.scatterers) s = s.translated(offset);
    entry->geometry = CellGeometry::compile(tpl_, entry->config);
    std::unique_lock lock(mutex_);
    auto [it, inserted] = jitter_.try_emplace(n, std::move(entry));
    return *it->second;
  }

  CellTemplate tpl_;
  ConfigurationProcess process_;
  std::uint64_t seed_;
  std::vector<CellGeometry> geometry_;
  std::vector<std::vector<double>> backward_;

  mutable std::shared_mutex mutex_;
  mutable std::vector<std::size_t> forward_;
  mutable std::vector<std::size_t> negative_;
  mutable std::unordered_map<std::int64_t, std::unique_ptr<JitterEntry>> jitter_;
};

}  // namespace qtube
