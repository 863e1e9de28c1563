#pragma once

// Positive-pair layouts over K views and their closed-form pair counts and
// forward-compute costs.

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ecpp {

enum class PairingStrategy { TwoView, CoreView, FullGraph, MultiCrop, Ecpp };

inline constexpr PairingStrategy kAllStrategies[] = {PairingStrategy::TwoView, PairingStrategy::CoreView,
                                                     PairingStrategy::FullGraph, PairingStrategy::MultiCrop,
                                                     PairingStrategy::Ecpp};

inline std::string_view to_string(PairingStrategy s) {
  switch (s) {
    case PairingStrategy::TwoView: return "two_view";
    case PairingStrategy::CoreView: return "core_view";
    case PairingStrategy::FullGraph: return "full_graph";
    case PairingStrategy::MultiCrop: return "multi_crop";
    case PairingStrategy::Ecpp: return "ecpp";
  }
  return "?";
}

inline std::optional<PairingStrategy> parse_strategy(std::string_view s) {
  for (auto st : kAllStrategies)
    if (to_string(st) == s) return st;
  return std::nullopt;
}

inline bool strategy_accepts(PairingStrategy s, int k) {
  return s == PairingStrategy::TwoView ? k == 2 : k >= 2;
}

inline void check_strategy(PairingStrategy s, int k) {
  if (!strategy_accepts(s, k))
    throw std::invalid_argument(std::string(to_string(s)) + " does not accept k=" + std::to_string(k));
}

/// Unordered 0-based view pair, first < second.
using ViewPair = std::pair<int, int>;
using PairSet = std::vector<ViewPair>;

inline PairSet enumerate_pairs(PairingStrategy s, int k) {
  check_strategy(s, k);
  PairSet out;
  switch (s) {
    case PairingStrategy::TwoView:
      out.emplace_back(0, 1);
      break;
    case PairingStrategy::CoreView:
      for (int j = 1; j < k; ++j) out.emplace_back(0, j);
      break;
    case PairingStrategy::FullGraph:
    case PairingStrategy::Ecpp:
      for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) out.emplace_back(i, j);
      break;
    case PairingStrategy::MultiCrop:
      for (int i = 0; i < 2; ++i)
        for (int j = i + 1; j < k; ++j) out.emplace_back(i, j);
      break;
  }
  return out;
}

inline std::size_t positive_pair_count(PairingStrategy s, int k, std::size_t n) {
  check_strategy(s, k);
  if (n < 1) throw std::invalid_argument("positive_pair_count: n must be at least 1");
  const auto kk = static_cast<std::size_t>(k);
  switch (s) {
    case PairingStrategy::TwoView: return n;
    case PairingStrategy::CoreView: return (kk - 1) * n;
    case PairingStrategy::FullGraph:
    case PairingStrategy::Ecpp: return kk * (kk - 1) / 2 * n;
    case PairingStrategy::MultiCrop: return (2 * kk - 3) * n;
  }
  return 0;
}

/// Forward cost in large-view units; size_ratio is small area / large area.
inline double compute_cost(PairingStrategy s, int k, std::size_t n, double size_ratio) {
  check_strategy(s, k);
  if (!(size_ratio > 0.0 && size_ratio <= 1.0)) throw std::invalid_argument("compute_cost: size_ratio must lie in (0, 1]");
  const double nn = static_cast<double>(n);
  switch (s) {
    case PairingStrategy::TwoView: return 2.0 * nn;
    case PairingStrategy::CoreView:
    case PairingStrategy::FullGraph: return k * nn;
    case PairingStrategy::MultiCrop:
    case PairingStrategy::Ecpp: return 2.0 * nn + (k - 2) * nn * size_ratio;
  }
  return 0.0;
}

inline double pairs_per_unit_compute(PairingStrategy s, int k, double size_ratio) {
  return static_cast<double>(positive_pair_count(s, k, 1)) / compute_cost(s, k, 1, size_ratio);
}

}  // namespace ecpp
