#pragma once

// NT-Xent family over view pairs, and the BYOL regression loss.
//
// For one pair of views (A, B) of n items the 2n embeddings form one
// contrastive problem: each embedding is an anchor whose positive is its
// partner in the other view, and whose negatives are the other embeddings of
// the two views. Anchor z_n never appears in its own denominator. With
// exclude_self_positive the partner is removed from the denominator as well.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecpp/pairing.hpp"
#include "ecpp/tensor.hpp"

namespace ecpp {

inline constexpr double kDefaultTemperature = 0.2;

struct ContrastiveOptions {
  double tau = kDefaultTemperature;
  bool exclude_self_positive = false;
  /// Negatives from all K views instead of only the two views of the pair.
  bool pooled_negatives = false;
};

template <typename T>
struct LossReport {
  BasicTensor<T> loss;
  std::size_t positive_pair_terms = 0;
  std::size_t ordered_terms = 0;
};

/// K views × n items × d dims, rows unit-norm.
template <typename T>
class EmbeddingBatch {
 public:
  explicit EmbeddingBatch(BasicTensor<T> z) : z_(std::move(z)) {
    if (z_.rank() != 3) throw ShapeError("EmbeddingBatch: expected k×n×d, got " + shape_str(z_.shape()));
  }

  static EmbeddingBatch from_views(const std::vector<BasicTensor<T>>& views) { return EmbeddingBatch(stack(views)); }

  int k() const { return static_cast<int>(z_.dim(0)); }
  std::size_t n() const { return z_.dim(1); }
  std::size_t d() const { return z_.dim(2); }
  const BasicTensor<T>& z() const { return z_; }
  BasicTensor<T> view(int v) const { return select(z_, static_cast<std::size_t>(v)); }

  /// Largest | ‖row‖ - 1 | over all (view, item) rows.
  double max_norm_deviation() const {
    const auto data = z_.data();
    const std::size_t dd = d();
    double worst = 0.0;
    for (std::size_t r = 0; r < data.size() / dd; ++r) {
      double ss = 0.0;
      for (std::size_t j = 0; j < dd; ++j) ss += static_cast<double>(data[r * dd + j]) * data[r * dd + j];
      worst = std::max(worst, std::abs(std::sqrt(ss) - 1.0));
    }
    return worst;
  }

 private:
  BasicTensor<T> z_;
};

template <typename T>
BasicTensor<T> cosine_sim_matrix(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("cosine_sim_matrix: expected n×d and m×d, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  return matmul(a, transpose(b));
}

namespace detail {
inline void check_contrastive(std::size_t n, double tau, bool exclude) {
  if (!(tau > 0.0)) throw DomainError("temperature must be positive");
  if (n < 1) throw ShapeError("contrastive loss needs at least one item");
  if (exclude && n < 2) throw DomainError("excluding the self-augmented positive with n = 1 leaves an empty denominator");
}
}  // namespace detail

/// One ordered term: anchor row `index` of `anchor_view` against its positive
/// in `positive_view`.
template <typename T>
BasicTensor<T> ntxent_ordered_term(const BasicTensor<T>& anchor_view, const BasicTensor<T>& positive_view,
                                   std::size_t index, double tau, bool exclude_self_positive) {
  if (anchor_view.shape() != positive_view.shape() || anchor_view.rank() != 2)
    throw ShapeError("ntxent_ordered_term: views must share an n×d shape");
  const std::size_t n = anchor_view.dim(0);
  detail::check_contrastive(n, tau, exclude_self_positive);
  if (index >= n) throw ShapeError("ntxent_ordered_term: index out of range");
  auto anchor = slice(anchor_view, index, index + 1);
  auto logits = scale(cosine_sim_matrix(anchor, concat<T>({anchor_view, positive_view})), static_cast<T>(1.0 / tau));
  std::vector<std::uint8_t> mask(2 * n, 1);
  mask[index] = 0;
  if (exclude_self_positive) mask[n + index] = 0;
  auto lse = masked_logsumexp(logits, mask);
  auto pos = take(logits, {0}, {n + index});
  return sum(sub(lse, pos));
}

/// Σ_n ℓ(z_n, z_n') + ℓ(z_n', z_n) over one pair of views.
template <typename T>
LossReport<T> simclr_loss(const BasicTensor<T>& view_a, const BasicTensor<T>& view_b, const ContrastiveOptions& opt) {
  if (view_a.shape() != view_b.shape() || view_a.rank() != 2)
    throw ShapeError("simclr_loss: views must share an n×d shape");
  const std::size_t n = view_a.dim(0);
  detail::check_contrastive(n, opt.tau, opt.exclude_self_positive);
  auto z = concat<T>({view_a, view_b});
  auto logits = scale(cosine_sim_matrix(z, z), static_cast<T>(1.0 / opt.tau));
  const std::size_t m = 2 * n;
  std::vector<std::uint8_t> mask(m * m, 1);
  std::vector<std::size_t> rows(m), partners(m);
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t partner = r < n ? r + n : r - n;
    rows[r] = r;
    partners[r] = partner;
    mask[r * m + r] = 0;
    if (opt.exclude_self_positive) mask[r * m + partner] = 0;
  }
  auto lse = masked_logsumexp(logits, mask);
  auto pos = take(logits, std::move(rows), std::move(partners));
  return {sum(sub(lse, pos)), n, 2 * n};
}

namespace detail {

// Pair (i, j) with anchors from both views and negatives drawn from every
// view. With exclude_self_positive all other views of the anchor's item are
// dropped from the denominator too.
template <typename T>
BasicTensor<T> pooled_pair_loss(const EmbeddingBatch<T>& batch, int vi, int vj, const ContrastiveOptions& opt) {
  const std::size_t n = batch.n();
  const std::size_t k = static_cast<std::size_t>(batch.k());
  const std::size_t cols = k * n;
  auto all = reshape(batch.z(), {cols, batch.d()});
  auto anchors = concat<T>({batch.view(vi), batch.view(vj)});
  auto logits = scale(cosine_sim_matrix(anchors, all), static_cast<T>(1.0 / opt.tau));
  std::vector<std::uint8_t> mask(2 * n * cols, 1);
  std::vector<std::size_t> rows(2 * n), partners(2 * n);
  for (std::size_t r = 0; r < 2 * n; ++r) {
    const std::size_t item = r % n;
    const std::size_t own = static_cast<std::size_t>(r < n ? vi : vj);
    const std::size_t other = static_cast<std::size_t>(r < n ? vj : vi);
    rows[r] = r;
    partners[r] = other * n + item;
    mask[r * cols + own * n + item] = 0;
    if (opt.exclude_self_positive)
      for (std::size_t v = 0; v < k; ++v)
        if (v != own) mask[r * cols + v * n + item] = 0;
  }
  if (opt.exclude_self_positive && n < 2) throw DomainError("pooled negatives: empty denominator with n = 1");
  auto lse = masked_logsumexp(logits, mask);
  auto pos = take(logits, std::move(rows), std::move(partners));
  return sum(sub(lse, pos));
}

}  // namespace detail

/// Σ over the strategy's view pairs of the pair loss. FullGraph with
/// exclude_self_positive=false is the vanilla K-view loss; Ecpp pairs with
/// exclude_self_positive=true is the ECPP loss.
template <typename T>
LossReport<T> kview_loss(const EmbeddingBatch<T>& batch, PairingStrategy strategy, const ContrastiveOptions& opt) {
  const auto pairs = enumerate_pairs(strategy, batch.k());
  BasicTensor<T> total;
  for (const auto& [i, j] : pairs) {
    BasicTensor<T> term = opt.pooled_negatives ? detail::pooled_pair_loss(batch, i, j, opt)
                                               : simclr_loss(batch.view(i), batch.view(j), opt).loss;
    total = total.defined() ? add(total, term) : term;
  }
  return {total, pairs.size() * batch.n(), 2 * pairs.size() * batch.n()};
}

/// Same as kview_loss but over separately held n×d view tensors.
template <typename T>
LossReport<T> kview_loss(const std::vector<BasicTensor<T>>& views, PairingStrategy strategy,
                         const ContrastiveOptions& opt) {
  if (!opt.pooled_negatives) {
    const auto pairs = enumerate_pairs(strategy, static_cast<int>(views.size()));
    BasicTensor<T> total;
    for (const auto& [i, j] : pairs) {
      auto term = simclr_loss(views[i], views[j], opt).loss;
      total = total.defined() ? add(total, term) : term;
    }
    return {total, pairs.size() * views[0].dim(0), 2 * pairs.size() * views[0].dim(0)};
  }
  return kview_loss(EmbeddingBatch<T>::from_views(views), strategy, opt);
}

/// mean_n (2 - 2·p_n·t_n) for unit rows. The target side is detached unless
/// stop_gradient is false.
template <typename T>
BasicTensor<T> byol_pair_loss(const BasicTensor<T>& online_pred, const BasicTensor<T>& target_proj,
                              bool stop_gradient = true) {
  if (online_pred.shape() != target_proj.shape() || online_pred.rank() != 2)
    throw ShapeError("byol_pair_loss: expected matching n×d inputs");
  const auto target = stop_gradient ? target_proj.detach() : target_proj;
  auto dots = sum(mul(online_pred, target), 1);
  return mean(add_scalar(scale(dots, T(-2)), T(2)));
}

/// Σ over pairs (i, j) of byol(online_i, target_j) + byol(online_j, target_i).
template <typename T>
LossReport<T> byol_kview_loss(const std::vector<BasicTensor<T>>& online, const std::vector<BasicTensor<T>>& target,
                              PairingStrategy strategy, bool stop_gradient = true) {
  if (online.size() != target.size() || online.empty()) throw ShapeError("byol_kview_loss: view count mismatch");
  for (std::size_t v = 0; v < online.size(); ++v)
    if (online[v].shape() != online[0].shape() || target[v].shape() != online[0].shape())
      throw ShapeError("byol_kview_loss: all views must share an n×d shape");
  const auto pairs = enumerate_pairs(strategy, static_cast<int>(online.size()));
  BasicTensor<T> total;
  for (const auto& [i, j] : pairs) {
    auto term = add(byol_pair_loss(online[i], target[j], stop_gradient), byol_pair_loss(online[j], target[i], stop_gradient));
    total = total.defined() ? add(total, term) : term;
  }
  const std::size_t n = online[0].dim(0);
  return {total, pairs.size() * n, 2 * pairs.size() * n};
}

}  // namespace ecpp
