#pragma once

#include "tfuse/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <iosfwd>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tfuse {

enum class DistanceMetric { kEuclidean, kCosine };

std::string_view to_string(DistanceMetric metric);
DistanceMetric parse_distance_metric(std::string_view name);

enum class Role { kQuery, kGallery };

/// Embeddings with their retrieval metadata; one row per tracklet.
template <typename Scalar = double>
struct EmbeddingSet {
  RowMatrix<Scalar> embeddings;
  std::vector<std::string> ids;
  std::vector<int> identities;
  std::vector<int> cameras;
  std::vector<Role> roles;

  Index size() const { return embeddings.rows(); }
  /// Rows with the given role, in order.
  EmbeddingSet subset(Role role) const {
    EmbeddingSet out;
    std::vector<Index> rows;
    for (Index i = 0; i < size(); ++i) {
      if (roles[static_cast<std::size_t>(i)] == role) rows.push_back(i);
    }
    out.embeddings.resize(static_cast<Index>(rows.size()), embeddings.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = static_cast<std::size_t>(rows[k]);
      out.embeddings.row(static_cast<Index>(k)) = embeddings.row(rows[k]);
      out.ids.push_back(ids[r]);
      out.identities.push_back(identities[r]);
      out.cameras.push_back(cameras[r]);
      out.roles.push_back(role);
    }
    return out;
  }
};

/// Pairwise distances [Nq×Ng] between query rows and gallery rows. Cosine
/// distance is 1 − cos, with a zero vector treated as orthogonal to everything.
template <typename DerivedQ, typename DerivedG>
RowMatrix<typename DerivedQ::Scalar> distance_matrix(const Eigen::MatrixBase<DerivedQ>& q,
                                                     const Eigen::MatrixBase<DerivedG>& g,
                                                     DistanceMetric metric = DistanceMetric::kEuclidean) {
  using Scalar = typename DerivedQ::Scalar;
  if (q.cols() != g.cols()) {
    throw std::invalid_argument("distance_matrix: query dim " + std::to_string(q.cols()) + " != gallery dim " +
                                std::to_string(g.cols()));
  }
  RowMatrix<Scalar> d(q.rows(), g.rows());
  if (metric == DistanceMetric::kEuclidean) {
    for (Index i = 0; i < q.rows(); ++i) {
      for (Index j = 0; j < g.rows(); ++j) d(i, j) = (q.row(i) - g.row(j)).norm();
    }
    return d;
  }
  for (Index i = 0; i < q.rows(); ++i) {
    const Scalar nq = q.row(i).norm();
    for (Index j = 0; j < g.rows(); ++j) {
      const Scalar ng = g.row(j).norm();
      const Scalar cos = (nq > 0 && ng > 0) ? Scalar(q.row(i).dot(g.row(j)) / (nq * ng)) : Scalar(0);
      d(i, j) = Scalar(1) - cos;
    }
  }
  return d;
}

/// Retrieval labels for one side of the protocol.
struct Labels {
  std::span<const int> identities;
  std::span<const int> cameras;
};

/// Ranked gallery of one query after camera exclusion: `relevant[k]` says
/// whether the k-th ranked entry shares the query identity.
struct RankedList {
  std::vector<Index> order;
  std::vector<bool> relevant;
  bool has_match() const { return std::find(relevant.begin(), relevant.end(), true) != relevant.end(); }
};

/// Sorts gallery entries by distance with ties broken by gallery index,
/// dropping entries of the query identity seen by the query camera.
template <typename Derived>
RankedList rank_gallery(const Eigen::MatrixBase<Derived>& dist, Index query, const Labels& q, const Labels& g) {
  RankedList out;
  const int id = q.identities[static_cast<std::size_t>(query)];
  const int cam = q.cameras[static_cast<std::size_t>(query)];
  for (Index j = 0; j < dist.cols(); ++j) {
    const auto js = static_cast<std::size_t>(j);
    if (g.identities[js] == id && g.cameras[js] == cam) continue;
    out.order.push_back(j);
  }
  std::stable_sort(out.order.begin(), out.order.end(),
                   [&](Index a, Index b) { return dist(query, a) < dist(query, b); });
  for (Index j : out.order) out.relevant.push_back(g.identities[static_cast<std::size_t>(j)] == id);
  return out;
}

namespace detail {
inline void check_labels(Index rows, Index cols, const Labels& q, const Labels& g) {
  if (static_cast<Index>(q.identities.size()) != rows || static_cast<Index>(q.cameras.size()) != rows ||
      static_cast<Index>(g.identities.size()) != cols || static_cast<Index>(g.cameras.size()) != cols) {
    throw std::invalid_argument("label arrays do not match the distance matrix");
  }
}
}  // namespace detail

struct CmcResult {
  /// accuracy[k] is the rank-(ranks[k]) accuracy.
  std::vector<Index> ranks;
  std::vector<double> accuracy;
  Index evaluated = 0;
  /// Queries without any cross-camera match, left out of every average.
  Index excluded = 0;
};

template <typename Derived>
CmcResult cmc(const Eigen::MatrixBase<Derived>& dist, const Labels& q, const Labels& g, std::vector<Index> ranks) {
  detail::check_labels(dist.rows(), dist.cols(), q, g);
  for (Index k : ranks) {
    if (k < 1) throw std::invalid_argument("cmc: ranks start at 1");
  }
  CmcResult out;
  out.ranks = std::move(ranks);
  std::vector<Index> hits(out.ranks.size(), 0);
  for (Index i = 0; i < dist.rows(); ++i) {
    const RankedList list = rank_gallery(dist, i, q, g);
    const auto first = std::find(list.relevant.begin(), list.relevant.end(), true);
    if (first == list.relevant.end()) {
      ++out.excluded;
      continue;
    }
    ++out.evaluated;
    const Index pos = first - list.relevant.begin();
    for (std::size_t k = 0; k < out.ranks.size(); ++k) hits[k] += pos < out.ranks[k] ? 1 : 0;
  }
  for (Index h : hits) out.accuracy.push_back(out.evaluated ? static_cast<double>(h) / out.evaluated : 0.0);
  return out;
}

/// Average precision of one ranked list; 0 when nothing is relevant.
inline double average_precision(const std::vector<bool>& relevant) {
  double acc = 0.0;
  Index found = 0;
  for (std::size_t k = 0; k < relevant.size(); ++k) {
    if (!relevant[k]) continue;
    ++found;
    acc += static_cast<double>(found) / static_cast<double>(k + 1);
  }
  return found ? acc / static_cast<double>(found) : 0.0;
}

struct MapResult {
  double map = 0.0;
  Index evaluated = 0;
  Index excluded = 0;
};

template <typename Derived>
MapResult mean_average_precision(const Eigen::MatrixBase<Derived>& dist, const Labels& q, const Labels& g) {
  detail::check_labels(dist.rows(), dist.cols(), q, g);
  MapResult out;
  double total = 0.0;
  for (Index i = 0; i < dist.rows(); ++i) {
    const RankedList list = rank_gallery(dist, i, q, g);
    if (!list.has_match()) {
      ++out.excluded;
      continue;
    }
    ++out.evaluated;
    total += average_precision(list.relevant);
  }
  out.map = out.evaluated ? total / static_cast<double>(out.evaluated) : 0.0;
  return out;
}

struct RetrievalMetrics {
  double map = 0.0;
  double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0;
  Index evaluated_queries = 0;
  Index excluded_queries = 0;
};

/// Full protocol over query and gallery sets. Throws "empty test set" when
/// either side is empty and when no query has a valid match.
template <typename Scalar>
RetrievalMetrics evaluate(const EmbeddingSet<Scalar>& query, const EmbeddingSet<Scalar>& gallery,
                          DistanceMetric metric = DistanceMetric::kEuclidean) {
  if (query.size() == 0 || gallery.size() == 0) throw std::runtime_error("empty test set");
  const auto dist = distance_matrix(query.embeddings, gallery.embeddings, metric);
  const Labels q{query.identities, query.cameras};
  const Labels g{gallery.identities, gallery.cameras};
  const CmcResult c = cmc(dist, q, g, {1, 5, 10});
  if (c.evaluated == 0) throw std::runtime_error("empty test set: no query has a cross-camera match");
  const MapResult m = mean_average_precision(dist, q, g);
  return {m.map, c.accuracy[0], c.accuracy[1], c.accuracy[2], c.evaluated, c.excluded};
}

/// Line format: `id\tidentity\tcamera\trole\tv1 v2 ...` with role `query` or `gallery`.
void write_embeddings(std::ostream& os, const EmbeddingSet<double>& set);
EmbeddingSet<double> read_embeddings(std::istream& is);

/// Text table followed by `key=value` lines (map, rank1, rank5, rank10, excluded_queries).
void write_report(std::ostream& os, const RetrievalMetrics& m);

}  // namespace tfuse
