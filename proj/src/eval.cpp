#include "tfuse/eval.hpp"

#include <charconv>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace tfuse {

std::string_view to_string(DistanceMetric metric) {
  return metric == DistanceMetric::kEuclidean ? "euclidean" : "cosine";
}

DistanceMetric parse_distance_metric(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  if (name == "cosine") return DistanceMetric::kCosine;
  throw std::invalid_argument("unknown distance metric '" + std::string(name) + "'");
}

void write_embeddings(std::ostream& os, const EmbeddingSet<double>& set) {
  char buf[32];
  for (Index i = 0; i < set.size(); ++i) {
    const auto r = static_cast<std::size_t>(i);
    os << set.ids[r] << '\t' << set.identities[r] << '\t' << set.cameras[r] << '\t'
       << (set.roles[r] == Role::kQuery ? "query" : "gallery") << '\t';
    for (Index d = 0; d < set.embeddings.cols(); ++d) {
      auto res = std::to_chars(buf, buf + sizeof(buf), set.embeddings(i, d));
      if (d) os << ' ';
      os.write(buf, res.ptr - buf);
    }
    os << '\n';
  }
}

EmbeddingSet<double> read_embeddings(std::istream& is) {
  EmbeddingSet<double> out;
  std::vector<std::vector<double>> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "embeddings:" + std::to_string(line_no) + ": ";
    std::istringstream fields(line);
    std::string id, identity, camera, role, values;
    if (!std::getline(fields, id, '\t') || !std::getline(fields, identity, '\t') ||
        !std::getline(fields, camera, '\t') || !std::getline(fields, role, '\t') || !std::getline(fields, values)) {
      throw std::runtime_error(where + "expected 5 tab-separated fields");
    }
    if (role != "query" && role != "gallery") throw std::runtime_error(where + "role must be query or gallery");
    std::vector<double> row;
    const char* p = values.data();
    const char* end = p + values.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc()) throw std::runtime_error(where + "bad embedding value");
      row.push_back(v);
      p = res.ptr;
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw std::runtime_error(where + "embedding width changed");
    try {
      out.identities.push_back(std::stoi(identity));
      out.cameras.push_back(std::stoi(camera));
    } catch (const std::exception&) {
      throw std::runtime_error(where + "identity and camera must be integers");
    }
    out.ids.push_back(id);
    out.roles.push_back(role == "query" ? Role::kQuery : Role::kGallery);
    rows.push_back(std::move(row));
  }
  const Index cols = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  out.embeddings.resize(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Index d = 0; d < cols; ++d) out.embeddings(static_cast<Index>(i), d) = rows[i][static_cast<std::size_t>(d)];
  }
  return out;
}

void write_report(std::ostream& os, const RetrievalMetrics& m) {
  os << std::fixed << std::setprecision(2);
  os << "metric      value\n";
  os << "mAP         " << 100.0 * m.map << "\n";
  os << "rank-1      " << 100.0 * m.rank1 << "\n";
  os << "rank-5      " << 100.0 * m.rank5 << "\n";
  os << "rank-10     " << 100.0 * m.rank10 << "\n";
  os << "queries     " << m.evaluated_queries << " (" << m.excluded_queries << " excluded)\n";
  os << std::defaultfloat << std::setprecision(17);
  os << "map=" << m.map << "\n";
  os << "rank1=" << m.rank1 << "\n";
  os << "rank5=" << m.rank5 << "\n";
  os << "rank10=" << m.rank10 << "\n";
  os << "excluded_queries=" << m.excluded_queries << "\n";
}

}  // namespace tfuse
