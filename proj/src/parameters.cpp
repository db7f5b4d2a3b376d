#include "tfuse/parameters.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace tfuse {
namespace {

constexpr std::string_view kMagic = "tfuse-checkpoint";
constexpr int kVersion = 1;

}  // namespace

void ParameterStore::add(const std::string& path, Tensor value) {
  if (path.empty() || path.find_first_of(" \t\n") != std::string::npos) {
    throw std::invalid_argument("invalid parameter path '" + path + "'");
  }
  if (!params_.emplace(path, std::move(value)).second) {
    throw std::invalid_argument("duplicate parameter path '" + path + "'");
  }
}

const Tensor& ParameterStore::get(const std::string& path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + path + "'");
  return it->second;
}

Tensor& ParameterStore::get_mutable(const std::string& path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + path + "'");
  return it->second;
}

std::vector<std::string> ParameterStore::paths() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [path, _] : params_) out.push_back(path);
  return out;
}

Index ParameterStore::total_elements() const {
  Index n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

// Layout:
//   tfuse-checkpoint 1
//   <parameter count>
//   then per parameter, in path order, two lines:
//   <path> <rank> <dim0> ... <dimN-1>
//   <value0> <value1> ...            (row-major, 17 significant digits)
void ParameterStore::save(std::ostream& os) const {
  os << kMagic << ' ' << kVersion << '\n' << params_.size() << '\n';
  char buf[32];
  for (const auto& [path, t] : params_) {
    os << path << ' ' << t.rank();
    for (Index d : t.shape()) os << ' ' << d;
    os << '\n';
    for (Index i = 0; i < t.size(); ++i) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), t[i], std::chars_format::general, 17);
      if (i) os << ' ';
      os.write(buf, end - buf);
    }
    os << '\n';
  }
}

void ParameterStore::save(const std::filesystem::path& file) const {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write checkpoint " + file.string());
  save(os);
}

ParameterStore ParameterStore::load(std::istream& is) {
  std::string magic;
  int version = 0;
  std::size_t count = 0;
  if (!(is >> magic >> version) || magic != kMagic) throw std::runtime_error("not a tfuse checkpoint");
  if (version != kVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  if (!(is >> count)) throw std::runtime_error("checkpoint: missing parameter count");
  ParameterStore store;
  for (std::size_t p = 0; p < count; ++p) {
    std::string path;
    Index rank = 0;
    if (!(is >> path >> rank) || rank < 0) throw std::runtime_error("checkpoint: bad header for entry " + std::to_string(p));
    Shape shape(static_cast<std::size_t>(rank));
    for (Index& d : shape) {
      if (!(is >> d)) throw std::runtime_error("checkpoint: bad shape for '" + path + "'");
    }
    Tensor t(shape);
    std::string token;
    for (Index i = 0; i < t.size(); ++i) {
      if (!(is >> token)) throw std::runtime_error("checkpoint: truncated values for '" + path + "'");
      auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), t[i]);
      if (ec != std::errc() || ptr != token.data() + token.size()) {
        throw std::runtime_error("checkpoint: bad number '" + token + "' in '" + path + "'");
      }
    }
    store.add(path, std::move(t));
  }
  return store;
}

ParameterStore ParameterStore::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot open checkpoint " + file.string());
  return load(is);
}

Tensor random_normal(const Shape& shape, double stddev, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

Tensor random_uniform(const Shape& shape, double lo, double hi, Rng& rng) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace tfuse
