#include "tfuse/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace tfuse {
namespace {

using Color = std::array<double, 3>;

constexpr std::array<Color, 10> kPalette{{
    {0.80, 0.15, 0.15},  // red
    {0.15, 0.65, 0.20},  // green
    {0.15, 0.25, 0.80},  // blue
    {0.85, 0.80, 0.20},  // yellow
    {0.92, 0.92, 0.92},  // white
    {0.08, 0.08, 0.08},  // black
    {0.50, 0.50, 0.50},  // gray
    {0.50, 0.30, 0.15},  // brown
    {0.55, 0.20, 0.60},  // purple
    {0.90, 0.50, 0.10},  // orange
}};

Color pick_color(Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, kPalette.size() - 1);
  std::uniform_real_distribution<double> jitter(-0.06, 0.06);
  Color c = kPalette[pick(rng)];
  for (double& v : c) v = std::clamp(v + jitter(rng), 0.0, 1.0);
  return c;
}

bool inside_ellipse(double u, double v, double cu, double cv, double ru, double rv) {
  const double a = (u - cu) / ru, b = (v - cv) / rv;
  return a * a + b * b <= 1.0;
}

// Color of the canonical layout at normalized coordinates (u down, v across);
// returns false on background.
bool template_color(const IdentityTemplate& t, const ViewTransform& view, double u, double v, Color& out) {
  const double half = t.torso_width / 2.0;
  if (inside_ellipse(u, v, 0.12, 0.5, 0.08, 0.17)) {
    out = t.hair;
    return true;
  }
  if (u >= 0.21 && u <= 0.55 && std::abs(v - 0.5) <= half) {
    out = t.torso;
    if (t.has_stripes && static_cast<int>((u - 0.21) / 0.05) % 2 == 1) out = t.stripe;
    if (!view.back && t.has_logo && std::abs(u - t.logo_y) <= 0.05 && std::abs(v - t.logo_x) <= 0.12) out = t.logo;
    return true;
  }
  if (t.has_bag && u >= 0.28 && u <= 0.58 && v > 0.5 + half && v <= 0.5 + half + 0.14) {
    out = t.bag;
    return true;
  }
  if (u > 0.55 && u <= 0.97) {
    const double off = std::abs(v - 0.5);
    if (off >= 0.03 && off <= 0.22) {
      out = t.legs;
      return true;
    }
  }
  return false;
}

cv::Mat to_mat(const Tensor& frame) {
  const Index c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  cv::Mat mat(static_cast<int>(h), static_cast<int>(w), c == 1 ? CV_8UC1 : CV_8UC3);
  for (Index y = 0; y < h; ++y) {
    auto* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
    for (Index x = 0; x < w; ++x) {
      for (Index ch = 0; ch < c; ++ch) {
        const double v = std::clamp(frame[(ch * h + y) * w + x], 0.0, 1.0);
        // OpenCV stores BGR.
        row[x * c + (c - 1 - ch)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return mat;
}

void from_mat(const cv::Mat& mat, Index channels, double* dst) {
  const Index h = mat.rows, w = mat.cols;
  for (Index y = 0; y < h; ++y) {
    const auto* row = mat.ptr<std::uint8_t>(static_cast<int>(y));
    for (Index x = 0; x < w; ++x) {
      for (Index ch = 0; ch < channels; ++ch) {
        dst[(ch * h + y) * w + x] = row[x * channels + (channels - 1 - ch)] / 255.0;
      }
    }
  }
}

bool supported_image(const std::filesystem::path& p) {
  static const std::set<std::string> kExt{".png", ".bmp", ".ppm", ".pgm", ".pbm", ".tif", ".tiff"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return kExt.count(ext) != 0;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Tensor stack_frames(const TrackletRecord& t, const std::vector<Index>& picks) {
  const Shape& s = t.frames.shape();
  const Index per = s[1] * s[2] * s[3];
  Tensor out(Shape{static_cast<Index>(picks.size()), s[1], s[2], s[3]});
  for (std::size_t i = 0; i < picks.size(); ++i) {
    std::copy_n(t.frames.data() + picks[i] * per, per, out.data() + static_cast<Index>(i) * per);
  }
  return out;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (num_identities < 1) throw std::invalid_argument("synthetic: num_identities must be >= 1");
  if (num_cameras < 2) throw std::invalid_argument("synthetic: every identity needs >= 2 cameras");
  if (num_views < 2) throw std::invalid_argument("synthetic: impossible config, num_views must be >= 2");
  if (num_views < num_cameras) throw std::invalid_argument("synthetic: need at least one view per camera");
  if (tracklets_per_camera < 1 || frames_per_tracklet < 1) {
    throw std::invalid_argument("synthetic: tracklets and frames must be >= 1");
  }
  if (image.size() != 3 || (image[0] != 1 && image[0] != 3) || image[1] < 1 || image[2] < 1) {
    throw std::invalid_argument("synthetic: image must be 1xHxW or 3xHxW");
  }
  if (duplicate_prob < 0 || duplicate_prob > 1 || occlusion_prob < 0 || occlusion_prob > 1) {
    throw std::invalid_argument("synthetic: probabilities must lie in [0, 1]");
  }
  if (duplicate_run < 0 || noise_sigma < 0 || duplicate_sigma < 0) {
    throw std::invalid_argument("synthetic: run length and noise levels must be non-negative");
  }
}

SyntheticWorld::SyntheticWorld(SyntheticConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int i = 0; i < config_.num_identities; ++i) {
    IdentityTemplate t;
    t.hair = pick_color(rng);
    t.torso = pick_color(rng);
    t.legs = pick_color(rng);
    t.logo = pick_color(rng);
    t.bag = pick_color(rng);
    t.stripe = pick_color(rng);
    t.has_logo = unit(rng) < 0.6;
    t.has_bag = unit(rng) < 0.4;
    t.has_stripes = unit(rng) < 0.35;
    t.logo_y = 0.30 + 0.15 * unit(rng);
    t.logo_x = 0.40 + 0.20 * unit(rng);
    t.torso_width = 0.5 + 0.2 * unit(rng);
    identities_.push_back(t);
  }
  for (int v = 0; v < config_.num_views; ++v) {
    ViewTransform view;
    if (v >= config_.num_cameras) {
      view.dx = 0.2 * unit(rng) - 0.1;
      view.dy = 0.1 * unit(rng) - 0.05;
      view.scale = 0.8 + 0.25 * unit(rng);
    }
    const int round = v / config_.num_cameras;
    view.back = round % 2 == 1;
    view.mirror = round >= 2;
    views_.push_back(view);
  }
  for (int c = 0; c < config_.num_cameras; ++c) {
    Color gain{};
    for (double& g : gain) g = 0.8 + 0.4 * unit(rng);
    camera_gain_.push_back(gain);
  }
}

std::vector<int> SyntheticWorld::camera_views(int camera) const {
  std::vector<int> out;
  for (int v = camera; v < config_.num_views; v += config_.num_cameras) out.push_back(v);
  return out;
}

Tensor SyntheticWorld::render(int identity, int view, int camera) const {
  const IdentityTemplate& t = identities_.at(static_cast<std::size_t>(identity));
  const ViewTransform& vt = views_.at(static_cast<std::size_t>(view));
  const Color& gain = camera_gain_.at(static_cast<std::size_t>(camera));
  const Index c = config_.image[0], h = config_.image[1], w = config_.image[2];
  Tensor frame(config_.image);
  const Color background{0.45, 0.45, 0.42};
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double u = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      const double v = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double cu = (u - 0.5 - vt.dy) / vt.scale + 0.5;
      double cv = (v - 0.5 - vt.dx) / vt.scale + 0.5;
      if (vt.mirror) cv = 1.0 - cv;
      Color color = background;
      template_color(t, vt, cu, cv, color);
      for (int ch = 0; ch < 3; ++ch) color[ch] = std::clamp(color[ch] * gain[ch], 0.0, 1.0);
      if (c == 1) {
        frame[y * w + x] = (color[0] + color[1] + color[2]) / 3.0;
      } else {
        for (Index ch = 0; ch < 3; ++ch) frame[(ch * h + y) * w + x] = color[ch];
      }
    }
  }
  return frame;
}

Tensor SyntheticWorld::noisy_render(int identity, int view, int camera, Rng& rng, bool* occluded) const {
  Tensor frame = render(identity, view, camera);
  const Index c = config_.image[0], h = config_.image[1], w = config_.image[2];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  *occluded = unit(rng) < config_.occlusion_prob;
  if (*occluded) {
    std::uniform_int_distribution<Index> height(std::max<Index>(1, h / 4), std::max<Index>(1, (h * 9) / 20));
    const Index band = height(rng);
    std::uniform_int_distribution<Index> start(0, h - band);
    const Index top = start(rng);
    const double fill = 0.2 + 0.6 * unit(rng);
    for (Index ch = 0; ch < c; ++ch) {
      for (Index y = top; y < top + band; ++y) {
        for (Index x = 0; x < w; ++x) frame[(ch * h + y) * w + x] = fill;
      }
    }
  }
  if (config_.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, config_.noise_sigma);
    for (Index i = 0; i < frame.size(); ++i) frame[i] = std::clamp(frame[i] + noise(rng), 0.0, 1.0);
  }
  return frame;
}

Dataset SyntheticWorld::generate() const {
  Dataset out;
  const Index per = shape_size(config_.image);
  const int length = config_.frames_per_tracklet;
  for (int id = 0; id < config_.num_identities; ++id) {
    for (int cam = 0; cam < config_.num_cameras; ++cam) {
      const std::vector<int> views = camera_views(cam);
      for (int k = 0; k < config_.tracklets_per_camera; ++k) {
        // Independent stream per tracklet keeps datasets stable when sizes change.
        Rng rng(config_.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>((id * 64 + cam) * 64 + k + 1)));
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
        const int home = views[pick(rng)];

        TrackletRecord rec;
        rec.id = "id" + std::to_string(id) + "_c" + std::to_string(cam) + "_t" + std::to_string(k);
        rec.identity = id;
        rec.camera = cam;
        rec.frames = Tensor(Shape{length, config_.image[0], config_.image[1], config_.image[2]});
        rec.flags.resize(static_cast<std::size_t>(length));
        int pending_duplicates = 0;
        std::uniform_real_distribution<double> tiny(-config_.duplicate_sigma / 2.0, config_.duplicate_sigma / 2.0);
        for (int i = 0; i < length; ++i) {
          double* dst = rec.frames.data() + i * per;
          FrameFlags& flags = rec.flags[static_cast<std::size_t>(i)];
          if (pending_duplicates > 0) {
            const double* prev = dst - per;
            for (Index p = 0; p < per; ++p) dst[p] = std::clamp(prev[p] + tiny(rng), 0.0, 1.0);
            flags.duplicate = true;
            flags.occluded = rec.flags[static_cast<std::size_t>(i - 1)].occluded;
            --pending_duplicates;
            continue;
          }
          const int view = unit(rng) < 0.75 ? home : views[pick(rng)];
          bool occluded = false;
          Tensor frame = noisy_render(id, view, cam, rng, &occluded);
          std::copy_n(frame.data(), per, dst);
          flags.distinct_view = true;
          flags.occluded = occluded;
          if (unit(rng) < config_.duplicate_prob) pending_duplicates = config_.duplicate_run;
        }
        out.push_back(std::move(rec));
      }
    }
  }
  return out;
}

TrackletRecord SyntheticWorld::redundancy_probe(int identity, int camera, int copies, Rng& rng,
                                                Index* distinct_index) const {
  if (copies < 1) throw std::invalid_argument("redundancy_probe: copies must be >= 1");
  std::vector<int> views = camera_views(camera);
  if (views.size() < 2) {
    views.clear();
    for (int v = 0; v < config_.num_views; ++v) views.push_back(v);
  }
  std::shuffle(views.begin(), views.end(), rng);
  const int base_view = views[0], other_view = views[1];

  const Index per = shape_size(config_.image);
  TrackletRecord rec;
  rec.identity = identity;
  rec.camera = camera;
  rec.id = "probe_id" + std::to_string(identity) + "_k" + std::to_string(copies);
  const Index length = copies + 1;
  rec.frames = Tensor(Shape{length, config_.image[0], config_.image[1], config_.image[2]});
  rec.flags.resize(static_cast<std::size_t>(length));

  std::uniform_int_distribution<Index> where(0, copies);
  const Index odd = where(rng);
  if (distinct_index) *distinct_index = odd;

  bool occluded = false;
  SyntheticWorld no_occlusion = *this;
  no_occlusion.config_.occlusion_prob = 0.0;
  const Tensor base = no_occlusion.noisy_render(identity, base_view, camera, rng, &occluded);
  const Tensor other = no_occlusion.noisy_render(identity, other_view, camera, rng, &occluded);
  std::uniform_real_distribution<double> tiny(-config_.duplicate_sigma / 2.0, config_.duplicate_sigma / 2.0);
  bool first_copy = true;
  for (Index i = 0; i < length; ++i) {
    double* dst = rec.frames.data() + i * per;
    FrameFlags& flags = rec.flags[static_cast<std::size_t>(i)];
    if (i == odd) {
      std::copy_n(other.data(), per, dst);
      flags.distinct_view = true;
      continue;
    }
    for (Index p = 0; p < per; ++p) dst[p] = std::clamp(base[p] + (first_copy ? 0.0 : tiny(rng)), 0.0, 1.0);
    flags.distinct_view = first_copy;
    flags.duplicate = !first_copy;
    first_copy = false;
  }
  return rec;
}

Dataset generate(const SyntheticConfig& config) { return SyntheticWorld(config).generate(); }

Dataset load_manifest(const std::filesystem::path& manifest, const Shape& image_shape) {
  if (image_shape.size() != 3 || (image_shape[0] != 1 && image_shape[0] != 3)) {
    throw std::invalid_argument("load_manifest: image shape must be 1xHxW or 3xHxW");
  }
  std::ifstream is(manifest);
  if (!is) throw std::runtime_error("manifest not found: " + manifest.string());
  const std::filesystem::path root = manifest.parent_path();
  const Index c = image_shape[0], h = image_shape[1], w = image_shape[2];
  const Index per = c * h * w;

  Dataset out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    const std::vector<std::string> fields = split_fields(line, '\t');
    if (fields.size() != 4) throw std::runtime_error(where + ": expected 4 tab-separated fields");
    TrackletRecord rec;
    rec.id = fields[0];
    try {
      std::size_t used = 0;
      rec.identity = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing characters");
      rec.camera = std::stoi(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::runtime_error(where + ": identity and camera must be integers");
    }
    if (rec.id.empty()) throw std::runtime_error(where + ": empty tracklet id");
    const std::vector<std::string> paths = split_fields(fields[3], ',');
    if (paths.empty() || std::any_of(paths.begin(), paths.end(), [](const std::string& p) { return p.empty(); })) {
      throw std::runtime_error(where + ": empty frame path");
    }
    rec.frames = Tensor(Shape{static_cast<Index>(paths.size()), c, h, w});
    rec.flags.assign(paths.size(), FrameFlags{});
    for (std::size_t i = 0; i < paths.size(); ++i) {
      std::filesystem::path p(paths[i]);
      if (p.is_relative()) p = root / p;
      if (!supported_image(p)) throw std::runtime_error(where + ": unsupported image format " + p.string());
      if (!std::filesystem::exists(p)) throw std::runtime_error(where + ": missing image " + p.string());
      cv::Mat mat = cv::imread(p.string(), c == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
      if (mat.empty()) throw std::runtime_error(where + ": unreadable image " + p.string());
      if (mat.rows != h || mat.cols != w) {
        cv::Mat resized;
        cv::resize(mat, resized, cv::Size(static_cast<int>(w), static_cast<int>(h)), 0, 0, cv::INTER_AREA);
        mat = resized;
      }
      from_mat(mat, c, rec.frames.data() + static_cast<Index>(i) * per);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

void export_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "frames");
  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  for (const TrackletRecord& t : dataset) {
    if (t.id.find_first_of("\t,/\\") != std::string::npos) {
      throw std::invalid_argument("tracklet id '" + t.id + "' cannot be used as a file name");
    }
    const fs::path sub = fs::path("frames") / t.id;
    fs::create_directories(dir / sub);
    const Shape& s = t.frames.shape();
    const Index per = s[1] * s[2] * s[3];
    manifest << t.id << '\t' << t.identity << '\t' << t.camera << '\t';
    for (Index i = 0; i < s[0]; ++i) {
      Tensor frame(Shape{s[1], s[2], s[3]});
      std::copy_n(t.frames.data() + i * per, per, frame.data());
      const fs::path rel = sub / (std::to_string(i) + ".png");
      if (!cv::imwrite((dir / rel).string(), to_mat(frame))) {
        throw std::runtime_error("cannot write image " + (dir / rel).string());
      }
      manifest << (i ? "," : "") << rel.generic_string();
    }
    manifest << '\n';
  }
}

Split split(const Dataset& dataset, double train_fraction, std::uint64_t seed) {
  if (train_fraction < 0.0 || train_fraction > 1.0) throw std::invalid_argument("split: train_fraction outside [0, 1]");
  std::map<int, std::vector<std::size_t>> by_identity;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_identity[dataset[i].identity].push_back(i);
  if (by_identity.size() < 2) throw std::invalid_argument("split: need at least 2 identities");

  std::vector<int> ids;
  for (const auto& [id, _] : by_identity) ids.push_back(id);
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::lround(train_fraction * static_cast<double>(ids.size())));

  Split out;
  out.train_identities.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(out.train_identities.begin(), out.train_identities.end());
  for (int id : out.train_identities) {
    for (std::size_t i : by_identity[id]) out.train.push_back(i);
  }

  std::vector<int> test_ids(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(test_ids.begin(), test_ids.end());
  for (int id : test_ids) {
    std::set<int> cams;
    for (std::size_t i : by_identity[id]) cams.insert(dataset[i].camera);
    if (cams.size() < 2) {
      out.warnings.push_back("identity " + std::to_string(id) + " seen by a single camera; excluded from test");
      continue;
    }
    std::vector<int> cam_list(cams.begin(), cams.end());
    std::uniform_int_distribution<std::size_t> pick(0, cam_list.size() - 1);
    const int query_cam = cam_list[pick(rng)];
    out.test_identities.push_back(id);
    for (std::size_t i : by_identity[id]) {
      (dataset[i].camera == query_cam ? out.query : out.gallery).push_back(i);
    }
  }
  return out;
}

Tensor sample_chunk(const TrackletRecord& tracklet, Index length, Rng& rng) {
  const Index n = tracklet.length();
  if (n == 0) throw std::invalid_argument("sample_chunk: empty tracklet " + tracklet.id);
  if (length >= n) return tracklet.frames;
  std::uniform_int_distribution<Index> start(0, n - length);
  const Index s = start(rng);
  std::vector<Index> picks(static_cast<std::size_t>(length));
  for (Index i = 0; i < length; ++i) picks[static_cast<std::size_t>(i)] = s + i;
  return stack_frames(tracklet, picks);
}

Tensor evenly_spaced(const TrackletRecord& tracklet, Index length) {
  const Index n = tracklet.length();
  if (n == 0) throw std::invalid_argument("evenly_spaced: empty tracklet " + tracklet.id);
  if (length >= n) return tracklet.frames;
  std::vector<Index> picks(static_cast<std::size_t>(length));
  for (Index i = 0; i < length; ++i) picks[static_cast<std::size_t>(i)] = i * n / length;
  return stack_frames(tracklet, picks);
}

}  // namespace tfuse
