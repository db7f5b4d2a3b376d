#pragma once

#include "tfuse/parameters.hpp"
#include "tfuse/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tfuse {

struct FrameFlags {
  bool duplicate = false;      // copy of the previous frame plus tiny noise
  bool occluded = false;       // a horizontal band was blanked
  bool distinct_view = false;  // freshly rendered from a view transform
};

struct TrackletRecord {
  std::string id;
  int identity = 0;
  int camera = 0;
  Tensor frames;  // [L×C×H×W], values in [0, 1]
  std::vector<FrameFlags> flags;

  Index length() const { return frames.rank() == 4 ? frames.dim(0) : 0; }
};

using Dataset = std::vector<TrackletRecord>;

struct SyntheticConfig {
  int num_identities = 32;
  int num_cameras = 2;
  int tracklets_per_camera = 2;
  int frames_per_tracklet = 16;
  Shape image{3, 32, 16};
  /// View transforms; view v is seen only by camera v mod num_cameras.
  int num_views = 6;
  double duplicate_prob = 0.3;
  int duplicate_run = 3;
  double occlusion_prob = 0.25;
  double noise_sigma = 0.06;
  /// Max-norm bound on the perturbation of a duplicated frame.
  double duplicate_sigma = 0.01;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Shift, scale and mirror applied to an identity's canonical layout.
struct ViewTransform {
  double dx = 0.0;
  double dy = 0.0;
  double scale = 1.0;
  bool mirror = false;
  bool back = false;  // back views hide the chest logo
};

/// Colored-shape layout that defines one identity.
struct IdentityTemplate {
  std::array<double, 3> hair{}, torso{}, legs{}, logo{}, bag{}, stripe{};
  bool has_logo = false;
  bool has_bag = false;
  bool has_stripes = false;
  double logo_y = 0.35, logo_x = 0.5;
  double torso_width = 0.6;
};

/// Everything shared by the tracklets of one synthetic dataset: identity
/// templates, view transforms and per-camera color gains.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(SyntheticConfig config);

  const SyntheticConfig& config() const { return config_; }
  const std::vector<IdentityTemplate>& identities() const { return identities_; }
  const std::vector<ViewTransform>& views() const { return views_; }
  std::vector<int> camera_views(int camera) const;

  /// One frame [C×H×W] of an identity under a view, before noise and occlusion.
  Tensor render(int identity, int view, int camera) const;

  /// Full dataset: every identity × camera × tracklets_per_camera.
  Dataset generate() const;

  /// k near-identical copies of one view plus a single frame of a different
  /// view of the same camera, at a random position. Used to probe redundancy
  /// suppression; the distinct frame is the one flagged distinct_view
  /// besides the first copy.
  TrackletRecord redundancy_probe(int identity, int camera, int copies, Rng& rng, Index* distinct_index) const;

 private:
  Tensor noisy_render(int identity, int view, int camera, Rng& rng, bool* occluded) const;

  SyntheticConfig config_;
  std::vector<IdentityTemplate> identities_;
  std::vector<ViewTransform> views_;
  std::vector<std::array<double, 3>> camera_gain_;
};

/// Deterministic per seed.
Dataset generate(const SyntheticConfig& config);

/// Manifest: one tracklet per line, `<id>\t<identity>\t<camera>\t<path1>,<path2>,...`,
/// paths relative to the manifest's directory. Accepted image formats:
/// .png .bmp .ppm .pgm .pbm .tif .tiff
Dataset load_manifest(const std::filesystem::path& manifest, const Shape& image_shape);
/// Writes PNG frames under `dir/frames/` and `dir/manifest.tsv`.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct Split {
  std::vector<std::size_t> train, query, gallery;
  std::vector<int> train_identities, test_identities;
  std::vector<std::string> warnings;
};

/// Identity-disjoint split. Per test identity one camera (chosen by seed)
/// provides the queries and the remaining cameras the gallery; identities
/// seen by a single camera are dropped from the test side with a warning.
Split split(const Dataset& dataset, double train_fraction, std::uint64_t seed);

/// Contiguous random chunk of `length` frames (all frames when shorter).
Tensor sample_chunk(const TrackletRecord& tracklet, Index length, Rng& rng);
/// `length` evenly spaced frames (all frames when shorter).
Tensor evenly_spaced(const TrackletRecord& tracklet, Index length);

}  // namespace tfuse
