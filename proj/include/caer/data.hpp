#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "caer/image.hpp"
#include "caer/model.hpp"
#include "caer/tensor.hpp"

namespace caer {

// The seven emotion categories; label indices follow this order.
inline constexpr std::array<const char*, 7> kCategoryNames = {
    "anger", "disgust", "fear", "happy", "neutral", "sad", "surprise"};
inline constexpr int kNumCategories = 7;

// The synthetic corpus renders these two classes with identical face glyphs;
// they are distinguishable only by context.
inline constexpr std::array<int, 2> kAmbiguousPair = {0, 1};

int category_index(const std::string& name);
const char* category_name(int label);

/// Per-frame face detection; absent frames reuse the nearest preceding box.
struct FaceBox {
  bool present = false;
  Rect rect;
};

struct FrameClip {
  std::string id;
  double fps = 10.0;
  std::vector<Image> frames;
};

/// Preprocessed pair of face clip and face-hidden context clip. Pixels of
/// v_c inside context_boxes[t] are exactly zero.
struct ClipSample {
  Tensor<float> v_f;                // (1, 3, t, S, S)
  Tensor<float> v_c;                // (1, 3, t, Hc, Wc)
  int label = -1;
  std::vector<Rect> context_boxes;  // hidden-face rectangle per frame, v_c coords
};

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);
Split split_from(const std::string& name);

struct ManifestEntry {
  std::string clip_dir;
  int label = -1;
  std::int64_t frame_count = 0;
  Split split = Split::kTrain;
  std::vector<FaceBox> boxes;  // one per frame
};

struct DatasetManifest {
  std::filesystem::path root;  // directory containing the manifest file
  std::vector<ManifestEntry> entries;

  std::vector<std::size_t> split_indices(Split s) const;
};

std::filesystem::path frame_path(const std::filesystem::path& root, const ManifestEntry& entry,
                                 std::int64_t frame);
std::vector<Image> load_frames(const DatasetManifest& man, const ManifestEntry& entry,
                               const std::vector<std::int64_t>& indices);
FrameClip load_clip(const DatasetManifest& man, const ManifestEntry& entry);

// -- frame selection ---------------------------------------------------------

/// Uniform-random 16-frame training window; clips shorter than 16 frames are
/// padded by repeating the last frame.
std::vector<std::int64_t> sample_training_window(std::int64_t frame_count, std::mt19937& rng);
/// Deterministic eval window: the first 16 frames (padded when shorter).
std::vector<std::int64_t> eval_window(std::int64_t frame_count);
/// The 16-frame window at `start` (no padding; start+16 <= frame_count).
std::vector<std::int64_t> window_at(std::int64_t start);
/// Sliding-window starts {0, 8, 16, ...} while start+16 <= T; {0} when T < 16.
std::vector<std::int64_t> window_starts(std::int64_t frame_count);

// -- preprocessing -----------------------------------------------------------

/// Forward-fills missing boxes from the nearest preceding detection (leading
/// gaps take the first detection); throws NoFaceError when no frame has one.
std::vector<Rect> resolve_face_boxes(const std::vector<FaceBox>& boxes);

/// Crops faces to the face input size and hides the face in the resized
/// context input. Train mode takes a random context crop, eval mode a center
/// crop. The returned sample is unlabeled.
ClipSample preprocess_clip(const std::vector<Image>& frames, const std::vector<FaceBox>& boxes,
                           const ModelConfig& cfg, Mode mode, std::mt19937& rng);
ClipSample preprocess_clip(const FrameClip& clip, const std::vector<FaceBox>& boxes,
                           const ModelConfig& cfg, Mode mode, std::mt19937& rng);

// -- annotation aggregation (three annotators per clip) -----------------------

struct AnnotationRecord {
  std::string clip_id;
  std::string annotator_id;
  int category = -1;
  double confidence = 0.0;
};

struct AggregationResult {
  bool keep = false;
  int label = -1;
  double mean_confidence = 0.0;
};

/// Keep iff some category has >= 2 of the 3 votes and the mean confidence is
/// >= 0.5; the label is the majority category.
AggregationResult aggregate_annotations(const std::vector<AnnotationRecord>& records);

/// Line format: clip_id annotator_id category confidence
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

/// Per-category stratified random 70/10/20 split; val and test counts are
/// rounded, the remainder goes to train. Deterministic per seed.
void split_dataset(std::vector<ManifestEntry>& entries, std::uint32_t seed);

// -- manifest file -----------------------------------------------------------

// One record per line: clip_dir label_name frame_count split, then
// frame_count box fields "x,y,w,h" (or "-" when the frame has no box).
DatasetManifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path);

// -- synthetic corpus ---------------------------------------------------------

struct SynthSpec {
  std::int64_t clips_per_class = 100;   // used when class_weights is empty
  std::int64_t total = 0;               // with class_weights: total clip count
  std::vector<double> class_weights;    // optional, one weight per category
  std::int64_t frame_h = 120, frame_w = 160;
  std::int64_t clip_len = 24;
  double noise_std = 0.02;
  std::uint32_t seed = 0;
  std::filesystem::path out_dir;
};

/// Largest-remainder allocation of `total` clips over the weights.
std::vector<std::int64_t> allocate_class_counts(const std::vector<double>& weights,
                                                std::int64_t total);

/// Table-1 category proportions (percent).
std::vector<double> table1_distribution();

/// Face glyph identity per class; the ambiguous pair shares one glyph.
int synthetic_glyph_id(int label);

/// Renders one frame: class-dependent context texture, class-dependent face
/// glyph inside `box`, additive Gaussian pixel noise.
Image render_synthetic_frame(int label, const Rect& box, std::int64_t frame_h,
                             std::int64_t frame_w, std::mt19937& rng, double noise_std);

/// Writes frames and a manifest under spec.out_dir and returns the manifest.
DatasetManifest generate_synthetic_corpus(const SynthSpec& spec);

}  // namespace caer
