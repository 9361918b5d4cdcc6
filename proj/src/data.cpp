#include "caer/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace caer {

int category_index(const std::string& name) {
  for (int i = 0; i < kNumCategories; ++i)
    if (name == kCategoryNames[static_cast<std::size_t>(i)]) return i;
  std::string valid;
  for (int i = 0; i < kNumCategories; ++i)
    valid += std::string(i ? ", " : "") + kCategoryNames[static_cast<std::size_t>(i)];
  throw DataError("unknown category '" + name + "', expected one of: " + valid);
}

const char* category_name(int label) {
  if (label < 0 || label >= kNumCategories)
    throw InvalidLabelError("category label " + std::to_string(label) + " outside [0,7)");
  return kCategoryNames[static_cast<std::size_t>(label)];
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split tag '" + name + "', expected train, val or test");
}

std::vector<std::size_t> DatasetManifest::split_indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == s) out.push_back(i);
  return out;
}

std::filesystem::path frame_path(const std::filesystem::path& root, const ManifestEntry& entry,
                                 std::int64_t frame) {
  char name[32];
  std::snprintf(name, sizeof(name), "frame_%04d.ppm", static_cast<int>(frame));
  return root / entry.clip_dir / name;
}

std::vector<Image> load_frames(const DatasetManifest& man, const ManifestEntry& entry,
                               const std::vector<std::int64_t>& indices) {
  std::vector<Image> frames;
  frames.reserve(indices.size());
  for (std::int64_t idx : indices) {
    if (idx < 0 || idx >= entry.frame_count)
      throw DataError("frame index " + std::to_string(idx) + " outside clip " + entry.clip_dir);
    frames.push_back(read_ppm(frame_path(man.root, entry, idx)));
  }
  return frames;
}

FrameClip load_clip(const DatasetManifest& man, const ManifestEntry& entry) {
  FrameClip clip;
  clip.id = entry.clip_dir;
  for (std::int64_t i = 0; i < entry.frame_count; ++i)
    clip.frames.push_back(read_ppm(frame_path(man.root, entry, i)));
  return clip;
}

// -- frame selection ---------------------------------------------------------

namespace {

std::vector<std::int64_t> padded_window(std::int64_t start, std::int64_t frame_count) {
  std::vector<std::int64_t> idx;
  idx.reserve(16);
  for (std::int64_t i = 0; i < 16; ++i)
    idx.push_back(std::min(start + i, frame_count - 1));
  return idx;
}

}  // namespace

std::vector<std::int64_t> sample_training_window(std::int64_t frame_count, std::mt19937& rng) {
  if (frame_count < 1) throw DataError("cannot sample a window from an empty clip");
  if (frame_count <= 16) return padded_window(0, frame_count);
  std::uniform_int_distribution<std::int64_t> dist(0, frame_count - 16);
  return padded_window(dist(rng), frame_count);
}

std::vector<std::int64_t> eval_window(std::int64_t frame_count) {
  if (frame_count < 1) throw DataError("cannot build a window from an empty clip");
  return padded_window(0, frame_count);
}

std::vector<std::int64_t> window_at(std::int64_t start) {
  std::vector<std::int64_t> idx;
  for (std::int64_t i = 0; i < 16; ++i) idx.push_back(start + i);
  return idx;
}

std::vector<std::int64_t> window_starts(std::int64_t frame_count) {
  if (frame_count < 1) throw DataError("cannot window an empty clip");
  if (frame_count < 16) return {0};
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0; s + 16 <= frame_count; s += 8) starts.push_back(s);
  return starts;
}

// -- preprocessing -----------------------------------------------------------

std::vector<Rect> resolve_face_boxes(const std::vector<FaceBox>& boxes) {
  std::vector<Rect> out(boxes.size());
  std::int64_t first = -1;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (boxes[i].present && !boxes[i].rect.empty()) {
      first = static_cast<std::int64_t>(i);
      break;
    }
  if (first < 0) throw NoFaceError("clip has no face box in any frame");
  std::int64_t last = -1;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (boxes[i].present && !boxes[i].rect.empty()) {
      last = static_cast<std::int64_t>(i);
      out[i] = boxes[i].rect;
    } else {
      // Leading gaps (no preceding detection) take the first detection.
      out[i] = last >= 0 ? out[static_cast<std::size_t>(last)]
                         : boxes[static_cast<std::size_t>(first)].rect;
    }
  }
  return out;
}

namespace {

FloatImage crop_to_float(const Image& img, const Rect& r) {
  FloatImage out;
  out.h = r.h;
  out.w = r.w;
  out.data.resize(static_cast<std::size_t>(3 * r.h * r.w));
  for (int ch = 0; ch < 3; ++ch)
    for (std::int64_t y = 0; y < r.h; ++y)
      for (std::int64_t x = 0; x < r.w; ++x)
        out.at(ch, y, x) =
            static_cast<float>(img.px(r.y + y, r.x + x)[ch]) / 255.0f;
  return out;
}

void copy_into_slice(Tensor<float>& dst, std::int64_t t, const FloatImage& img) {
  const std::int64_t tt = dst.extent(2), hh = dst.extent(3), ww = dst.extent(4);
  for (int ch = 0; ch < 3; ++ch) {
    float* p = dst.data() + ((static_cast<std::int64_t>(ch) * tt + t) * hh) * ww;
    std::copy(img.data.begin() + ch * hh * ww, img.data.begin() + (ch + 1) * hh * ww, p);
  }
}

// Intermediate context resize for the dynamic model (height x width).
constexpr std::int64_t kContextResizeH = 128;
constexpr std::int64_t kContextResizeW = 171;

}  // namespace

ClipSample preprocess_clip(const std::vector<Image>& frames, const std::vector<FaceBox>& boxes,
                           const ModelConfig& cfg, Mode mode, std::mt19937& rng) {
  if (frames.empty()) throw DataError("preprocess: clip has no frames");
  if (static_cast<std::int64_t>(frames.size()) != cfg.temporal)
    throw DataError("preprocess: expected " + std::to_string(cfg.temporal) + " frames, got " +
                    std::to_string(frames.size()));
  if (boxes.size() != frames.size())
    throw DataError("preprocess: box count does not match frame count");
  const std::vector<Rect> face = resolve_face_boxes(boxes);

  ClipSample sample;
  sample.v_f = Tensor<float>(cfg.face_input(1));
  sample.v_c = Tensor<float>(cfg.context_input(1));
  sample.context_boxes.resize(frames.size());

  // One crop window per clip so the context view is temporally consistent.
  std::int64_t oy = 0, ox = 0;
  const bool dynamic = cfg.variant == Variant::kDynamic;
  if (dynamic) {
    if (mode == Mode::kTrain) {
      std::uniform_int_distribution<std::int64_t> dy(0, kContextResizeH - cfg.ctx_h);
      std::uniform_int_distribution<std::int64_t> dx(0, kContextResizeW - cfg.ctx_w);
      oy = dy(rng);
      ox = dx(rng);
    } else {
      oy = (kContextResizeH - cfg.ctx_h) / 2;
      ox = (kContextResizeW - cfg.ctx_w) / 2;
    }
  }

  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Image& frame = frames[f];
    const Rect box = face[f].clamped(frame.h, frame.w);
    if (box.empty()) throw NoFaceError("face box lies outside frame " + std::to_string(f));

    FloatImage face_crop = crop_to_float(frame, box);
    copy_into_slice(sample.v_f, static_cast<std::int64_t>(f),
                    resize_bilinear(face_crop, cfg.face_hw, cfg.face_hw));

    FloatImage ctx = to_float(frame);
    zero_rect(ctx, box);
    Rect mapped;
    FloatImage ctx_out;
    if (dynamic) {
      FloatImage resized = resize_bilinear(ctx, kContextResizeH, kContextResizeW);
      mapped = map_rect(box, frame.h, frame.w, kContextResizeH, kContextResizeW);
      ctx_out = crop(resized, oy, ox, cfg.ctx_h, cfg.ctx_w);
      mapped = Rect{mapped.x - ox, mapped.y - oy, mapped.w, mapped.h}.clamped(cfg.ctx_h, cfg.ctx_w);
    } else {
      ctx_out = resize_bilinear(ctx, cfg.ctx_h, cfg.ctx_w);
      mapped = map_rect(box, frame.h, frame.w, cfg.ctx_h, cfg.ctx_w);
    }
    // Resampling blends across the hidden region's border; re-zero the mapped
    // rectangle so the recorded box contains exact zeros.
    zero_rect(ctx_out, mapped);
    sample.context_boxes[f] = mapped;
    copy_into_slice(sample.v_c, static_cast<std::int64_t>(f), ctx_out);
  }
  return sample;
}

ClipSample preprocess_clip(const FrameClip& clip, const std::vector<FaceBox>& boxes,
                           const ModelConfig& cfg, Mode mode, std::mt19937& rng) {
  return preprocess_clip(clip.frames, boxes, cfg, mode, rng);
}

// -- annotation aggregation ---------------------------------------------------

AggregationResult aggregate_annotations(const std::vector<AnnotationRecord>& records) {
  if (records.size() != 3)
    throw DataError("aggregate_annotations: expected exactly 3 records, got " +
                    std::to_string(records.size()));
  std::array<int, kNumCategories> votes{};
  double conf = 0.0;
  for (const auto& r : records) {
    if (r.category < 0 || r.category >= kNumCategories)
      throw DataError("aggregate_annotations: invalid category " + std::to_string(r.category));
    if (r.confidence < 0.0 || r.confidence > 1.0)
      throw DataError("aggregate_annotations: confidence outside [0,1]");
    ++votes[static_cast<std::size_t>(r.category)];
    conf += r.confidence;
  }
  conf /= 3.0;
  AggregationResult res;
  res.mean_confidence = conf;
  for (int c = 0; c < kNumCategories; ++c)
    if (votes[static_cast<std::size_t>(c)] >= 2) {
      res.label = c;
      break;
    }
  res.keep = res.label >= 0 && conf >= 0.5;
  return res;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("annotations: cannot open " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    AnnotationRecord r;
    std::string category;
    if (!(ls >> r.clip_id >> r.annotator_id >> category >> r.confidence))
      throw DataError("annotations: malformed record at " + path.string() + ":" +
                      std::to_string(lineno));
    r.category = category_index(category);
    if (r.confidence < 0.0 || r.confidence > 1.0)
      throw DataError("annotations: confidence outside [0,1] at " + path.string() + ":" +
                      std::to_string(lineno));
    out.push_back(std::move(r));
  }
  return out;
}

void split_dataset(std::vector<ManifestEntry>& entries, std::uint32_t seed) {
  if (entries.size() < 10)
    throw InvalidConfigError("split_dataset: need at least 10 entries, got " +
                             std::to_string(entries.size()));
  std::mt19937 rng(seed);
  for (int label = 0; label < kNumCategories; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].label == label) idx.push_back(i);
    if (idx.empty()) {
      std::cerr << "split_dataset: category '" << category_name(label)
                << "' has no clips, skipped\n";
      continue;
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<std::int64_t>(idx.size());
    const std::int64_t n_val = std::llround(0.1 * static_cast<double>(n));
    const std::int64_t n_test = std::llround(0.2 * static_cast<double>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      Split s = Split::kTrain;
      if (i < n_val)
        s = Split::kVal;
      else if (i < n_val + n_test)
        s = Split::kTest;
      entries[idx[static_cast<std::size_t>(i)]].split = s;
    }
  }
}

// -- manifest file -------------------------------------------------------------

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("manifest: cannot open " + path.string());
  DatasetManifest man;
  man.root = path.parent_path();
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string label, split;
    if (!(ls >> e.clip_dir >> label >> e.frame_count >> split))
      throw DataError("manifest: malformed record at " + path.string() + ":" +
                      std::to_string(lineno));
    e.label = category_index(label);
    e.split = split_from(split);
    if (e.frame_count < 1)
      throw DataError("manifest: frame count must be >= 1 at " + path.string() + ":" +
                      std::to_string(lineno));
    for (std::int64_t f = 0; f < e.frame_count; ++f) {
      std::string tok;
      if (!(ls >> tok))
        throw DataError("manifest: expected " + std::to_string(e.frame_count) +
                        " boxes at " + path.string() + ":" + std::to_string(lineno));
      FaceBox box;
      if (tok != "-") {
        long long v[4];
        if (std::sscanf(tok.c_str(), "%lld,%lld,%lld,%lld", &v[0], &v[1], &v[2], &v[3]) != 4)
          throw DataError("manifest: malformed box '" + tok + "' at " + path.string() + ":" +
                          std::to_string(lineno));
        box.present = true;
        box.rect = Rect{v[0], v[1], v[2], v[3]};
      }
      e.boxes.push_back(box);
    }
    for (std::int64_t f = 0; f < e.frame_count; ++f) {
      const auto fp = frame_path(man.root, e, f);
      if (!std::filesystem::exists(fp))
        throw DataError("manifest: missing frame file " + fp.string() + " referenced at " +
                        path.string() + ":" + std::to_string(lineno));
    }
    man.entries.push_back(std::move(e));
  }
  return man;
}

void write_manifest(const std::vector<ManifestEntry>& entries,
                    const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw DataError("manifest: cannot open " + path.string() + " for writing");
  for (const auto& e : entries) {
    os << e.clip_dir << ' ' << category_name(e.label) << ' ' << e.frame_count << ' '
       << split_name(e.split);
    for (const auto& b : e.boxes) {
      if (b.present)
        os << ' ' << b.rect.x << ',' << b.rect.y << ',' << b.rect.w << ',' << b.rect.h;
      else
        os << " -";
    }
    os << '\n';
  }
  if (!os) throw DataError("manifest: write to " + path.string() + " failed");
}

// -- synthetic corpus -----------------------------------------------------------

std::vector<std::int64_t> allocate_class_counts(const std::vector<double>& weights,
                                                std::int64_t total) {
  if (weights.empty() || total < 1)
    throw InvalidConfigError("allocate_class_counts: need weights and a positive total");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw InvalidConfigError("allocate_class_counts: negative weight");
    sum += w;
  }
  if (sum <= 0.0) throw InvalidConfigError("allocate_class_counts: weights sum to zero");
  std::vector<std::int64_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    counts[i] = static_cast<std::int64_t>(std::floor(exact));
    assigned += counts[i];
    remainders.push_back({exact - std::floor(exact), i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::int64_t i = 0; i < total - assigned; ++i)
    ++counts[remainders[static_cast<std::size_t>(i) % remainders.size()].second];
  return counts;
}

std::vector<double> table1_distribution() {
  return {12.33, 5.44, 3.89, 20.64, 34.69, 11.16, 11.83};
}

int synthetic_glyph_id(int label) {
  if (label < 0 || label >= kNumCategories)
    throw InvalidLabelError("synthetic_glyph_id: label outside [0,7)");
  // The ambiguous pair shares glyph 0; every other class has its own.
  return label == kAmbiguousPair[1] ? kAmbiguousPair[0] : label;
}

namespace {

struct Color {
  std::uint8_t r, g, b;
};

// Context base colors, one per class, chosen far apart in RGB space.
constexpr std::array<Color, 7> kContextPalette = {{{170, 60, 60},
                                                   {60, 150, 60},
                                                   {60, 80, 180},
                                                   {180, 170, 60},
                                                   {150, 60, 160},
                                                   {60, 160, 160},
                                                   {120, 120, 40}}};

constexpr Color kFaceBase = {118, 118, 118};
constexpr Color kGlyphInk = {235, 235, 235};

bool glyph_hit(int glyph, std::int64_t gy, std::int64_t gx, std::int64_t gh, std::int64_t gw) {
  const double cy = static_cast<double>(gh - 1) / 2.0;
  const double cx = static_cast<double>(gw - 1) / 2.0;
  switch (glyph) {
    case 0: {  // filled circle
      const double dy = (static_cast<double>(gy) - cy) / static_cast<double>(gh);
      const double dx = (static_cast<double>(gx) - cx) / static_cast<double>(gw);
      return dy * dy + dx * dx < 0.35 * 0.35;
    }
    case 2:  // horizontal stripes
      return (gy * 5 / std::max<std::int64_t>(gh, 1)) % 2 == 0;
    case 3:  // vertical stripes
      return (gx * 5 / std::max<std::int64_t>(gw, 1)) % 2 == 0;
    case 4:  // checkerboard
      return ((gy * 4 / std::max<std::int64_t>(gh, 1)) + (gx * 4 / std::max<std::int64_t>(gw, 1))) % 2 == 0;
    case 5: {  // diagonal cross
      const double u = static_cast<double>(gy) / static_cast<double>(std::max<std::int64_t>(gh - 1, 1));
      const double v = static_cast<double>(gx) / static_cast<double>(std::max<std::int64_t>(gw - 1, 1));
      return std::abs(u - v) < 0.18 || std::abs(u + v - 1.0) < 0.18;
    }
    case 6: {  // rectangular ring
      const std::int64_t dy = std::min(gy, gh - 1 - gy);
      const std::int64_t dx = std::min(gx, gw - 1 - gx);
      const std::int64_t d = std::min(dy * 5 / std::max<std::int64_t>(gh, 1),
                                      dx * 5 / std::max<std::int64_t>(gw, 1));
      return d == 1;
    }
    default:
      return false;
  }
}

}  // namespace

Image render_synthetic_frame(int label, const Rect& box, std::int64_t frame_h,
                             std::int64_t frame_w, std::mt19937& rng, double noise_std) {
  const Color base = kContextPalette[static_cast<std::size_t>(label)];
  Image img = Image::filled(frame_h, frame_w, base.r, base.g, base.b);
  // Horizontal luminance ramp gives the context some structure.
  for (std::int64_t y = 0; y < frame_h; ++y)
    for (std::int64_t x = 0; x < frame_w; ++x) {
      const int ramp = static_cast<int>(40 * x / std::max<std::int64_t>(frame_w - 1, 1)) - 20;
      std::uint8_t* p = img.px(y, x);
      for (int ch = 0; ch < 3; ++ch)
        p[ch] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(p[ch]) + ramp, 0, 255));
    }
  const Rect b = box.clamped(frame_h, frame_w);
  const int glyph = synthetic_glyph_id(label);
  for (std::int64_t y = 0; y < b.h; ++y)
    for (std::int64_t x = 0; x < b.w; ++x) {
      const Color c = glyph_hit(glyph, y, x, b.h, b.w) ? kGlyphInk : kFaceBase;
      std::uint8_t* p = img.px(b.y + y, b.x + x);
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
  if (noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_std * 255.0);
    for (auto& v : img.rgb)
      v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(v) +
                                               static_cast<int>(std::lround(noise(rng))), 0, 255));
  }
  return img;
}

DatasetManifest generate_synthetic_corpus(const SynthSpec& spec) {
  if (spec.clip_len < 16)
    throw InvalidConfigError("synthetic corpus: clip length must be >= 16");
  if (spec.frame_h < 32 || spec.frame_w < 32)
    throw InvalidConfigError("synthetic corpus: frame extent must be >= 32");
  std::vector<std::int64_t> counts;
  if (!spec.class_weights.empty()) {
    if (spec.class_weights.size() != kNumCategories)
      throw InvalidConfigError("synthetic corpus: need one weight per category");
    counts = allocate_class_counts(spec.class_weights, spec.total);
  } else {
    if (spec.clips_per_class < 1)
      throw InvalidConfigError("synthetic corpus: clips per class must be >= 1");
    counts.assign(kNumCategories, spec.clips_per_class);
  }
  std::int64_t populated = 0;
  for (auto c : counts) populated += c > 0 ? 1 : 0;
  if (populated < 2)
    throw InvalidConfigError("synthetic corpus: need at least 2 populated classes");

  std::filesystem::create_directories(spec.out_dir);
  std::mt19937 rng(spec.seed);
  std::vector<ManifestEntry> entries;
  std::int64_t clip_index = 0;
  const std::int64_t box_edge =
      std::max<std::int64_t>(8, std::llround(0.4 * static_cast<double>(std::min(spec.frame_h, spec.frame_w))));
  for (int label = 0; label < kNumCategories; ++label)
    for (std::int64_t k = 0; k < counts[static_cast<std::size_t>(label)]; ++k, ++clip_index) {
      char dirname[32];
      std::snprintf(dirname, sizeof(dirname), "clip_%05d", static_cast<int>(clip_index));
      const auto clip_dir = spec.out_dir / dirname;
      std::filesystem::create_directories(clip_dir);
      std::uniform_int_distribution<std::int64_t> px(0, spec.frame_w - box_edge);
      std::uniform_int_distribution<std::int64_t> py(0, spec.frame_h - box_edge);
      const Rect box{px(rng), py(rng), box_edge, box_edge};
      ManifestEntry e;
      e.clip_dir = dirname;
      e.label = label;
      e.frame_count = spec.clip_len;
      e.boxes.assign(static_cast<std::size_t>(spec.clip_len), FaceBox{true, box});
      for (std::int64_t f = 0; f < spec.clip_len; ++f) {
        const Image frame =
            render_synthetic_frame(label, box, spec.frame_h, spec.frame_w, rng, spec.noise_std);
        char fname[32];
        std::snprintf(fname, sizeof(fname), "frame_%04d.ppm", static_cast<int>(f));
        write_ppm(frame, clip_dir / fname);
      }
      entries.push_back(std::move(e));
    }
  split_dataset(entries, spec.seed);
  write_manifest(entries, spec.out_dir / "manifest.txt");
  DatasetManifest man;
  man.root = spec.out_dir;
  man.entries = std::move(entries);
  return man;
}

}  // namespace caer
