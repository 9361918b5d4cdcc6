#include "caer/eval.hpp"

#include <cmath>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace caer {

std::string ConfusionMatrix::str() const {
  std::ostringstream os;
  os << "truth\\pred";
  for (int p = 0; p < k; ++p) os << std::setw(9) << category_name(p);
  os << '\n';
  for (int t = 0; t < k; ++t) {
    os << std::setw(10) << category_name(t);
    for (int p = 0; p < k; ++p) os << std::setw(9) << at(t, p);
    os << '\n';
  }
  return os.str();
}

std::vector<float> softmax_probs(const Tensor<float>& logits, std::int64_t row) {
  const std::int64_t k = logits.extent(1);
  const float* p = logits.data() + row * k;
  float mx = p[0];
  for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, p[j]);
  std::vector<float> probs(static_cast<std::size_t>(k));
  float sum = 0.0f;
  for (std::int64_t j = 0; j < k; ++j) {
    probs[static_cast<std::size_t>(j)] = std::exp(p[j] - mx);
    sum += probs[static_cast<std::size_t>(j)];
  }
  for (auto& v : probs) v /= sum;
  return probs;
}

namespace {

ClipSample eval_sample(const DatasetManifest& man, const ManifestEntry& entry,
                       const ModelConfig& cfg) {
  std::vector<std::int64_t> window;
  if (cfg.variant == Variant::kDynamic)
    window = eval_window(entry.frame_count);
  else
    window = {entry.frame_count / 2};
  std::vector<Image> frames = load_frames(man, entry, window);
  std::vector<FaceBox> boxes;
  for (std::int64_t f : window) boxes.push_back(entry.boxes[static_cast<std::size_t>(f)]);
  std::mt19937 rng(0);  // unused in eval mode
  ClipSample s = preprocess_clip(frames, boxes, cfg, Mode::kEval, rng);
  s.label = entry.label;
  return s;
}

}  // namespace

EvalResult evaluate(const DatasetManifest& manifest, Split split, ModelParams<float>& params) {
  const auto idx = manifest.split_indices(split);
  if (idx.empty())
    throw InvalidConfigError(std::string("evaluate: split '") + split_name(split) + "' is empty");
  EvalResult res;
  res.confusion = ConfusionMatrix(params.cfg.K);
  std::mt19937 rng(0);
  for (std::size_t i : idx) {
    const ManifestEntry& e = manifest.entries[i];
    ClipSample s = eval_sample(manifest, e, params.cfg);
    auto out = model_forward(s.v_f, s.v_c, params, Mode::kEval, rng);
    res.confusion.add(e.label, argmax_row(out.logits, 0));
  }
  res.accuracy = res.confusion.accuracy();
  return res;
}

std::vector<float> predict_video(const FrameClip& clip, const std::vector<FaceBox>& boxes,
                                 ModelParams<float>& params) {
  if (clip.frames.empty()) throw DataError("predict_video: empty clip");
  if (params.cfg.variant != Variant::kDynamic)
    throw InvalidConfigError("predict_video: requires the dynamic model");
  if (boxes.size() != clip.frames.size())
    throw DataError("predict_video: box count does not match frame count");
  const std::int64_t frame_count = static_cast<std::int64_t>(clip.frames.size());
  const auto starts = window_starts(frame_count);
  std::vector<double> acc(static_cast<std::size_t>(params.cfg.K), 0.0);
  std::mt19937 rng(0);
  for (std::int64_t start : starts) {
    std::vector<std::int64_t> window;
    if (frame_count < 16)
      window = eval_window(frame_count);
    else
      window = window_at(start);
    std::vector<Image> frames;
    std::vector<FaceBox> fb;
    for (std::int64_t f : window) {
      frames.push_back(clip.frames[static_cast<std::size_t>(f)]);
      fb.push_back(boxes[static_cast<std::size_t>(f)]);
    }
    ClipSample s = preprocess_clip(frames, fb, params.cfg, Mode::kEval, rng);
    auto out = model_forward(s.v_f, s.v_c, params, Mode::kEval, rng);
    const auto probs = softmax_probs(out.logits, 0);
    for (std::size_t j = 0; j < probs.size(); ++j) acc[j] += static_cast<double>(probs[j]);
  }
  std::vector<float> mean(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j)
    mean[j] = static_cast<float>(acc[j] / static_cast<double>(starts.size()));
  return mean;
}

// -- ablation harness -----------------------------------------------------------

std::vector<AblationFlags> default_ablation_sets() {
  return {
      AblationFlags{true, false, false, false},  // w/F
      AblationFlags{false, true, true, false},   // w/C + cA
      AblationFlags{true, true, false, false},   // F + C
      AblationFlags{true, true, true, false},    // F + C + cA
      AblationFlags{true, true, false, true},    // F + C + fA
      AblationFlags{true, true, true, true},     // full
  };
}

AblationFlags parse_flag_set(const std::string& text) {
  AblationFlags flags{false, false, false, false};
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok == "F")
      flags.face = true;
    else if (tok == "C")
      flags.context = true;
    else if (tok == "cA")
      flags.context_attention = true;
    else if (tok == "fA")
      flags.fusion_attention = true;
    else if (!tok.empty())
      throw InvalidConfigError("unknown ablation flag '" + tok + "' (use F, C, cA, fA)");
  }
  return flags;
}

std::string flag_set_name(const AblationFlags& flags) {
  std::string s;
  if (flags.face) s += "F";
  if (flags.context) s += s.empty() ? "C" : ",C";
  if (flags.context_attention) s += ",cA";
  if (flags.fusion_attention) s += ",fA";
  return s;
}

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const TrainConfig& tc,
                                      const ModelConfig& base,
                                      const std::vector<AblationFlags>& sets,
                                      std::ostream* echo) {
  std::vector<AblationRow> rows;
  for (const AblationFlags& flags : sets) {
    const ModelConfig cfg = ablation_config(base, flags);
    if (echo) (*echo) << "training variant [" << flag_set_name(flags) << "]" << std::endl;
    TrainResult tr = train(manifest, tc, cfg, echo);
    const EvalResult ev = evaluate(manifest, Split::kTest, tr.params);
    rows.push_back(AblationRow{flags, ev.accuracy});
    if (echo)
      (*echo) << "variant [" << flag_set_name(flags) << "] test accuracy " << ev.accuracy
              << std::endl;
  }
  return rows;
}

std::string format_ablation_report(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << " w/F  w/C  w/cA w/fA  Acc. (%)\n";
  for (const auto& r : rows) {
    auto mark = [](bool b) { return b ? "  v  " : "     "; };
    os << mark(r.flags.face) << mark(r.flags.context) << mark(r.flags.context_attention)
       << mark(r.flags.fusion_attention) << ' ' << std::fixed << std::setprecision(2)
       << 100.0 * r.accuracy << '\n';
  }
  return os.str();
}

// -- attention visualization -------------------------------------------------------

std::vector<std::filesystem::path> export_attention(const ClipSample& sample,
                                                    ModelParams<float>& params,
                                                    const std::filesystem::path& out_prefix) {
  if (!params.cfg.flags.context || !params.cfg.flags.context_attention)
    throw InvalidConfigError("export_attention: model has no context attention");
  std::mt19937 rng(0);
  auto out = model_forward(sample.v_f, sample.v_c, params, Mode::kEval, rng);
  const Tensor<float>& ahat = out.attention.normalized;
  const std::int64_t t = ahat.extent(2), mh = ahat.extent(3), mw = ahat.extent(4);
  const std::int64_t ch = params.cfg.ctx_h, cw = params.cfg.ctx_w;
  std::vector<std::filesystem::path> written;
  for (std::int64_t ts = 0; ts < t; ++ts) {
    // Replicate the single-channel map so the shared bilinear path applies.
    FloatImage map;
    map.h = mh;
    map.w = mw;
    map.data.resize(static_cast<std::size_t>(3 * mh * mw));
    for (int c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < mh * mw; ++i)
        map.data[static_cast<std::size_t>(c * mh * mw + i)] = ahat[ts * mh * mw + i];
    FloatImage up = resize_bilinear(map, ch, cw);
    Image img;
    img.h = ch;
    img.w = cw;
    img.rgb.resize(static_cast<std::size_t>(3 * ch * cw));
    const float scale = static_cast<float>(mh * mw) / 2.0f;  // uniform map -> mid colormap
    for (std::int64_t y = 0; y < ch; ++y)
      for (std::int64_t x = 0; x < cw; ++x) {
        const float v = std::clamp(up.at(0, y, x) * scale, 0.0f, 1.0f);
        const float heat[3] = {255.0f * v, 0.0f, 255.0f * (1.0f - v)};
        for (int c = 0; c < 3; ++c) {
          const float frame_px =
              255.0f * sample.v_c[((static_cast<std::int64_t>(c) * sample.v_c.extent(2) + ts) * ch + y) * cw + x];
          const float blended = 0.5f * frame_px + 0.5f * heat[c];
          img.rgb[static_cast<std::size_t>((y * cw + x) * 3 + c)] =
              static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0f, 255.0f)));
        }
      }
    std::ostringstream name;
    name << out_prefix.string() << "_t" << std::setw(2) << std::setfill('0') << ts << ".ppm";
    write_ppm(img, name.str());
    written.push_back(name.str());
  }
  return written;
}

}  // namespace caer
