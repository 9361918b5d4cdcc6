#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "caer/data.hpp"
#include "caer/model.hpp"
#include "caer/train.hpp"

namespace caer {

/// K x K count matrix; rows are ground truth, columns predictions.
struct ConfusionMatrix {
  std::int64_t k = 0;
  std::vector<std::int64_t> counts;

  explicit ConfusionMatrix(std::int64_t classes = 0)
      : k(classes), counts(static_cast<std::size_t>(classes * classes), 0) {}

  void add(int truth, int pred) { ++counts[static_cast<std::size_t>(truth * k + pred)]; }
  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth * k + pred)];
  }
  std::int64_t row_sum(int truth) const {
    std::int64_t s = 0;
    for (int p = 0; p < k; ++p) s += at(truth, p);
    return s;
  }
  std::int64_t total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::int64_t trace() const {
    std::int64_t s = 0;
    for (int i = 0; i < k; ++i) s += at(i, i);
    return s;
  }
  double accuracy() const {
    const std::int64_t t = total();
    return t ? static_cast<double>(trace()) / static_cast<double>(t) : 0.0;
  }
  std::vector<double> per_class_accuracy() const {
    std::vector<double> acc(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
      const std::int64_t r = row_sum(i);
      acc[static_cast<std::size_t>(i)] = r ? static_cast<double>(at(i, i)) / static_cast<double>(r) : 0.0;
    }
    return acc;
  }
  std::string str() const;
};

struct EvalResult {
  double accuracy = 0.0;
  ConfusionMatrix confusion;
};

/// Eval-mode pass over one split: center crops, no dropout, running batch-norm
/// statistics; dynamic clips use the first 16-frame window, static clips the
/// center frame.
EvalResult evaluate(const DatasetManifest& manifest, Split split, ModelParams<float>& params);

/// Splits a video into 16-frame windows with 8-frame overlap, averages the
/// windows' class probabilities. Dynamic model only.
std::vector<float> predict_video(const FrameClip& clip, const std::vector<FaceBox>& boxes,
                                 ModelParams<float>& params);

std::vector<float> softmax_probs(const Tensor<float>& logits, std::int64_t row);

// -- ablation harness ---------------------------------------------------------

struct AblationRow {
  AblationFlags flags;
  double accuracy = 0.0;
};

/// The six CAER-Net ablation rows: F; C+cA; F+C; F+C+cA; F+C+fA; full.
std::vector<AblationFlags> default_ablation_sets();

AblationFlags parse_flag_set(const std::string& text);   // e.g. "F,C,cA,fA"
std::string flag_set_name(const AblationFlags& flags);

/// Trains every variant from the same initialization seed on the same splits
/// and evaluates each on the test split.
std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const TrainConfig& tc,
                                      const ModelConfig& base,
                                      const std::vector<AblationFlags>& sets,
                                      std::ostream* echo = nullptr);

std::string format_ablation_report(const std::vector<AblationRow>& rows);

// -- attention visualization ----------------------------------------------------

/// Upsamples each temporal slice of the normalized attention map to the
/// context input extent, maps it through a blue-to-red colormap, alpha-blends
/// it (0.5) over the face-hidden input, and writes one PPM per slice.
std::vector<std::filesystem::path> export_attention(const ClipSample& sample,
                                                    ModelParams<float>& params,
                                                    const std::filesystem::path& out_prefix);

}  // namespace caer
