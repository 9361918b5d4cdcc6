#include "caer/train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "caer/eval.hpp"

namespace caer {

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw InvalidConfigError("lr_at: epoch must be >= 0");
  return cfg.base_lr * std::pow(10.0, -static_cast<double>(epoch / 4));
}

void sgd_step(ModelParams<float>& params, const ModelParams<float>& grads, float lr) {
  std::vector<Tensor<float>*> ps;
  std::vector<std::string> names;
  for_each_param(params, [&](const std::string& n, Tensor<float>& t, bool learnable) {
    if (learnable) {
      ps.push_back(&t);
      names.push_back(n);
    }
  });
  std::vector<const Tensor<float>*> gs;
  for_each_param(grads, [&](const std::string&, const Tensor<float>& t, bool learnable) {
    if (learnable) gs.push_back(&t);
  });
  if (ps.size() != gs.size())
    throw ShapeError("sgd_step: gradient set does not match parameter set");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i]->shape() != gs[i]->shape())
      throw ShapeError("sgd_step: shape mismatch for " + names[i]);
    Tensor<float>& p = *ps[i];
    const Tensor<float>& g = *gs[i];
    for (std::int64_t j = 0; j < p.numel(); ++j) p[j] -= lr * g[j];
  }
}

namespace {

void flip_width(Tensor<float>& t) {
  const std::int64_t w = t.extent(t.rank() - 1);
  const std::int64_t rows = t.numel() / w;
  for (std::int64_t r = 0; r < rows; ++r) {
    float* p = t.data() + r * w;
    for (std::int64_t i = 0; i < w / 2; ++i) std::swap(p[i], p[w - 1 - i]);
  }
}

void rezero_context_boxes(ClipSample& s) {
  const std::int64_t tt = s.v_c.extent(2), hh = s.v_c.extent(3), ww = s.v_c.extent(4);
  for (std::int64_t t = 0; t < tt; ++t) {
    const Rect r = s.context_boxes[static_cast<std::size_t>(t)].clamped(hh, ww);
    if (r.empty()) continue;
    for (int ch = 0; ch < 3; ++ch)
      for (std::int64_t y = r.y; y < r.y + r.h; ++y) {
        float* p = s.v_c.data() + ((static_cast<std::int64_t>(ch) * tt + t) * hh + y) * ww;
        for (std::int64_t x = r.x; x < r.x + r.w; ++x) p[x] = 0.0f;
      }
  }
}

void clamp01(Tensor<float>& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = std::clamp(t[i], 0.0f, 1.0f);
}

}  // namespace

void augment(ClipSample& sample, const TrainConfig& cfg, std::mt19937& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (cfg.aug_flip && unit(rng) < 0.5) {
    flip_width(sample.v_f);
    flip_width(sample.v_c);
    const std::int64_t ww = sample.v_c.extent(4);
    for (auto& r : sample.context_boxes)
      if (!r.empty()) r.x = ww - (r.x + r.w);
  }
  if (cfg.aug_contrast) {
    std::uniform_real_distribution<float> cd(0.8f, 1.2f);
    const float c = cd(rng);
    for (Tensor<float>* t : {&sample.v_f, &sample.v_c})
      for (std::int64_t i = 0; i < t->numel(); ++i)
        (*t)[i] = ((*t)[i] - 0.5f) * c + 0.5f;
  }
  if (cfg.aug_color) {
    std::uniform_real_distribution<float> sd(0.9f, 1.1f);
    float scale[3] = {sd(rng), sd(rng), sd(rng)};
    for (Tensor<float>* t : {&sample.v_f, &sample.v_c}) {
      const std::int64_t inner = t->numel() / 3;
      for (int ch = 0; ch < 3; ++ch) {
        float* p = t->data() + ch * inner;
        for (std::int64_t i = 0; i < inner; ++i) p[i] *= scale[ch];
      }
    }
  }
  clamp01(sample.v_f);
  clamp01(sample.v_c);
  rezero_context_boxes(sample);
}

std::string metrics_record(const EpochMetrics& m) {
  std::ostringstream os;
  os << "{\"epoch\":" << m.epoch << ",\"lr\":" << m.lr << ",\"train_loss\":" << m.train_loss
     << ",\"train_acc\":" << m.train_acc << ",\"val_acc\":" << m.val_acc << "}";
  return os.str();
}

int argmax_row(const Tensor<float>& logits, std::int64_t row) {
  const std::int64_t k = logits.extent(1);
  const float* p = logits.data() + row * k;
  int best = 0;
  for (std::int64_t j = 1; j < k; ++j)
    if (p[j] > p[best]) best = static_cast<int>(j);
  return best;
}

namespace {

struct Batch {
  Tensor<float> v_f, v_c;
  std::vector<int> labels;
};

Batch assemble_batch(const DatasetManifest& man, const std::vector<std::size_t>& idx,
                     const ModelConfig& mc, const TrainConfig& tc, std::mt19937& rng) {
  std::vector<ClipSample> samples;
  samples.reserve(idx.size());
  for (std::size_t i : idx) {
    const ManifestEntry& e = man.entries[i];
    std::vector<std::int64_t> window;
    if (mc.variant == Variant::kDynamic) {
      window = sample_training_window(e.frame_count, rng);
    } else {
      std::uniform_int_distribution<std::int64_t> d(0, e.frame_count - 1);
      window = {d(rng)};
    }
    std::vector<Image> frames = load_frames(man, e, window);
    std::vector<FaceBox> boxes;
    for (std::int64_t f : window) boxes.push_back(e.boxes[static_cast<std::size_t>(f)]);
    ClipSample s = preprocess_clip(frames, boxes, mc, Mode::kTrain, rng);
    s.label = e.label;
    augment(s, tc, rng);
    samples.push_back(std::move(s));
  }
  const auto n = static_cast<std::int64_t>(samples.size());
  Batch b;
  b.v_f = Tensor<float>(mc.face_input(n));
  b.v_c = Tensor<float>(mc.context_input(n));
  const std::int64_t fstride = samples[0].v_f.numel();
  const std::int64_t cstride = samples[0].v_c.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy(samples[static_cast<std::size_t>(i)].v_f.data(),
              samples[static_cast<std::size_t>(i)].v_f.data() + fstride,
              b.v_f.data() + i * fstride);
    std::copy(samples[static_cast<std::size_t>(i)].v_c.data(),
              samples[static_cast<std::size_t>(i)].v_c.data() + cstride,
              b.v_c.data() + i * cstride);
    b.labels.push_back(samples[static_cast<std::size_t>(i)].label);
  }
  return b;
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const TrainConfig& tc, ModelConfig mc,
                  std::ostream* echo, const std::filesystem::path& metrics_path) {
  tc.validate();
  mc.dropout_rate = tc.dropout;
  mc.validate();
  std::vector<std::size_t> train_idx = manifest.split_indices(Split::kTrain);
  const std::vector<std::size_t> val_idx = manifest.split_indices(Split::kVal);
  if (train_idx.empty()) throw InvalidConfigError("train: manifest has no train split");
  if (val_idx.empty()) throw InvalidConfigError("train: manifest has no val split");

  TrainResult result;
  result.params = init_params<float>(mc, tc.seed);
  std::mt19937 rng(tc.seed);
  std::ofstream metrics_file;
  if (!metrics_path.empty()) {
    metrics_file.open(metrics_path);
    if (!metrics_file)
      throw DataError("train: cannot open metrics file " + metrics_path.string());
  }

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    const double lr = lr_at(epoch, tc);
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    std::int64_t seen = 0, correct = 0;
    for (std::size_t off = 0; off < train_idx.size(); off += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(train_idx.size(), off + static_cast<std::size_t>(tc.batch_size));
      if (end - off < 2) break;  // batch norm needs at least two samples
      std::vector<std::size_t> idx(train_idx.begin() + static_cast<std::ptrdiff_t>(off),
                                   train_idx.begin() + static_cast<std::ptrdiff_t>(end));
      Batch batch = assemble_batch(manifest, idx, mc, tc, rng);
      CrossEntropyResult<float> ce;
      ModelOutput<float> out;
      try {
        out = model_forward(batch.v_f, batch.v_c, result.params, Mode::kTrain, rng);
        ce = softmax_cross_entropy(out.logits, batch.labels);
      } catch (const InvalidValueError& e) {
        throw DivergenceError("train: non-finite activations at step " +
                              std::to_string(result.params.step) + " (" + e.what() + ")");
      }
      if (!std::isfinite(static_cast<double>(ce.loss)))
        throw DivergenceError("train: non-finite loss at step " +
                              std::to_string(result.params.step));
      auto grads = model_backward(out, result.params, ce.d_logits);
      sgd_step(result.params, grads, static_cast<float>(lr));
      ++result.params.step;
      const auto n = static_cast<std::int64_t>(batch.labels.size());
      loss_sum += static_cast<double>(ce.loss) * static_cast<double>(n);
      for (std::int64_t i = 0; i < n; ++i)
        correct += argmax_row(out.logits, i) == batch.labels[static_cast<std::size_t>(i)] ? 1 : 0;
      seen += n;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    m.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    m.val_acc = evaluate(manifest, Split::kVal, result.params).accuracy;
    result.history.push_back(m);
    const std::string line = metrics_record(m);
    if (echo) (*echo) << line << std::endl;
    if (metrics_file) metrics_file << line << '\n';
    if (tc.stop_train_acc > 0.0 && m.train_acc >= tc.stop_train_acc) break;
  }
  return result;
}

}  // namespace caer
