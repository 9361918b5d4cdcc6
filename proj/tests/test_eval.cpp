#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>

#include "caer/eval.hpp"
#include "oracles.hpp"

using namespace caer;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("caer_eval_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Dynamic model with 16-frame clips but tiny channels, for window tests.
ModelConfig tiny_dynamic16() {
  ModelConfig cfg = ModelConfig::tiny(Variant::kDynamic);
  cfg.temporal = 16;
  return cfg;
}

}  // namespace

TEST_CASE("confusion matrix identities") {
  SUBCASE("a perfect predictor fills the diagonal") {
    ConfusionMatrix cm(7);
    for (int k = 0; k < 7; ++k)
      for (int i = 0; i < 10; ++i) cm.add(k, k);
    CHECK(cm.accuracy() == 1.0);
    for (int k = 0; k < 7; ++k) CHECK(cm.at(k, k) == 10);
  }
  SUBCASE("row sums equal class counts and accuracy is trace/total") {
    std::mt19937 rng(1);
    ConfusionMatrix cm(7);
    std::vector<std::int64_t> class_counts(7, 0);
    std::uniform_int_distribution<int> d(0, 6);
    for (int i = 0; i < 5000; ++i) {
      const int truth = d(rng), pred = d(rng);
      cm.add(truth, pred);
      ++class_counts[static_cast<std::size_t>(truth)];
    }
    for (int k = 0; k < 7; ++k) CHECK(cm.row_sum(k) == class_counts[static_cast<std::size_t>(k)]);
    CHECK(cm.accuracy() == doctest::Approx(static_cast<double>(cm.trace()) / 5000.0));
  }
  SUBCASE("a uniform-random predictor sits near 1/7") {
    std::mt19937 rng(20240);
    ConfusionMatrix cm(7);
    std::uniform_int_distribution<int> d(0, 6);
    for (int i = 0; i < 7000; ++i) cm.add(d(rng), d(rng));
    CHECK(cm.accuracy() == doctest::Approx(1.0 / 7.0).epsilon(0.15));
    CHECK(std::fabs(cm.accuracy() - 1.0 / 7.0) < 0.02);
  }
}

TEST_CASE("sliding-window prediction") {
  const auto dir = temp_dir("predict");
  SynthSpec spec;
  spec.clips_per_class = 2;
  spec.frame_h = 48;
  spec.frame_w = 64;
  spec.clip_len = 24;
  spec.seed = 3;
  spec.out_dir = dir;
  auto man = generate_synthetic_corpus(spec);
  ModelConfig cfg = tiny_dynamic16();
  cfg.K = 7;
  auto params = init_params<float>(cfg, 5);

  SUBCASE("T=24 averages exactly the windows {0, 8} and probabilities sum to 1") {
    const auto& e = man.entries[0];
    auto clip = load_clip(man, e);
    REQUIRE(clip.frames.size() == 24);
    auto probs = predict_video(clip, e.boxes, params);
    double sum = 0.0;
    for (float p : probs) sum += p;
    CHECK(std::fabs(sum - 1.0) < 1e-6);
    // reproduce the average by hand from the two windows
    std::mt19937 rng(0);
    std::vector<double> manual(7, 0.0);
    for (std::int64_t start : {0, 8}) {
      std::vector<Image> frames;
      std::vector<FaceBox> boxes;
      for (std::int64_t f = start; f < start + 16; ++f) {
        frames.push_back(clip.frames[static_cast<std::size_t>(f)]);
        boxes.push_back(e.boxes[static_cast<std::size_t>(f)]);
      }
      auto s = preprocess_clip(frames, boxes, cfg, Mode::kEval, rng);
      auto out = model_forward(s.v_f, s.v_c, params, Mode::kEval, rng);
      auto p = softmax_probs(out.logits, 0);
      for (int k = 0; k < 7; ++k) manual[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < 7; ++k)
      CHECK(probs[static_cast<std::size_t>(k)] ==
            doctest::Approx(manual[static_cast<std::size_t>(k)] / 2.0).epsilon(1e-6));
  }
  SUBCASE("T=16 equals the single-window evaluation path bit-exactly") {
    const auto& e = man.entries[1];
    FrameClip clip = load_clip(man, e);
    clip.frames.resize(16);
    std::vector<FaceBox> boxes(e.boxes.begin(), e.boxes.begin() + 16);
    auto probs = predict_video(clip, boxes, params);
    std::mt19937 rng(0);
    std::vector<Image> frames(clip.frames.begin(), clip.frames.end());
    auto s = preprocess_clip(frames, boxes, cfg, Mode::kEval, rng);
    auto out = model_forward(s.v_f, s.v_c, params, Mode::kEval, rng);
    auto single = softmax_probs(out.logits, 0);
    for (int k = 0; k < 7; ++k)
      CHECK(probs[static_cast<std::size_t>(k)] == single[static_cast<std::size_t>(k)]);
  }
  SUBCASE("static checkpoints are rejected") {
    auto static_params = init_params<float>(ModelConfig::tiny(Variant::kStatic, 7), 1);
    const auto& e = man.entries[0];
    auto clip = load_clip(man, e);
    CHECK_THROWS_AS(predict_video(clip, e.boxes, static_params), InvalidConfigError);
  }
}

TEST_CASE("evaluate is invariant to manifest entry order") {
  const auto dir = temp_dir("orderinv");
  SynthSpec spec;
  spec.clips_per_class = 3;
  spec.frame_h = 48;
  spec.frame_w = 64;
  spec.clip_len = 16;
  spec.seed = 9;
  spec.out_dir = dir;
  auto man = generate_synthetic_corpus(spec);
  ModelConfig cfg = ModelConfig::production(Variant::kStatic);
  cfg.channels = {4, 4, 8, 8, 8};
  cfg.attn_hidden = 4;
  cfg.gate_hidden = 4;
  cfg.cls_hidden = 8;
  cfg.face_hw = 32;
  cfg.ctx_h = cfg.ctx_w = 32;
  auto params = init_params<float>(cfg, 11);
  auto r1 = evaluate(man, Split::kTest, params);
  DatasetManifest shuffled = man;
  std::mt19937 rng(1);
  std::shuffle(shuffled.entries.begin(), shuffled.entries.end(), rng);
  auto r2 = evaluate(shuffled, Split::kTest, params);
  CHECK(r1.accuracy == r2.accuracy);
  CHECK(r1.confusion.counts == r2.confusion.counts);
}

TEST_CASE("ablation flag parsing and the default Table rows") {
  const auto sets = default_ablation_sets();
  REQUIRE(sets.size() == 6);
  CHECK(sets[0] == AblationFlags{true, false, false, false});
  CHECK(sets[1] == AblationFlags{false, true, true, false});
  CHECK(sets[2] == AblationFlags{true, true, false, false});
  CHECK(sets[3] == AblationFlags{true, true, true, false});
  CHECK(sets[4] == AblationFlags{true, true, false, true});
  CHECK(sets[5] == AblationFlags{true, true, true, true});
  CHECK(parse_flag_set("F,C,cA,fA") == sets[5]);
  CHECK(parse_flag_set("F") == sets[0]);
  CHECK_THROWS_AS(parse_flag_set("F,Z"), InvalidConfigError);
  CHECK(flag_set_name(sets[1]) == "C,cA");
}

TEST_CASE("the ablation harness trains each requested variant and reports in order") {
  const auto dir = temp_dir("ablate");
  SynthSpec spec;
  spec.clips_per_class = 5;
  spec.frame_h = 48;
  spec.frame_w = 64;
  spec.clip_len = 16;
  spec.seed = 13;
  spec.out_dir = dir;
  auto man = generate_synthetic_corpus(spec);
  ModelConfig base = ModelConfig::production(Variant::kStatic);
  base.channels = {4, 4, 8, 8, 8};
  base.attn_hidden = 4;
  base.gate_hidden = 4;
  base.cls_hidden = 8;
  base.face_hw = 32;
  base.ctx_h = base.ctx_w = 32;
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.seed = 7;
  const std::vector<AblationFlags> sets = {AblationFlags{true, false, false, false},
                                           AblationFlags{true, true, true, true}};
  auto rows = run_ablation(man, tc, base, sets);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].flags == sets[0]);
  CHECK(rows[1].flags == sets[1]);
  const std::string report = format_ablation_report(rows);
  CHECK(report.find("Acc") != std::string::npos);
}

TEST_CASE("attention export writes one heatmap per temporal slice") {
  const auto dir = temp_dir("viz");
  ModelConfig cfg = ModelConfig::tiny(Variant::kDynamic);
  auto params = init_params<float>(cfg, 17);
  // uniform attention: zero the final attention conv
  for (std::int64_t i = 0; i < params.attention.conv2.weight.numel(); ++i)
    params.attention.conv2.weight[i] = 0.f;
  params.attention.conv2.bias[0] = 0.f;
  ClipSample sample;
  sample.v_f = Tensor<float>(cfg.face_input(1));
  sample.v_c = Tensor<float>(cfg.context_input(1));
  std::mt19937 rng(17);
  fill_uniform(sample.v_f, rng, 0.f, 1.f);
  fill_uniform(sample.v_c, rng, 0.f, 1.f);
  auto files = export_attention(sample, params, dir / "attn");
  REQUIRE(files.size() == 1);  // tiny dynamic collapses to one temporal slice
  Image img = read_ppm(files[0]);
  CHECK(img.h == cfg.ctx_h);
  CHECK(img.w == cfg.ctx_w);
  // uniform attention maps to the colormap midpoint: 0.5*frame + 0.5*(127.5,0,127.5)
  const float fr = sample.v_c[0] * 255.f;
  CHECK(static_cast<int>(img.px(0, 0)[0]) ==
        static_cast<int>(std::lround(0.5f * fr + 0.5f * 127.5f)));
  CHECK(static_cast<int>(img.px(0, 0)[1]) ==
        static_cast<int>(std::lround(0.5f * sample.v_c[cfg.ctx_h * cfg.ctx_w * cfg.temporal] * 255.f)));
}
