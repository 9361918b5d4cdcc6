#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "caer/checkpoint.hpp"
#include "caer/gradcheck.hpp"
#include "caer/model.hpp"
#include "oracles.hpp"

using namespace caer;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("caer_test_" + name);
}

}  // namespace

TEST_CASE("identical gates and identical features give lambda exactly 0.5") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  auto params = init_params<float>(cfg, 1);
  params.fusion.context_gate = params.fusion.face_gate;  // tie the gates
  std::mt19937 rng(1);
  Tensor<float> x(Shape{3, cfg.feature_dim()});
  fill_normal(x, rng, 1.f);
  auto acts = fuse_forward(x, x, params.fusion, cfg, Mode::kEval, rng);
  for (std::size_t i = 0; i < acts.lambdas.lambda_f.size(); ++i) {
    CHECK(acts.lambdas.lambda_f[i] == 0.5f);  // exact, not approximate
    CHECK(acts.lambdas.lambda_c[i] == 0.5f);
  }
}

TEST_CASE("lambda_f + lambda_c = 1 and both lie in (0,1)") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  auto params = init_params<float>(cfg, 2);
  std::mt19937 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<float> xf(Shape{2, cfg.feature_dim()}), xc(Shape{2, cfg.feature_dim()});
    fill_normal(xf, rng, 2.f);
    fill_normal(xc, rng, 2.f);
    auto acts = fuse_forward(xf, xc, params.fusion, cfg, Mode::kEval, rng);
    for (std::size_t i = 0; i < acts.lambdas.lambda_f.size(); ++i) {
      const float lf = acts.lambdas.lambda_f[i], lc = acts.lambdas.lambda_c[i];
      CHECK(std::fabs(lf + lc - 1.f) < 1e-6f);
      CHECK(lf > 0.f);
      CHECK(lf < 1.f);
    }
  }
}

TEST_CASE("a gate margin of ln 9 puts 0.9 on the face stream") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  auto params = init_params<float>(cfg, 3);
  // zero the gate weights so s_f and s_c are the fc2 biases alone
  for (auto* gate : {&params.fusion.face_gate, &params.fusion.context_gate}) {
    for (std::int64_t i = 0; i < gate->fc1.weight.numel(); ++i) gate->fc1.weight[i] = 0.f;
    for (std::int64_t i = 0; i < gate->fc1.bias.numel(); ++i) gate->fc1.bias[i] = 0.f;
    for (std::int64_t i = 0; i < gate->fc2.weight.numel(); ++i) gate->fc2.weight[i] = 0.f;
  }
  params.fusion.face_gate.fc2.bias[0] = std::log(9.f);
  params.fusion.context_gate.fc2.bias[0] = 0.f;
  std::mt19937 rng(3);
  Tensor<float> xf(Shape{2, cfg.feature_dim()}), xc(Shape{2, cfg.feature_dim()});
  fill_normal(xf, rng, 1.f);
  fill_normal(xc, rng, 1.f);
  auto acts = fuse_forward(xf, xc, params.fusion, cfg, Mode::kEval, rng);
  for (std::size_t i = 0; i < acts.lambdas.lambda_f.size(); ++i)
    CHECK(std::fabs(acts.lambdas.lambda_f[i] - 0.9f) < 1e-6f);
}

TEST_CASE("fuse rejects mismatched widths") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  auto params = init_params<float>(cfg, 4);
  std::mt19937 rng(4);
  Tensor<float> xf(Shape{2, cfg.feature_dim()});
  Tensor<float> bad(Shape{2, cfg.feature_dim() + 1});
  CHECK_THROWS_AS(fuse_forward(xf, bad, params.fusion, cfg, Mode::kEval, rng), ShapeError);
}

TEST_CASE("gradient of lambda_f w.r.t. the face score is lambda_f * lambda_c") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  auto params = init_params<float>(cfg, 5);
  std::mt19937 rng(5);
  Tensor<float> xf(Shape{1, cfg.feature_dim()}), xc(Shape{1, cfg.feature_dim()});
  fill_normal(xf, rng, 1.f);
  fill_normal(xc, rng, 1.f);
  auto lambda_of = [&](float bias_shift) {
    auto p = params;
    p.fusion.face_gate.fc2.bias[0] += bias_shift;
    std::mt19937 r(0);
    return fuse_forward(xf, xc, p.fusion, cfg, Mode::kEval, r).lambdas;
  };
  const float h = 1e-3f;
  const auto base = lambda_of(0.f);
  const auto up = lambda_of(h);
  const auto down = lambda_of(-h);
  const float numeric = (up.lambda_f[0] - down.lambda_f[0]) / (2 * h);
  const float analytic = base.lambda_f[0] * base.lambda_c[0];
  CHECK(numeric == doctest::Approx(analytic).epsilon(1e-3));
}

TEST_CASE("fusion gates in isolation match finite differences tightly") {
  auto report = gradient_check_fusion(7);
  CHECK(report.max_rel_err < 1e-4);
  CHECK(report.tensors.size() == 12);  // 4 per gate, 4 classifier tensors
}

TEST_CASE("full tiny static model matches finite differences") {
  auto report = gradient_check(ModelConfig::tiny(Variant::kStatic), 11);
  INFO(format_gradcheck_report(report));
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("model forward production shapes and eval determinism") {
  ModelConfig cfg = ModelConfig::production(Variant::kDynamic);
  auto params = init_params<float>(cfg, 6);
  std::mt19937 rng(6);
  Tensor<float> vf(cfg.face_input(2)), vc(cfg.context_input(2));
  fill_uniform(vf, rng, 0.f, 1.f);
  fill_uniform(vc, rng, 0.f, 1.f);
  std::mt19937 r1(0), r2(0);
  auto o1 = model_forward(vf, vc, params, Mode::kEval, r1);
  CHECK(o1.logits.shape() == Shape{2, 7});
  auto o2 = model_forward(vf, vc, params, Mode::kEval, r2);
  CHECK(oracle::max_abs_diff(o1.logits, o2.logits) == 0.0);
}

TEST_CASE("all-zero parameters reduce the model to the classifier bias") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kDynamic, 4);
  auto params = make_params<float>(cfg);  // zeros everywhere
  params.fusion.cls2.bias = Tensor<float>(Shape{4}, {0.1f, -0.2f, 0.3f, 0.7f});
  std::mt19937 rng(7);
  Tensor<float> vf(cfg.face_input(2)), vc(cfg.context_input(2));
  fill_uniform(vf, rng, 0.f, 1.f);
  fill_uniform(vc, rng, 0.f, 1.f);
  auto out = model_forward(vf, vc, params, Mode::kEval, rng);
  for (std::int64_t r = 0; r < 2; ++r)
    for (std::int64_t k = 0; k < 4; ++k)
      CHECK(out.logits[r * 4 + k] == doctest::Approx(params.fusion.cls2.bias[k]));
}

TEST_CASE("model backward: zero upstream gradient gives all-zero gradients") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kDynamic);
  auto params = init_params<float>(cfg, 8);
  std::mt19937 rng(8);
  Tensor<float> vf(cfg.face_input(2)), vc(cfg.context_input(2));
  fill_uniform(vf, rng, 0.f, 1.f);
  fill_uniform(vc, rng, 0.f, 1.f);
  auto out = model_forward(vf, vc, params, Mode::kTrain, rng);
  Tensor<float> d_zero(out.logits.shape());
  auto grads = model_backward(out, params, d_zero);
  for_each_param(grads, [&](const std::string&, const Tensor<float>& t, bool learnable) {
    if (!learnable) return;
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.f);
  });
}

TEST_CASE("argmax decision is invariant to constant logit shifts") {
  std::mt19937 rng(9);
  Tensor<float> logits(Shape{5, 7});
  fill_normal(logits, rng, 1.f);
  for (std::int64_t r = 0; r < 5; ++r) {
    int best = 0;
    for (int k = 1; k < 7; ++k)
      if (logits[r * 7 + k] > logits[r * 7 + best]) best = k;
    Tensor<float> shifted = logits;
    for (int k = 0; k < 7; ++k) shifted[r * 7 + k] += 123.f;
    int best2 = 0;
    for (int k = 1; k < 7; ++k)
      if (shifted[r * 7 + k] > shifted[r * 7 + best2]) best2 = k;
    CHECK(best == best2);
  }
}

TEST_CASE("face-only ablation ignores the context input entirely") {
  ModelConfig cfg = ablation_config(ModelConfig::tiny(Variant::kDynamic),
                                    AblationFlags{true, false, false, false});
  auto params = init_params<float>(cfg, 10);
  std::mt19937 rng(10);
  Tensor<float> vf(cfg.face_input(2));
  fill_uniform(vf, rng, 0.f, 1.f);
  Tensor<float> vc1(cfg.context_input(2)), vc2(cfg.context_input(2));
  fill_uniform(vc2, rng, 0.f, 1.f);  // perturbed context
  std::mt19937 r1(0), r2(0);
  auto o1 = model_forward(vf, vc1, params, Mode::kEval, r1);
  auto o2 = model_forward(vf, vc2, params, Mode::kEval, r2);
  CHECK(oracle::max_abs_diff(o1.logits, o2.logits) == 0.0);
  // and no context gradients exist at all
  auto grads = model_backward(o1, params, Tensor<float>(o1.logits.shape()));
  bool saw_context = false;
  for_each_param(grads, [&](const std::string& name, const Tensor<float>&, bool) {
    if (name.rfind("context", 0) == 0) saw_context = true;
  });
  CHECK_FALSE(saw_context);
}

TEST_CASE("disabling both streams is rejected") {
  CHECK_THROWS_AS(ablation_config(ModelConfig::tiny(Variant::kDynamic),
                                  AblationFlags{false, false, false, false}),
                  InvalidConfigError);
}

TEST_CASE("zeroed gates make the full model equal the fixed-0.5 variant bit-for-bit") {
  ModelConfig full_cfg = ModelConfig::tiny(Variant::kDynamic);
  auto full = init_params<float>(full_cfg, 12);
  for (auto* gate : {&full.fusion.face_gate, &full.fusion.context_gate})
    for (Tensor<float>* t : {&gate->fc1.weight, &gate->fc1.bias, &gate->fc2.weight,
                             &gate->fc2.bias})
      for (std::int64_t i = 0; i < t->numel(); ++i) (*t)[i] = 0.f;
  ModelConfig nofa_cfg = ablation_config(full_cfg, AblationFlags{true, true, true, false});
  auto nofa = init_params<float>(nofa_cfg, 12);  // shared tensors match by seeding
  std::mt19937 rng(12);
  Tensor<float> vf(full_cfg.face_input(2)), vc(full_cfg.context_input(2));
  fill_uniform(vf, rng, 0.f, 1.f);
  fill_uniform(vc, rng, 0.f, 1.f);
  std::mt19937 r1(0), r2(0);
  auto o1 = model_forward(vf, vc, full, Mode::kEval, r1);
  auto o2 = model_forward(vf, vc, nofa, Mode::kEval, r2);
  CHECK(oracle::max_abs_diff(o1.logits, o2.logits) == 0.0);
}

TEST_CASE("initialization statistics") {
  SUBCASE("same seed reproduces parameters exactly") {
    auto a = init_params<float>(ModelConfig::tiny(Variant::kDynamic), 21);
    auto b = init_params<float>(ModelConfig::tiny(Variant::kDynamic), 21);
    bool equal = true;
    for_each_param(a, [&](const std::string& name, const Tensor<float>& t, bool) {
      for_each_param(b, [&](const std::string& name2, const Tensor<float>& t2, bool) {
        if (name == name2)
          for (std::int64_t i = 0; i < t.numel(); ++i)
            if (t[i] != t2[i]) equal = false;
      });
    });
    CHECK(equal);
  }
  SUBCASE("weight sample std is close to sqrt(2/fan_in)") {
    auto params = init_params<float>(ModelConfig::production(Variant::kDynamic), 22);
    const Tensor<float>& w = params.context.blocks[2].conv.weight;  // 128x64x3x3x3
    const double expected = std::sqrt(2.0 / (64.0 * 27.0));
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      sum += w[i];
      sq += static_cast<double>(w[i]) * static_cast<double>(w[i]);
    }
    const double mean = sum / static_cast<double>(w.numel());
    const double std = std::sqrt(sq / static_cast<double>(w.numel()) - mean * mean);
    CHECK(std == doctest::Approx(expected).epsilon(0.1));
  }
  SUBCASE("fresh logits do not explode") {
    ModelConfig cfg = ModelConfig::production(Variant::kStatic);
    auto params = init_params<float>(cfg, 23);
    std::mt19937 rng(23);
    Tensor<float> vf(cfg.face_input(2)), vc(cfg.context_input(2));
    fill_uniform(vf, rng, 0.f, 1.f);
    fill_uniform(vc, rng, 0.f, 1.f);
    auto out = model_forward(vf, vc, params, Mode::kTrain, rng);
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < out.logits.numel(); ++i) {
      sum += out.logits[i];
      sq += static_cast<double>(out.logits[i]) * static_cast<double>(out.logits[i]);
    }
    const double mean = sum / static_cast<double>(out.logits.numel());
    CHECK(std::sqrt(sq / static_cast<double>(out.logits.numel()) - mean * mean) < 10.0);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kDynamic);
  auto params = init_params<float>(cfg, 31);
  params.step = 1234;
  const auto path = temp_file("roundtrip.caer");
  save_checkpoint(params, path);
  auto loaded = load_checkpoint<float>(path, cfg);
  CHECK(loaded.step == 1234);
  for_each_param(params, [&](const std::string& name, const Tensor<float>& t, bool) {
    for_each_param(loaded, [&](const std::string& name2, const Tensor<float>& t2, bool) {
      if (name != name2) return;
      REQUIRE(t.shape() == t2.shape());
      for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == t2[i]);
    });
  });
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint error paths") {
  ModelConfig cfg = ModelConfig::tiny(Variant::kStatic);
  auto params = init_params<float>(cfg, 32);
  const auto path = temp_file("errors.caer");
  save_checkpoint(params, path);

  SUBCASE("truncated file") {
    const auto truncated = temp_file("truncated.caer");
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    std::ofstream out(truncated, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>(truncated, cfg), CheckpointError);
    std::filesystem::remove(truncated);
  }
  SUBCASE("bad magic") {
    const auto bad = temp_file("badmagic.caer");
    std::ofstream out(bad, std::ios::binary);
    out << "NOPE this is not a checkpoint";
    out.close();
    CHECK_THROWS_AS(load_checkpoint<float>(bad, cfg), CheckpointError);
    std::filesystem::remove(bad);
  }
  SUBCASE("variant mismatch names the offending tensor") {
    ModelConfig dyn = ModelConfig::tiny(Variant::kDynamic);
    try {
      load_checkpoint<float>(path, dyn);
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("face.conv1.weight") != std::string::npos);
    }
  }
  std::filesystem::remove(path);
}
