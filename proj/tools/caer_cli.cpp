#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <map>

#include "caer/checkpoint.hpp"
#include "caer/data.hpp"
#include "caer/eval.hpp"
#include "caer/gradcheck.hpp"
#include "caer/model.hpp"
#include "caer/train.hpp"

namespace {

caer::Variant parse_variant(const std::string& name) {
  if (name == "static") return caer::Variant::kStatic;
  if (name == "dynamic") return caer::Variant::kDynamic;
  throw caer::InvalidConfigError("variant must be 'static' or 'dynamic', got '" + name + "'");
}

int run_synth_gen(const caer::SynthSpec& spec) {
  const auto man = caer::generate_synthetic_corpus(spec);
  std::cout << "wrote " << man.entries.size() << " clips under " << spec.out_dir.string()
            << " (manifest.txt included)\n";
  return 0;
}

int run_annotate(const std::string& manifest_path, const std::string& annotations_path,
                 const std::string& out_path, std::uint32_t seed) {
  const auto man = caer::load_manifest(manifest_path);
  const auto records = caer::load_annotations(annotations_path);
  std::map<std::string, std::vector<caer::AnnotationRecord>> by_clip;
  for (const auto& r : records) by_clip[r.clip_id].push_back(r);
  std::vector<caer::ManifestEntry> kept;
  std::int64_t dropped = 0, unannotated = 0;
  for (const auto& e : man.entries) {
    auto it = by_clip.find(e.clip_dir);
    if (it == by_clip.end()) {
      ++unannotated;
      continue;
    }
    const auto agg = caer::aggregate_annotations(it->second);
    if (!agg.keep) {
      ++dropped;
      continue;
    }
    caer::ManifestEntry out = e;
    out.label = agg.label;
    kept.push_back(std::move(out));
  }
  caer::split_dataset(kept, seed);
  caer::write_manifest(kept, out_path);
  std::cout << "kept " << kept.size() << " clips, dropped " << dropped
            << " by the majority/confidence rules, " << unannotated << " without annotations\n";
  return 0;
}

int run_train(const std::string& manifest_path, const caer::TrainConfig& tc,
              caer::Variant variant, const std::string& out_dir) {
  const auto man = caer::load_manifest(manifest_path);
  const auto mc = caer::ModelConfig::production(variant);
  std::filesystem::create_directories(out_dir);
  auto result = caer::train(man, tc, mc, &std::cout,
                            std::filesystem::path(out_dir) / "metrics.jsonl");
  const auto ckpt = std::filesystem::path(out_dir) / "checkpoint.caer";
  caer::save_checkpoint(result.params, ckpt);
  std::cout << "checkpoint written to " << ckpt.string() << "\n";
  return 0;
}

int run_eval(const std::string& manifest_path, const std::string& checkpoint_path,
             const std::string& split, const std::string& variant) {
  const auto man = caer::load_manifest(manifest_path);
  caer::ModelParams<float> params =
      variant.empty()
          ? caer::load_checkpoint<float>(checkpoint_path)
          : caer::load_checkpoint<float>(checkpoint_path,
                                         caer::ModelConfig::production(parse_variant(variant)));
  const auto res = caer::evaluate(man, caer::split_from(split), params);
  std::cout << "accuracy " << res.accuracy << " over " << res.confusion.total() << " clips\n"
            << res.confusion.str();
  return 0;
}

int run_predict_video(const std::string& manifest_path, const std::string& checkpoint_path,
                      std::int64_t clip_index) {
  const auto man = caer::load_manifest(manifest_path);
  if (clip_index < 0 || clip_index >= static_cast<std::int64_t>(man.entries.size()))
    throw caer::DataError("clip index outside manifest");
  const auto& entry = man.entries[static_cast<std::size_t>(clip_index)];
  auto params = caer::load_checkpoint<float>(checkpoint_path);
  const auto clip = caer::load_clip(man, entry);
  const auto probs = caer::predict_video(clip, entry.boxes, params);
  int best = 0;
  for (std::size_t j = 1; j < probs.size(); ++j)
    if (probs[j] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(j);
  std::cout << "clip " << entry.clip_dir << " probabilities:";
  for (std::size_t j = 0; j < probs.size(); ++j)
    std::cout << ' ' << caer::category_name(static_cast<int>(j)) << '=' << probs[j];
  std::cout << "\nprediction: " << caer::category_name(best) << "\n";
  return 0;
}

int run_ablate(const std::string& manifest_path, const caer::TrainConfig& tc,
               caer::Variant variant, const std::string& sets_text, const std::string& out_path) {
  const auto man = caer::load_manifest(manifest_path);
  std::vector<caer::AblationFlags> sets;
  if (sets_text.empty()) {
    sets = caer::default_ablation_sets();
  } else {
    std::stringstream ss(sets_text);
    std::string tok;
    while (std::getline(ss, tok, ';'))
      if (!tok.empty()) sets.push_back(caer::parse_flag_set(tok));
  }
  const auto rows =
      caer::run_ablation(man, tc, caer::ModelConfig::production(variant), sets, &std::cout);
  const std::string report = caer::format_ablation_report(rows);
  std::cout << report;
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    for (const auto& r : rows)
      os << "{\"flags\":\"" << caer::flag_set_name(r.flags) << "\",\"accuracy\":" << r.accuracy
         << "}\n";
  }
  return 0;
}

int run_gradcheck(const std::string& variant, std::uint32_t seed) {
  const auto cfg = caer::ModelConfig::tiny(parse_variant(variant));
  const auto report = caer::gradient_check(cfg, seed);
  std::cout << caer::format_gradcheck_report(report);
  return 0;
}

int run_viz_attn(const std::string& manifest_path, const std::string& checkpoint_path,
                 std::int64_t clip_index, const std::string& out_prefix) {
  const auto man = caer::load_manifest(manifest_path);
  if (clip_index < 0 || clip_index >= static_cast<std::int64_t>(man.entries.size()))
    throw caer::DataError("clip index outside manifest");
  const auto& entry = man.entries[static_cast<std::size_t>(clip_index)];
  auto params = caer::load_checkpoint<float>(checkpoint_path);
  std::vector<std::int64_t> window;
  if (params.cfg.variant == caer::Variant::kDynamic)
    window = caer::eval_window(entry.frame_count);
  else
    window = {entry.frame_count / 2};
  const auto frames = caer::load_frames(man, entry, window);
  std::vector<caer::FaceBox> boxes;
  for (auto f : window) boxes.push_back(entry.boxes[static_cast<std::size_t>(f)]);
  std::mt19937 rng(0);
  const auto sample = caer::preprocess_clip(frames, boxes, params.cfg, caer::Mode::kEval, rng);
  const auto written = caer::export_attention(sample, params, out_prefix);
  for (const auto& p : written) std::cout << "wrote " << p.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAER-Net: context-aware emotion recognition"};
  app.require_subcommand(1);

  // synth-gen
  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic context-dependent corpus");
  caer::SynthSpec spec;
  std::string synth_out;
  bool table1 = false;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--clips-per-class", spec.clips_per_class, "clips per category");
  synth->add_option("--total", spec.total, "total clips (with --table1)");
  synth->add_flag("--table1", table1, "draw class counts from the corpus distribution table");
  synth->add_option("--frames", spec.clip_len, "frames per clip (>= 16)");
  synth->add_option("--height", spec.frame_h, "frame height");
  synth->add_option("--width", spec.frame_w, "frame width");
  synth->add_option("--noise", spec.noise_std, "additive pixel noise std in [0,1] units");
  synth->add_option("--seed", spec.seed, "rng seed");

  // annotate
  auto* annotate = app.add_subcommand("annotate", "aggregate 3-annotator votes and split");
  std::string ann_manifest, ann_file, ann_out;
  std::uint32_t ann_seed = 0;
  annotate->add_option("--manifest", ann_manifest, "input manifest (labels are replaced)")
      ->required();
  annotate->add_option("--annotations", ann_file, "annotation records file")->required();
  annotate->add_option("--out", ann_out, "output manifest path")->required();
  annotate->add_option("--seed", ann_seed, "split seed");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a manifest");
  caer::TrainConfig tc;
  std::string train_manifest, train_variant = "dynamic", train_out = "run";
  bool no_flip = false, no_contrast = false, no_color = false;
  train_cmd->add_option("--manifest", train_manifest, "dataset manifest")->required();
  train_cmd->add_option("--variant", train_variant, "static or dynamic");
  train_cmd->add_option("--epochs", tc.epochs, "training epochs");
  train_cmd->add_option("--batch-size", tc.batch_size, "batch size");
  train_cmd->add_option("--lr", tc.base_lr, "base learning rate");
  train_cmd->add_option("--dropout", tc.dropout, "classifier dropout rate");
  train_cmd->add_option("--seed", tc.seed, "rng seed");
  train_cmd->add_option("--stop-train-acc", tc.stop_train_acc,
                        "stop early at this train accuracy (0 disables)");
  train_cmd->add_flag("--no-flip", no_flip, "disable horizontal flips");
  train_cmd->add_flag("--no-contrast", no_contrast, "disable contrast jitter");
  train_cmd->add_flag("--no-color", no_color, "disable color jitter");
  train_cmd->add_option("--out", train_out, "output directory for checkpoint and metrics");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  std::string eval_manifest, eval_ckpt, eval_split = "test", eval_variant;
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--split", eval_split, "train, val or test");
  eval_cmd->add_option("--variant", eval_variant, "expected variant (cross-checked)");

  // predict-video
  auto* pv = app.add_subcommand("predict-video", "sliding-window prediction for one clip");
  std::string pv_manifest, pv_ckpt;
  std::int64_t pv_index = 0;
  pv->add_option("--manifest", pv_manifest, "dataset manifest")->required();
  pv->add_option("--checkpoint", pv_ckpt, "checkpoint path")->required();
  pv->add_option("--clip-index", pv_index, "entry index in the manifest");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "train and evaluate ablation variants");
  caer::TrainConfig atc;
  std::string ab_manifest, ab_variant = "dynamic", ab_sets, ab_out;
  ablate->add_option("--manifest", ab_manifest, "dataset manifest")->required();
  ablate->add_option("--variant", ab_variant, "static or dynamic");
  ablate->add_option("--sets", ab_sets,
                     "semicolon-separated flag sets, e.g. 'F;F,C,cA,fA' (default: the six "
                     "CAER-Net rows)");
  ablate->add_option("--epochs", atc.epochs, "training epochs per variant");
  ablate->add_option("--batch-size", atc.batch_size, "batch size");
  ablate->add_option("--lr", atc.base_lr, "base learning rate");
  ablate->add_option("--seed", atc.seed, "shared init seed");
  ablate->add_option("--out", ab_out, "report file (JSON lines)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check on a shrunken model");
  std::string gc_variant = "dynamic";
  std::uint32_t gc_seed = 0;
  gc->add_option("--variant", gc_variant, "static or dynamic");
  gc->add_option("--seed", gc_seed, "rng seed");

  // viz-attn
  auto* viz = app.add_subcommand("viz-attn", "export attention heatmaps for one clip");
  std::string viz_manifest, viz_ckpt, viz_out = "attention";
  std::int64_t viz_index = 0;
  viz->add_option("--manifest", viz_manifest, "dataset manifest")->required();
  viz->add_option("--checkpoint", viz_ckpt, "checkpoint path")->required();
  viz->add_option("--clip-index", viz_index, "entry index in the manifest");
  viz->add_option("--out", viz_out, "output path prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) {
      if (table1) {
        spec.class_weights = caer::table1_distribution();
        if (spec.total == 0) spec.total = 7 * spec.clips_per_class;
      }
      spec.out_dir = synth_out;
      return run_synth_gen(spec);
    }
    if (*annotate) return run_annotate(ann_manifest, ann_file, ann_out, ann_seed);
    if (*train_cmd) {
      tc.aug_flip = !no_flip;
      tc.aug_contrast = !no_contrast;
      tc.aug_color = !no_color;
      return run_train(train_manifest, tc, parse_variant(train_variant), train_out);
    }
    if (*eval_cmd) return run_eval(eval_manifest, eval_ckpt, eval_split, eval_variant);
    if (*pv) return run_predict_video(pv_manifest, pv_ckpt, pv_index);
    if (*ablate) return run_ablate(ab_manifest, atc, parse_variant(ab_variant), ab_sets, ab_out);
    if (*gc) return run_gradcheck(gc_variant, gc_seed);
    if (*viz) return run_viz_attn(viz_manifest, viz_ckpt, viz_index, viz_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
