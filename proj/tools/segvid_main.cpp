// SPDX-License-Identifier: Apache-2.0
//
// segvid: synthetic data generation, training, shift-averaged inference,
// evaluation, rank fusion, and ensemble weight tuning from one binary.
//
// Exit codes: 0 success, 2 usage error, 3 data/format error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vsc/dataio.hpp"
#include "vsc/ensemble.hpp"
#include "vsc/errors.hpp"
#include "vsc/metrics.hpp"
#include "vsc/model.hpp"
#include "vsc/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string manifest;
  std::uint64_t seed = 1;
  std::string checkpoint;
  std::string out;
};

vsc::ModelConfig model_config_from(const vsc::DatasetManifest& manifest, const std::string& family,
                                   const std::string& agg, double temperature) {
  vsc::ModelConfig config;
  config.family = vsc::family_from_string(family);
  config.agg = vsc::agg_mode_from_string(agg);
  config.num_classes = manifest.classes;
  config.dim_visual = manifest.dim_visual;
  config.dim_audio = manifest.dim_audio;
  config.temperature = temperature;
  return config;
}

void check_model_matches(const vsc::Model& model, const vsc::DatasetManifest& manifest) {
  const auto& c = model.config();
  if (c.dim_visual != manifest.dim_visual || c.dim_audio != manifest.dim_audio ||
      c.num_classes != manifest.classes)
    throw vsc::FormatError("checkpoint was trained for " + std::to_string(c.num_classes) +
                           " classes with dims " + std::to_string(c.dim_visual) + "+" +
                           std::to_string(c.dim_audio) + ", manifest has " +
                           std::to_string(manifest.classes) + " classes with dims " +
                           std::to_string(manifest.dim_visual) + "+" +
                           std::to_string(manifest.dim_audio));
}

void print_map_report(const vsc::PredictionTable& preds, const vsc::GroundTruth& truth, int k) {
  for (const auto& [cls, positives] : truth.positives) {
    if (positives.empty()) continue;
    auto it = preds.find(cls);
    static const std::vector<vsc::RankedItem> empty;
    const double ap = vsc::average_precision_at_k(it == preds.end() ? empty : it->second, positives, k);
    std::printf("class %d\tap@%d %.6f\t(%zu positives)\n", cls, k, ap, positives.size());
  }
  std::printf("map@%d %.6f\n", k, vsc::map_at_k(preds, truth, k));
}

int run(int argc, char** argv) {
  CLI::App app{"video segment classification workbench"};
  app.require_subcommand(1);

  CommonOpts opt;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  vsc::SynthConfig synth;
  std::string gen_out;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", synth.seed, "generator seed");
  gen->add_option("--classes", synth.classes, "number of classes");
  gen->add_option("--videos", synth.videos, "number of videos");
  gen->add_option("--frames", synth.frames, "base frames per video");
  gen->add_option("--dim-visual", synth.dim_visual, "visual feature width");
  gen->add_option("--dim-audio", synth.dim_audio, "audio feature width");

  // shared training options
  vsc::TrainConfig train;
  std::string family = "netvlad", agg = "mean";
  double segment_fraction = 1.0;

  auto add_train_opts = [&](CLI::App* cmd, bool with_family) {
    cmd->add_option("--manifest", opt.manifest, "dataset manifest")->required();
    cmd->add_option("--seed", train.seed, "training seed");
    cmd->add_option("--out", opt.out, "output checkpoint")->required();
    cmd->add_option("--steps", train.steps, "optimizer steps");
    cmd->add_option("--batch", train.batch_size, "batch size");
    cmd->add_option("--lr", train.learning_rate, "initial learning rate");
    cmd->add_option("--decay", train.decay, "learning-rate decay factor");
    cmd->add_option("--decay-interval", train.decay_interval, "examples per decay factor");
    if (with_family) {
      cmd->add_option("--family", family, "netvlad|nextvlad_mix|bert|bert_cross");
      cmd->add_option("--agg", agg, "first|mean|attention (transformer families)");
      cmd->add_option("--frames-per-sample", train.frame_samples, "frames drawn per video");
      cmd->add_option("--temperature", train.temperature, "distillation temperature");
    }
  };

  auto* pre = app.add_subcommand("pretrain", "train on video-level labels");
  add_train_opts(pre, true);

  auto* fine = app.add_subcommand("finetune", "fine-tune on segment labels");
  add_train_opts(fine, false);
  fine->add_option("--checkpoint", opt.checkpoint, "pretrained checkpoint")->required();
  fine->add_option("--segment-fraction", segment_fraction, "fraction of segment labels to use");
  fine->add_option("--eval-interval", train.eval_interval, "steps between holdout evaluations");
  fine->add_option("--topk", train.eval_topk, "K for holdout MAP");

  // infer
  auto* infer = app.add_subcommand("infer", "score labeled segment locations");
  int tta_min = 0, tta_max = 0, topk = 100000;
  std::string split = "test";
  infer->add_option("--manifest", opt.manifest, "dataset manifest")->required();
  infer->add_option("--checkpoint", opt.checkpoint, "model checkpoint")->required();
  infer->add_option("--out", opt.out, "prediction file")->required();
  infer->add_option("--split", split, "dataset split to score");
  infer->add_option("--tta-min", tta_min, "smallest shift");
  infer->add_option("--tta-max", tta_max, "largest shift");
  infer->add_option("--topk", topk, "entries kept per class");

  // eval
  auto* eval = app.add_subcommand("eval", "MAP@K of a prediction file");
  std::string truth_file, pred_file;
  eval->add_option("predictions", pred_file, "prediction file")->required();
  eval->add_option("--truth", truth_file, "segment label file")->required();
  eval->add_option("--topk", topk, "K");

  // fuse
  auto* fuse = app.add_subcommand("fuse", "rank-fuse prediction files");
  std::vector<std::string> fuse_files;
  std::vector<double> weights;
  fuse->add_option("files", fuse_files, "prediction files")->required();
  fuse->add_option("--weights", weights, "one weight per file")->required();
  fuse->add_option("--out", opt.out, "fused prediction file")->required();
  fuse->add_option("--topk", topk, "entries kept per class");

  // tune-weights
  auto* tune = app.add_subcommand("tune-weights", "Bayesian-optimize fusion weights");
  int iters = 40, init_samples = 8;
  tune->add_option("files", fuse_files, "prediction files")->required();
  tune->add_option("--truth", truth_file, "segment label file")->required();
  tune->add_option("--out", opt.out, "weights report")->required();
  tune->add_option("--iters", iters, "optimization iterations");
  tune->add_option("--init-samples", init_samples, "initial samples");
  tune->add_option("--seed", opt.seed, "optimizer seed");
  tune->add_option("--topk", topk, "K for local MAP");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (gen->parsed()) {
    const auto manifest = vsc::synth_generate(synth, gen_out);
    std::printf("wrote %s (classes %d, dims %d+%d)\n",
                (std::filesystem::path(gen_out) / "manifest.txt").string().c_str(), manifest.classes,
                manifest.dim_visual, manifest.dim_audio);
    return 0;
  }

  if (pre->parsed()) {
    const auto manifest = vsc::read_manifest(opt.manifest);
    const auto data = vsc::load_split(manifest, "pretrain");
    train.family = vsc::family_from_string(family);
    train.agg = vsc::agg_mode_from_string(agg);
    auto model = vsc::make_model(model_config_from(manifest, family, agg, train.temperature), train.seed);
    const auto result = vsc::pretrain(*model, data, train, opt.out + ".log");
    vsc::save_model(*model, opt.out);
    std::printf("pretrained %s for %d steps, final loss %.6f\n", family.c_str(), train.steps,
                result.log.back().loss);
    return 0;
  }

  if (fine->parsed()) {
    if (fine->count("--steps") == 0) train.steps = 500;  // fine-tuning default
    const auto manifest = vsc::read_manifest(opt.manifest);
    auto model = vsc::load_model(opt.checkpoint);
    check_model_matches(*model, manifest);
    const auto segments = vsc::load_split(manifest, "finetune");
    const auto holdout = vsc::load_split(manifest, "holdout");
    const auto result = vsc::finetune(*model, segments, holdout, train, segment_fraction);
    vsc::save_model(*model, opt.out);
    std::printf("fine-tuned for %d steps; best holdout map@%d %.6f at step %d\n", train.steps,
                train.eval_topk, result.best_holdout_map, result.best_step);
    return 0;
  }

  if (infer->parsed()) {
    const auto manifest = vsc::read_manifest(opt.manifest);
    auto model = vsc::load_model(opt.checkpoint);
    check_model_matches(*model, manifest);
    const auto data = vsc::load_split(manifest, split);
    const auto preds = vsc::infer_segments(*model, data, tta_min, tta_max, topk);
    vsc::write_predictions(preds, opt.out);
    std::printf("wrote %s (shifts %d..%d, top %d per class)\n", opt.out.c_str(), tta_min, tta_max, topk);
    return 0;
  }

  if (eval->parsed()) {
    const auto preds = vsc::read_predictions(pred_file);
    const auto truth = vsc::truth_from_segments(vsc::read_segments(truth_file));
    print_map_report(preds, truth, topk);
    return 0;
  }

  if (fuse->parsed()) {
    std::vector<vsc::PredictionTable> tables;
    for (const auto& f : fuse_files) tables.push_back(vsc::read_predictions(f));
    const auto fused = vsc::rank_fusion(tables, weights, topk);
    vsc::write_predictions(fused, opt.out);
    std::printf("fused %zu files into %s\n", tables.size(), opt.out.c_str());
    return 0;
  }

  if (tune->parsed()) {
    std::vector<vsc::PredictionTable> tables;
    for (const auto& f : fuse_files) tables.push_back(vsc::read_predictions(f));
    const auto truth = vsc::truth_from_segments(vsc::read_segments(truth_file));
    const auto result = vsc::tune_weights(tables, truth, topk, init_samples, iters, opt.seed);
    std::ofstream out(opt.out, std::ios::trunc);
    if (!out) throw vsc::FormatError("cannot write " + opt.out);
    char buf[64];
    for (std::size_t i = 0; i < fuse_files.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", result.weights[i]);
      out << fuse_files[i] << '\t' << buf << '\n';
    }
    for (std::size_t i = 0; i < result.single_maps.size(); ++i)
      std::printf("model %zu standalone map %.6f -> weight %.4f\n", i, result.single_maps[i],
                  result.weights[i]);
    std::printf("best local map %.6f over %zu evaluations\n", result.best_map,
                result.trajectory.size());
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const vsc::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
