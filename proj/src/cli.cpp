#include "masr/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "masr/annotation.hpp"
#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/evaluator.hpp"
#include "masr/gradcheck.hpp"
#include "masr/synth.hpp"
#include "masr/trainer.hpp"

namespace fs = std::filesystem;

namespace masr {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

Protocol parse_protocol(const std::string& text) {
  if (text == "masr") return Protocol::Masr;
  if (text == "scene-only" || text == "scene_only") return Protocol::SceneOnly;
  throw Error(ErrorCategory::Config, "unknown protocol '" + text + "'");
}

TrainConfig apply_config_file(TrainConfig config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Parse, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCategory::Schema, path + ": config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs_phase1") config.epochs_phase1 = value.get<std::size_t>();
      else if (key == "epochs_total") config.epochs_total = value.get<std::size_t>();
      else if (key == "lr_classifier") config.lr_classifier = value.get<double>();
      else if (key == "lr_base") config.lr_base = value.get<double>();
      else if (key == "lr_decay") config.lr_decay = value.get<double>();
      else if (key == "lr_step") config.lr_step = value.get<std::size_t>();
      else if (key == "batch_size") config.batch_size = value.get<std::size_t>();
      else if (key == "seed") config.seed = value.get<std::uint64_t>();
      else if (key == "cascade_depth") config.cascade_depth = value.get<std::size_t>();
      else if (key == "protocol") config.protocol = parse_protocol(value.get<std::string>());
      else if (key == "beta_on_positive") config.loss_options.beta_on_positive = value.get<bool>();
      else if (key == "normalize_by_m") config.loss_options.normalize_by_m = value.get<bool>();
      else throw Error(ErrorCategory::Config, path + ": unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::Schema, path + ": " + e.what());
  }
  return config;
}

std::vector<std::string> vocabulary_labels(const AttributeVocabulary& vocabulary) {
  std::vector<std::string> labels;
  labels.reserve(vocabulary.size());
  for (const auto& attr : vocabulary.attributes) labels.push_back(attr.label);
  return labels;
}

void check_checkpoint_dims(const MasrParams& params, const DatasetBundle& bundle) {
  if (bundle.vocabulary.size() != params.n_attributes) {
    throw Error(ErrorCategory::Shape,
                "checkpoint expects " + std::to_string(params.n_attributes) +
                    " attributes, dataset has " + std::to_string(bundle.vocabulary.size()));
  }
  if (bundle.categories.size() != params.n_classes) {
    throw Error(ErrorCategory::Shape, "checkpoint expects " + std::to_string(params.n_classes) +
                                          " classes, dataset has " +
                                          std::to_string(bundle.categories.size()));
  }
  if (!bundle.samples.empty() && bundle.samples.front().feature.size() != params.feature_dim) {
    throw Error(ErrorCategory::Shape,
                "checkpoint expects feature dim " + std::to_string(params.feature_dim) +
                    ", dataset has " + std::to_string(bundle.samples.front().feature.size()));
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"scene-attribute mining and multi-task head training"};
  app.require_subcommand(1);

  // mine
  auto* mine = app.add_subcommand("mine", "merge detections and filter them into annotations");
  std::string mine_detections, mine_sources, mine_out;
  double mine_xi = 0.8;
  std::size_t mine_beta = 20;
  std::string mine_policy = "error";
  mine->add_option("--detections", mine_detections, "detections.jsonl path")->required();
  mine->add_option("--sources", mine_sources, "sources.json path")->required();
  mine->add_option("--out", mine_out, "output directory")->required();
  mine->add_option("--xi", mine_xi, "score threshold (strictly above keeps)");
  mine->add_option("--beta", mine_beta, "per-category frequency threshold");
  mine->add_option("--collision-policy", mine_policy, "cross-source duplicate labels: error|max")
      ->check(CLI::IsMember({"error", "max"}));

  // stats
  auto* stats = app.add_subcommand("stats", "report statistics of an annotation directory");
  std::string stats_dir;
  stats->add_option("--annotations", stats_dir, "directory with vocabulary.tsv + annotations.tsv")
      ->required();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic corpus");
  std::string synth_spec_path, synth_out;
  std::uint64_t synth_seed = 1;
  synth->add_option("--spec", synth_spec_path, "JSON spec (defaults used when omitted)");
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train heads on assembled samples");
  std::string train_ann, train_features, train_categories, train_out, train_config_path,
      train_protocol, train_resume;
  double train_xi = 0.8;
  std::uint64_t train_seed = 0;
  std::size_t train_epochs = 0, train_depth = 0, train_batch = 0;
  train->add_option("--annotations", train_ann, "annotation directory")->required();
  train->add_option("--features", train_features, "features.tsv path")->required();
  train->add_option("--categories", train_categories, "categories.tsv path")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--xi", train_xi, "binarization threshold for attribute targets");
  train->add_option("--config", train_config_path, "JSON training config");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "training seed");
  auto* train_epochs_opt = train->add_option("--epochs", train_epochs, "total epochs");
  auto* train_depth_opt = train->add_option("--cascade-depth", train_depth, "re-weighting depth");
  auto* train_batch_opt = train->add_option("--batch-size", train_batch, "SGD batch size");
  auto* train_protocol_opt =
      train->add_option("--protocol", train_protocol, "masr|scene-only")
          ->check(CLI::IsMember({"masr", "scene-only", "scene_only"}));
  train->add_option("--resume", train_resume, "checkpoint to continue from");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, eval_ann, eval_features, eval_categories, eval_out, eval_embeddings;
  double eval_xi = 0.8;
  eval->add_option("--checkpoint", eval_ckpt, "training checkpoint")->required();
  eval->add_option("--annotations", eval_ann, "annotation directory")->required();
  eval->add_option("--features", eval_features, "features.tsv path")->required();
  eval->add_option("--categories", eval_categories, "categories.tsv path")->required();
  eval->add_option("--xi", eval_xi, "binarization threshold for attribute ground truth");
  eval->add_option("--out", eval_out, "directory for report.txt + report.tsv");
  eval->add_option("--embeddings", eval_embeddings, "also export embeddings to this path");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  GradCheckOptions gc;
  gradcheck->add_option("--configs", gc.n_configs, "number of random configurations");
  gradcheck->add_option("--seed", gc.seed, "draw seed");
  gradcheck->add_option("--tolerance", gc.tolerance, "per-coordinate relative tolerance");
  gradcheck->add_option("--step", gc.step, "central-difference step");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (mine->parsed()) {
      MiningConfig config;
      config.xi = mine_xi;
      config.beta = mine_beta;
      config.collision_policy =
          mine_policy == "max" ? CollisionPolicy::Max : CollisionPolicy::Error;
      config.sources = load_sources(mine_sources);
      const std::vector<DetectionRecord> records = load_detections(mine_detections);
      const MiningResult result = mine_annotations(records, config);
      emit_annotations(result.annotations, result.vocabulary, mine_out);
      const std::string report = render_mining_report(result);
      write_text((fs::path(mine_out) / "report.txt").string(), report);
      out << report;
    } else if (stats->parsed()) {
      const AnnotationData data = load_annotations(stats_dir);
      const CorpusStatistics s = compute_statistics(data.annotations, data.vocabulary.size());
      out << render_statistics(s, data.vocabulary);
    } else if (synth->parsed()) {
      const SynthSpec spec =
          synth_spec_path.empty() ? SynthSpec{} : load_synth_spec(synth_spec_path);
      validate_spec(spec);
      const SynthCorpus corpus = generate_corpus(spec, synth_seed);
      write_corpus(corpus, spec, synth_out);
      out << "synthetic corpus: " << spec.n_classes << " classes, " << spec.n_attributes
          << " attributes, " << corpus.train_features.size() << " train / "
          << corpus.test_features.size() << " test images under " << synth_out << "\n";
    } else if (train->parsed()) {
      const DatasetBundle bundle =
          load_dataset(train_ann, train_features, train_categories, train_xi);
      fs::create_directories(train_out);
      TrainState state;
      if (!train_resume.empty()) {
        if (!train_config_path.empty() || train_seed_opt->count() || train_depth_opt->count() ||
            train_batch_opt->count() || train_protocol_opt->count()) {
          throw Error(ErrorCategory::Config,
                      "--resume takes its config from the checkpoint; only --epochs may change");
        }
        state = load_checkpoint(train_resume);
        check_checkpoint_dims(state.params, bundle);
        if (train_epochs_opt->count()) state.config.epochs_total = train_epochs;
        validate_config(state.config);
      } else {
        TrainConfig config;
        if (!train_config_path.empty()) config = apply_config_file(config, train_config_path);
        if (train_seed_opt->count()) config.seed = train_seed;
        if (train_epochs_opt->count()) config.epochs_total = train_epochs;
        if (train_depth_opt->count()) config.cascade_depth = train_depth;
        if (train_batch_opt->count()) config.batch_size = train_batch;
        if (train_protocol_opt->count()) config.protocol = parse_protocol(train_protocol);
        state = init_training(config, bundle.samples, bundle.categories.size());
      }
      train_to_completion(state, bundle.samples);
      const std::string ckpt_path = (fs::path(train_out) / "checkpoint.bin").string();
      save_checkpoint(ckpt_path, state);
      write_loss_history(state.loss_history, (fs::path(train_out) / "loss_history.tsv").string());
      const EpochLoss& last = state.loss_history.back();
      out << "trained " << state.epoch << " epochs; final cls=" << format_double(last.cls)
          << " att=" << format_double(last.att) << " total=" << format_double(last.total) << "\n";
      out << "checkpoint: " << ckpt_path << "\n";
    } else if (eval->parsed()) {
      const TrainState state = load_checkpoint(eval_ckpt);
      const DatasetBundle bundle =
          load_dataset(eval_ann, eval_features, eval_categories, eval_xi);
      check_checkpoint_dims(state.params, bundle);
      const ForwardMode mode = state.config.protocol == Protocol::SceneOnly
                                   ? ForwardMode::SceneOnly
                                   : ForwardMode::Joint;
      const EvalReport report =
          evaluate(bundle.samples, state.params, mode, vocabulary_labels(bundle.vocabulary));
      const std::string text = render_report(report);
      out << text;
      if (!eval_out.empty()) {
        fs::create_directories(eval_out);
        write_text((fs::path(eval_out) / "report.txt").string(), text);
        write_report_tsv(report, (fs::path(eval_out) / "report.tsv").string());
      }
      if (!eval_embeddings.empty()) {
        export_embeddings(bundle.samples, state.params, mode, eval_embeddings);
      }
    } else if (gradcheck->parsed()) {
      const GradCheckResult result = run_gradcheck(gc);
      out << render_gradcheck(result, gc);
      return result.pass ? 0 : 1;
    }
  } catch (const Error& e) {
    err << "error[" << to_string(e.category()) << "] " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error[internal] " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace masr
