#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "masr/error.hpp"
#include "masr/rng.hpp"
#include "masr/trainer.hpp"

using namespace masr;
namespace fs = std::filesystem;

namespace {

// Separable toy set: class prototypes on scaled axes plus mild noise, one
// informative attribute per class.
std::vector<Sample> toy_samples(std::size_t per_class, std::size_t k, std::size_t d,
                                std::size_t m, double separation, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> samples;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Sample s;
      s.image_id = "c" + std::to_string(c) + "_" + std::to_string(i);
      s.category = c;
      s.feature.assign(d, 0.0);
      for (std::size_t x = 0; x < d; ++x) {
        s.feature[x] = (x % k == c ? separation : 0.0) + 0.3 * rng.normal();
      }
      s.attr_scores.assign(m, 0.0);
      s.attr_binary.assign(m, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const bool on = (j % k == c) ? rng.uniform() < 0.9 : rng.uniform() < 0.05;
        if (on) {
          s.attr_scores[j] = rng.uniform(0.85, 1.0);
          s.attr_binary[j] = 1.0;
        }
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

TrainConfig small_config() {
  TrainConfig config;
  config.epochs_phase1 = 2;
  config.epochs_total = 6;
  config.batch_size = 8;
  config.cascade_depth = 1;
  config.seed = 12;
  return config;
}

fs::path temp_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove(p);
  return p;
}

}  // namespace

TEST_CASE("config validation catches each bad field") {
  TrainConfig config;
  CHECK_NOTHROW(validate_config(config));

  config.epochs_phase1 = config.epochs_total;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrainConfig{};
  config.lr_decay = 0.0;
  CHECK_THROWS_AS(validate_config(config), Error);
  config.lr_decay = 1.5;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrainConfig{};
  config.batch_size = 0;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrainConfig{};
  config.lr_classifier = -0.1;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrainConfig{};
  config.lr_step = 0;
  CHECK_THROWS_AS(validate_config(config), Error);
  config = TrainConfig{};
  config.cascade_depth = 0;
  CHECK_THROWS_AS(validate_config(config), Error);
}

TEST_CASE("learning rate schedule decays in steps") {
  const TrainConfig config;  // 0.01 / 0.001, decay 0.1 every 20
  CHECK(lr_at(0, config).classifier == doctest::Approx(0.01));
  CHECK(lr_at(0, config).base == doctest::Approx(0.001));
  CHECK(lr_at(19, config).classifier == doctest::Approx(0.01));
  CHECK(lr_at(20, config).classifier == doctest::Approx(0.001));
  CHECK(lr_at(20, config).base == doctest::Approx(0.0001));
  CHECK(lr_at(40, config).classifier == doctest::Approx(0.0001));

  for (std::size_t epoch = 1; epoch < 100; ++epoch) {
    CHECK(lr_at(epoch, config).classifier <= lr_at(epoch - 1, config).classifier);
  }
}

TEST_CASE("warm-up schedule switches modes at the phase boundary") {
  TrainConfig config;
  CHECK(mode_at(0, config) == ForwardMode::SceneOnly);
  CHECK(mode_at(14, config) == ForwardMode::SceneOnly);
  CHECK(mode_at(15, config) == ForwardMode::Joint);
  CHECK(mode_at(99, config) == ForwardMode::Joint);

  config.protocol = Protocol::SceneOnly;
  CHECK(mode_at(15, config) == ForwardMode::SceneOnly);
  CHECK(mode_at(99, config) == ForwardMode::SceneOnly);
}

TEST_CASE("init_training seeds parameters and the imbalance table") {
  const auto samples = toy_samples(4, 3, 6, 4, 2.0, 1);
  const auto config = small_config();
  const TrainState state = init_training(config, samples, 3);
  CHECK(state.params == init_params(6, 4, 3, config.cascade_depth, config.seed));
  CHECK(state.reg.beta.rows == 4);
  CHECK(state.reg.beta.cols == 3);
  CHECK(state.epoch == 0);

  CHECK_THROWS_AS((void)init_training(config, {}, 3), Error);
}

TEST_CASE("zero learning rate freezes the parameters") {
  const auto samples = toy_samples(4, 2, 4, 3, 1.0, 2);
  auto config = small_config();
  config.lr_classifier = 0.0;
  config.lr_base = 0.0;
  TrainState state = init_training(config, samples, 2);
  const MasrParams before = state.params;
  train_epoch(state, samples);
  train_epoch(state, samples);
  CHECK(state.params == before);
  CHECK(state.loss_history.size() == 2);
  // identical parameters mean identical epoch losses, up to the summation
  // order of the per-epoch shuffle
  CHECK(state.loss_history[0].cls ==
        doctest::Approx(state.loss_history[1].cls).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto samples = toy_samples(5, 3, 6, 4, 1.5, 3);
  const auto config = small_config();
  const TrainState a = run_training(config, samples, 3);
  const TrainState b = run_training(config, samples, 3);
  CHECK(a.params == b.params);
  CHECK(a.loss_history == b.loss_history);

  auto reseeded = config;
  reseeded.seed = config.seed + 1;
  const TrainState c = run_training(reseeded, samples, 3);
  CHECK(a.params != c.params);
}

TEST_CASE("one epoch replays an explicit SGD loop bit for bit") {
  const auto samples = toy_samples(3, 2, 4, 3, 1.0, 4);  // n = 6
  auto config = small_config();
  config.batch_size = 4;  // batches of 4 and 2: the tail batch must train too
  config.protocol = Protocol::SceneOnly;
  TrainState state = init_training(config, samples, 2);

  MasrParams expected = state.params;
  Rng shuffle_rng(Rng::mix(config.seed, 0));
  const auto order = shuffle_rng.permutation(samples.size());
  const double lr = lr_at(0, config).classifier;
  for (std::size_t start = 0; start < samples.size(); start += config.batch_size) {
    const std::size_t end = std::min(start + config.batch_size, samples.size());
    MasrGrads batch = zeros_like(expected);
    for (std::size_t i = start; i < end; ++i) {
      const MasrGrads g = masr_backward(samples[order[i]], expected, state.reg,
                                        ForwardMode::SceneOnly, config.loss_options);
      for_each_param(batch, g, [](double& acc, double gi) { acc += gi; });
    }
    const double scale = lr / static_cast<double>(end - start);
    for_each_param(expected, batch, [scale](double& w, double g) { w -= scale * g; });
  }

  train_epoch(state, samples);
  CHECK(state.params == expected);
}

TEST_CASE("attribute pipeline stays untouched during warm-up") {
  const auto samples = toy_samples(4, 3, 6, 4, 1.5, 5);
  TrainConfig config;
  config.epochs_phase1 = 3;
  config.epochs_total = 5;
  config.batch_size = 8;
  config.cascade_depth = 2;
  config.seed = 9;
  TrainState state = init_training(config, samples, 3);
  const MasrParams initial = state.params;

  for (std::size_t e = 0; e < config.epochs_phase1; ++e) train_epoch(state, samples);
  CHECK(state.params.attr_weight == initial.attr_weight);
  CHECK(state.params.attr_bias == initial.attr_bias);
  CHECK(state.params.arl == initial.arl);
  CHECK(state.params.scene_weight != initial.scene_weight);  // the scene head did move

  // warm-up epochs report a pure classification loss
  for (std::size_t e = 0; e < config.epochs_phase1; ++e) {
    CHECK(state.loss_history[e].att == 0.0);
    CHECK(state.loss_history[e].total == state.loss_history[e].cls);
  }

  train_epoch(state, samples);  // first joint epoch
  CHECK(state.params.attr_weight != initial.attr_weight);
  CHECK(state.loss_history.back().att > 0.0);
}

TEST_CASE("the scene loss collapses on a separable corpus") {
  const auto samples = toy_samples(12, 3, 9, 3, 2.5, 6);
  TrainConfig config;
  config.epochs_phase1 = 1;
  config.epochs_total = 30;
  config.lr_classifier = 0.5;
  config.lr_step = 30;
  config.batch_size = 9;
  config.cascade_depth = 1;
  config.protocol = Protocol::SceneOnly;
  config.seed = 4;
  const TrainState state = run_training(config, samples, 3);
  const double initial = state.loss_history.front().cls;
  const double final = state.loss_history.back().cls;
  CHECK(final < 0.1 * initial);
}

TEST_CASE("restoring a checkpoint replays the uninterrupted run exactly") {
  const auto samples = toy_samples(5, 3, 6, 4, 1.5, 7);
  TrainConfig config;
  config.epochs_phase1 = 4;
  config.epochs_total = 12;
  config.batch_size = 8;
  config.cascade_depth = 2;
  config.seed = 21;

  TrainState straight = init_training(config, samples, 3);
  train_to_completion(straight, samples);

  TrainState first = init_training(config, samples, 3);
  for (int e = 0; e < 5; ++e) train_epoch(first, samples);
  const fs::path path = temp_file("masr_test_ckpt.bin");
  save_checkpoint(path.string(), first);

  TrainState resumed = load_checkpoint(path.string());
  CHECK(resumed.config == config);
  CHECK(resumed.epoch == 5);
  CHECK(resumed.params == first.params);
  CHECK(resumed.reg.beta == first.reg.beta);
  CHECK(resumed.loss_history == first.loss_history);

  train_to_completion(resumed, samples);
  CHECK(resumed.params == straight.params);
  CHECK(resumed.loss_history == straight.loss_history);
  fs::remove(path);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto samples = toy_samples(3, 2, 4, 3, 1.0, 8);
  TrainState state = init_training(small_config(), samples, 2);
  train_epoch(state, samples);
  const fs::path path = temp_file("masr_test_ckpt_bad.bin");
  save_checkpoint(path.string(), state);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
  }
  try {
    (void)load_checkpoint(path.string());
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Parse);
  }
  {
    std::string garbled = bytes;
    garbled[0] = 'Z';
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(garbled.data(), static_cast<std::streamsize>(garbled.size()));
  }
  CHECK_THROWS_AS((void)load_checkpoint(path.string()), Error);
  fs::remove(path);
}

TEST_CASE("loss history round-trips through its TSV form") {
  std::vector<EpochLoss> history = {
      {0, 1.5, 0.0, 1.5},
      {1, 1.2345678901234567, 0.25, 1.4845678901234567},
  };
  const fs::path path = temp_file("masr_test_history.tsv");
  write_loss_history(history, path.string());
  CHECK(load_loss_history(path.string()) == history);

  {
    std::ofstream out(path, std::ios::trunc);
    out << "0\t1.0\t0.5\n";  // missing the total column
  }
  CHECK_THROWS_AS((void)load_loss_history(path.string()), Error);
  fs::remove(path);
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  auto samples = toy_samples(3, 2, 4, 3, 1.0, 9);
  samples[1].feature[0] = std::numeric_limits<double>::infinity();
  auto config = small_config();
  config.protocol = Protocol::SceneOnly;
  TrainState state = init_training(config, samples, 2);
  try {
    train_epoch(state, samples);
    FAIL("expected numeric error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::Numeric);
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find(samples[1].image_id) != std::string::npos);
  }
}
