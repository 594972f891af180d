#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "masr/model.hpp"

namespace masr {

enum class Protocol {
  Masr,       // scene-only warm-up, then the joint loss
  SceneOnly,  // the classification-only baseline for the whole run
};

struct TrainConfig {
  std::size_t epochs_phase1 = 15;
  std::size_t epochs_total = 100;
  double lr_classifier = 0.01;
  double lr_base = 0.001;  // reserved for a trainable feature adapter; no such
                           // parameters exist in the head-only setup, so the
                           // classifier rate drives every update
  double lr_decay = 0.1;
  std::size_t lr_step = 20;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  std::size_t cascade_depth = 2;
  Protocol protocol = Protocol::Masr;
  AttributeLossOptions loss_options;

  bool operator==(const TrainConfig&) const = default;
};

// Throws a config error on any invariant violation, before training starts.
void validate_config(const TrainConfig& config);

struct LearningRates {
  double classifier = 0.0;
  double base = 0.0;
};

// Both rates decayed by lr_decay^floor(epoch / lr_step). Non-increasing in epoch.
LearningRates lr_at(std::size_t epoch, const TrainConfig& config);

// SceneOnly during warm-up epochs (or always, under the baseline protocol).
ForwardMode mode_at(std::size_t epoch, const TrainConfig& config);

struct EpochLoss {
  std::size_t epoch = 0;
  double cls = 0.0;
  double att = 0.0;
  double total = 0.0;

  bool operator==(const EpochLoss&) const = default;
};

struct TrainState {
  TrainConfig config;
  std::size_t epoch = 0;  // completed epochs
  MasrParams params;
  RegularizerTable reg;
  std::vector<EpochLoss> loss_history;
};

// Seeds parameters and computes the imbalance table from the training split.
TrainState init_training(const TrainConfig& config, const std::vector<Sample>& train_set,
                         std::size_t n_classes);

// One SGD pass over a seeded shuffle of the training set, batch-mean gradients,
// the last partial batch included. Appends the epoch's mean losses to the
// history and advances state.epoch. The shuffle is derived from (seed, epoch),
// so replay after restore is exact.
EpochLoss train_epoch(TrainState& state, const std::vector<Sample>& train_set);

// Runs remaining epochs up to config.epochs_total.
void train_to_completion(TrainState& state, const std::vector<Sample>& train_set);

TrainState run_training(const TrainConfig& config, const std::vector<Sample>& train_set,
                        std::size_t n_classes);

// Checkpoints embed config, protocol, epoch, loss history, the regularizer
// table and all parameters; restore + train reproduces an uninterrupted run
// bit-exactly.
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

// "epoch<TAB>cls<TAB>att<TAB>total" rows, shortest round-trip doubles.
void write_loss_history(const std::vector<EpochLoss>& history, const std::string& path);
std::vector<EpochLoss> load_loss_history(const std::string& path);

}  // namespace masr
