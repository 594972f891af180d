#include "masr/trainer.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "masr/annotation.hpp"
#include "masr/error.hpp"
#include "masr/rng.hpp"

namespace masr {

void validate_config(const TrainConfig& config) {
  if (config.epochs_total == 0 || config.epochs_phase1 >= config.epochs_total) {
    throw Error(ErrorCategory::Config,
                "epochs_phase1 (" + std::to_string(config.epochs_phase1) +
                    ") must be below epochs_total (" + std::to_string(config.epochs_total) + ")");
  }
  if (!(config.lr_decay > 0.0 && config.lr_decay <= 1.0)) {
    throw Error(ErrorCategory::Config, "lr_decay must be in (0, 1]");
  }
  if (config.lr_classifier < 0.0 || config.lr_base < 0.0) {
    throw Error(ErrorCategory::Config, "learning rates must be >= 0");
  }
  if (config.batch_size == 0) {
    throw Error(ErrorCategory::Config, "batch_size must be >= 1");
  }
  if (config.lr_step == 0) {
    throw Error(ErrorCategory::Config, "lr_step must be >= 1");
  }
  if (config.cascade_depth == 0) {
    throw Error(ErrorCategory::Config, "cascade_depth must be >= 1");
  }
}

LearningRates lr_at(std::size_t epoch, const TrainConfig& config) {
  const double factor = std::pow(config.lr_decay, static_cast<double>(epoch / config.lr_step));
  return {config.lr_classifier * factor, config.lr_base * factor};
}

ForwardMode mode_at(std::size_t epoch, const TrainConfig& config) {
  if (config.protocol == Protocol::SceneOnly) return ForwardMode::SceneOnly;
  return epoch < config.epochs_phase1 ? ForwardMode::SceneOnly : ForwardMode::Joint;
}

TrainState init_training(const TrainConfig& config, const std::vector<Sample>& train_set,
                         std::size_t n_classes) {
  validate_config(config);
  if (train_set.empty()) {
    throw Error(ErrorCategory::Contract, "training set is empty");
  }
  const std::size_t d = train_set.front().feature.size();
  const std::size_t m = train_set.front().attr_scores.size();
  TrainState state;
  state.config = config;
  state.params = init_params(d, m, n_classes, config.cascade_depth, config.seed);
  state.reg = compute_regularizer(train_set, n_classes);
  return state;
}

EpochLoss train_epoch(TrainState& state, const std::vector<Sample>& train_set) {
  if (train_set.empty()) {
    throw Error(ErrorCategory::Contract, "training set is empty");
  }
  const TrainConfig& config = state.config;
  const std::size_t epoch = state.epoch;
  const ForwardMode mode = mode_at(epoch, config);
  const LearningRates lr = lr_at(epoch, config);

  Rng shuffle_rng(Rng::mix(config.seed, epoch));
  const std::vector<std::size_t> order = shuffle_rng.permutation(train_set.size());

  double cls_sum = 0.0, att_sum = 0.0, total_sum = 0.0;
  const std::size_t n = train_set.size();
  std::size_t batch_index = 0;
  for (std::size_t start = 0; start < n; start += config.batch_size, ++batch_index) {
    const std::size_t end = std::min(start + config.batch_size, n);
    MasrGrads batch = zeros_like(state.params);
    for (std::size_t i = start; i < end; ++i) {
      const Sample& sample = train_set[order[i]];
      const LossBreakdown loss =
          masr_loss(sample, state.params, state.reg, mode, config.loss_options);
      if (!std::isfinite(loss.total)) {
        throw Error(ErrorCategory::Numeric,
                    "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batch_index) + ", image '" + sample.image_id +
                        "': cls=" + format_double(loss.cls) + " att=" + format_double(loss.att));
      }
      cls_sum += loss.cls;
      att_sum += loss.att;
      total_sum += loss.total;
      const MasrGrads grads =
          masr_backward(sample, state.params, state.reg, mode, config.loss_options);
      for_each_param(batch, grads, [](double& acc, double g) { acc += g; });
    }
    const double scale = lr.classifier / static_cast<double>(end - start);
    for_each_param(state.params, batch, [scale](double& w, double g) { w -= scale * g; });
  }

  EpochLoss row;
  row.epoch = epoch;
  row.cls = cls_sum / static_cast<double>(n);
  row.att = att_sum / static_cast<double>(n);
  row.total = total_sum / static_cast<double>(n);
  state.loss_history.push_back(row);
  state.epoch = epoch + 1;
  return row;
}

void train_to_completion(TrainState& state, const std::vector<Sample>& train_set) {
  while (state.epoch < state.config.epochs_total) {
    train_epoch(state, train_set);
  }
}

TrainState run_training(const TrainConfig& config, const std::vector<Sample>& train_set,
                        std::size_t n_classes) {
  TrainState state = init_training(config, train_set, n_classes);
  train_to_completion(state, train_set);
  return state;
}

// ---- persistence -----------------------------------------------------------

namespace {

constexpr std::uint32_t kCheckpointMagic = 0x4D535243;  // "MSRC"
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void put_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t get_u32(std::istream& in, const std::string& context) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error(ErrorCategory::Parse, context + ": truncated checkpoint");
  return v;
}
std::uint64_t get_u64(std::istream& in, const std::string& context) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error(ErrorCategory::Parse, context + ": truncated checkpoint");
  return v;
}
double get_f64(std::istream& in, const std::string& context) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw Error(ErrorCategory::Parse, context + ": truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  put_u32(out, kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  const TrainConfig& c = state.config;
  put_u32(out, static_cast<std::uint32_t>(c.epochs_phase1));
  put_u32(out, static_cast<std::uint32_t>(c.epochs_total));
  put_f64(out, c.lr_classifier);
  put_f64(out, c.lr_base);
  put_f64(out, c.lr_decay);
  put_u32(out, static_cast<std::uint32_t>(c.lr_step));
  put_u32(out, static_cast<std::uint32_t>(c.batch_size));
  put_u64(out, c.seed);
  put_u32(out, static_cast<std::uint32_t>(c.cascade_depth));
  put_u32(out, c.protocol == Protocol::SceneOnly ? 1 : 0);
  put_u32(out, c.loss_options.beta_on_positive ? 1 : 0);
  put_u32(out, c.loss_options.normalize_by_m ? 1 : 0);
  put_u32(out, static_cast<std::uint32_t>(state.epoch));
  put_u32(out, static_cast<std::uint32_t>(state.loss_history.size()));
  for (const auto& row : state.loss_history) {
    put_u32(out, static_cast<std::uint32_t>(row.epoch));
    put_f64(out, row.cls);
    put_f64(out, row.att);
    put_f64(out, row.total);
  }
  put_u32(out, static_cast<std::uint32_t>(state.reg.beta.rows));
  put_u32(out, static_cast<std::uint32_t>(state.reg.beta.cols));
  out.write(reinterpret_cast<const char*>(state.reg.beta.data.data()),
            static_cast<std::streamsize>(state.reg.beta.data.size() * sizeof(double)));
  save_params(out, state.params);
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  if (get_u32(in, path) != kCheckpointMagic) {
    throw Error(ErrorCategory::Parse, path + ": not a training checkpoint");
  }
  const std::uint32_t version = get_u32(in, path);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCategory::Parse,
                path + ": unsupported checkpoint version " + std::to_string(version));
  }
  TrainState state;
  TrainConfig& c = state.config;
  c.epochs_phase1 = get_u32(in, path);
  c.epochs_total = get_u32(in, path);
  c.lr_classifier = get_f64(in, path);
  c.lr_base = get_f64(in, path);
  c.lr_decay = get_f64(in, path);
  c.lr_step = get_u32(in, path);
  c.batch_size = get_u32(in, path);
  c.seed = get_u64(in, path);
  c.cascade_depth = get_u32(in, path);
  c.protocol = get_u32(in, path) == 1 ? Protocol::SceneOnly : Protocol::Masr;
  c.loss_options.beta_on_positive = get_u32(in, path) == 1;
  c.loss_options.normalize_by_m = get_u32(in, path) == 1;
  state.epoch = get_u32(in, path);
  const std::uint32_t rows = get_u32(in, path);
  state.loss_history.reserve(rows);
  for (std::uint32_t i = 0; i < rows; ++i) {
    EpochLoss row;
    row.epoch = get_u32(in, path);
    row.cls = get_f64(in, path);
    row.att = get_f64(in, path);
    row.total = get_f64(in, path);
    state.loss_history.push_back(row);
  }
  const std::uint32_t reg_rows = get_u32(in, path);
  const std::uint32_t reg_cols = get_u32(in, path);
  state.reg.beta = DenseMatrix(reg_rows, reg_cols);
  in.read(reinterpret_cast<char*>(state.reg.beta.data.data()),
          static_cast<std::streamsize>(state.reg.beta.data.size() * sizeof(double)));
  if (!in) throw Error(ErrorCategory::Parse, path + ": truncated checkpoint");
  state.params = load_params(in, path);
  validate_config(state.config);
  return state;
}

void write_loss_history(const std::vector<EpochLoss>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for writing");
  for (const auto& row : history) {
    out << row.epoch << '\t' << format_double(row.cls) << '\t' << format_double(row.att) << '\t'
        << format_double(row.total) << '\n';
  }
  if (!out) throw Error(ErrorCategory::Io, "failed writing '" + path + "'");
}

std::vector<EpochLoss> load_loss_history(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCategory::Io, "cannot open '" + path + "' for reading");
  std::vector<EpochLoss> history;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    EpochLoss row;
    std::size_t field = 0;
    std::size_t start = 0;
    std::string parts[4];
    for (std::size_t pos = 0; pos <= line.size(); ++pos) {
      if (pos == line.size() || line[pos] == '\t') {
        if (field < 4) parts[field] = line.substr(start, pos - start);
        ++field;
        start = pos + 1;
      }
    }
    if (field != 4) {
      throw Error(ErrorCategory::Parse, where + ": expected 4 tab-separated fields");
    }
    try {
      row.epoch = std::stoul(parts[0]);
    } catch (const std::exception&) {
      throw Error(ErrorCategory::Parse, where + ": bad epoch '" + parts[0] + "'");
    }
    row.cls = parse_double(parts[1], where);
    row.att = parse_double(parts[2], where);
    row.total = parse_double(parts[3], where);
    history.push_back(row);
  }
  return history;
}

}  // namespace masr
