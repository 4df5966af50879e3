#ifndef CATSR_TRAIN_HPP_
#define CATSR_TRAIN_HPP_

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "catsr/losses.hpp"
#include "catsr/model.hpp"

namespace catsr {

struct TrainDivergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string architecture = "cnn";  // cnn | cat | cat_no_d2
  // Desk preset, calibrated so the adversarial game converges within the
  // epoch budget; the recipe value for paper geometry is 0.2.
  double learning_rate = 0.15;
  double lr_decay = 0.5;
  // Dev EER at desk trial counts is quantized and noisy; five evaluations
  // without a strict improvement damp the late adversarial oscillation
  // without freezing the run early.
  int patience = 5;
  double lr_floor = 1e-4;
  int epochs = 100;
  int batch_speakers = 16;  // P
  int batch_utts = 4;       // K; batch size is P*K
  double alpha = 1.0;
  double beta = 1.0;
  double margin = 0.35;
  uint64_t seed = 1;
  int eval_interval = 2;  // epochs between dev evaluations
  Reduction reduction = Reduction::Mean;
  int eval_window = 50;  // frames per embedding segment
};

struct TrainLogEntry {
  int step = 0;
  double l_s = 0.0;
  double l_t = 0.0;
  double l_ch = 0.0;
  double total = 0.0;
  double lr = 0.0;
};

struct EvalEvent {
  int epoch = 0;
  double dev_eer = 0.0;
  double lr_after = 0.0;
  bool lr_decayed = false;
};

struct TrainLog {
  std::vector<TrainLogEntry> steps;
  std::vector<EvalEvent> evals;

  // step,L_s,L_T,L_ch,total,lr — byte-stable for a fixed seed.
  std::string to_csv() const;
};

struct TrainResult {
  SpeakerModel model;  // best-dev parameters (initial parameters when never evaluated)
  TrainLog log;
  double best_dev_eer = -1.0;  // -1 when no evaluation ran
  int best_epoch = 0;
  bool diverged = false;
  std::string divergence_message;
};

// theta <- theta - lr * grad for every bound parameter; a non-finite gradient
// aborts with a diagnostic naming the parameter.
void sgd_step(std::span<Param* const> params, Tape& tape, double lr);

// Dev-driven decay: after `patience` consecutive evaluations without a strict
// improvement over the best EER, the rate halves (clamped at the floor) and
// the counter restarts. Returns the rate after replaying the whole history.
double lr_schedule_update(std::span<const double> dev_eer_history, const TrainConfig& config);

using EpochHook = std::function<void(int epoch, SpeakerModel& model)>;

// Joint forward/backward per batch (the reversal layer carries the adversarial
// signal, so no alternating phases), SGD updates, per-epoch cross-channel dev
// EER driving the schedule, best-dev snapshot retained.
TrainResult train_loop(const TrainConfig& config, const ModelConfig& model_config,
                       const Corpus& corpus, const EpochHook& epoch_hook = {});

// Checkpoint: magic "CATC", u32 version, structured-text config block, then
// named tensors (u32 name length, name, u32 rank, u32 extents, doubles LE).
void save_checkpoint(const SpeakerModel& model, const TrainConfig& train_config,
                     const std::string& path);

struct LoadedCheckpoint {
  SpeakerModel model;
  TrainConfig train_config;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

std::string reduction_name(Reduction r);
Reduction reduction_from_name(const std::string& name);

// Shortest round-trip decimal formatting used by every emitted CSV.
std::string format_double(double v);

}  // namespace catsr

#endif  // CATSR_TRAIN_HPP_
