#ifndef CATSR_EVAL_HPP_
#define CATSR_EVAL_HPP_

#include <span>
#include <string>
#include <vector>

#include "catsr/model.hpp"
#include "catsr/train.hpp"

namespace catsr {

struct TrialList {
  std::vector<int> speaker_ids;  // enrolled speakers, ordered
  Tensor enrolled;               // [S,d] unit rows (normalized mean of enrolment embeddings)
  std::vector<std::string> test_utterance_ids;
  Tensor tests;                  // [n,d] unit rows
  Tensor scores;                 // [n,S] cosine scores
  std::vector<int> true_index;   // per test row, index into speaker_ids
};

// score[i][j] = tests[i] . enrolled[j]; rows must be unit within 1e-3.
Tensor score_trials(const Tensor& enrolled, const Tensor& tests);

// Threshold sweep over the sorted union of scores: FRR counts targets below,
// FAR counts impostors at/above; returns (FAR+FRR)/2 at the threshold
// minimizing |FAR-FRR| (lowest threshold on ties).
double compute_eer(std::span<const double> target_scores, std::span<const double> impostor_scores);

// Fraction of test rows whose true speaker ranks in the top n (score ties
// resolved in favor of the lower speaker index).
double topn_recall(const Tensor& scores, std::span<const int> true_index, int n);

// Enrolment utterances are channel A, trial utterances channel B; enrolled
// speaker embeddings average that speaker's enrolment utterance embeddings.
// `threads` parallelizes embedding extraction only; output is order-stable.
TrialList build_trials(std::span<const UtteranceFeatures> eval_utts, SpeakerModel& model,
                       int window, int threads = 1);

std::vector<double> target_scores(const TrialList& trials);
std::vector<double> impostor_scores(const TrialList& trials);
double eer_from_trials(const TrialList& trials);

// test_utterance_id,speaker_id,score,is_target
std::string trials_to_csv(const TrialList& trials);

struct SweepCell {
  double beta = 0.0;
  uint64_t seed = 0;
  double dev_eer = 0.0;
  double test_top1 = 0.0;
  bool ok = false;
  std::string error;
};

struct SweepMedian {
  double beta = 0.0;
  double dev_eer = 0.0;
  double test_top1 = 0.0;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::vector<SweepMedian> medians;  // per beta, over the seeds that completed
};

// Trains one CAT model per (beta, seed); training failures are recorded per
// cell and the sweep continues.
SweepResult beta_sweep(const TrainConfig& base_config, const ModelConfig& model_config,
                       const Corpus& corpus, std::span<const double> betas,
                       std::span<const uint64_t> seeds);

std::string sweep_cells_to_csv(const SweepResult& sweep);
std::string sweep_medians_to_csv(const SweepResult& sweep);

// Accuracy of a small 2-layer classifier (dim -> 16 -> 2) trained to predict
// the channel from fixed input vectors; seeded 80/20 split.
double channel_probe_accuracy(const Tensor& inputs, std::span<const int> channel_labels,
                              uint64_t seed);

double median(std::vector<double> values);

}  // namespace catsr

#endif  // CATSR_EVAL_HPP_
