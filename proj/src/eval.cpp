#include "catsr/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>

namespace catsr {

Tensor score_trials(const Tensor& enrolled, const Tensor& tests) {
  if (enrolled.rank() != 2 || tests.rank() != 2 || enrolled.dim(1) != tests.dim(1)) {
    throw ShapeError("score_trials: incompatible shapes " + shape_str(tests.shape()) + " vs " +
                     shape_str(enrolled.shape()));
  }
  const int s = enrolled.dim(0), n = tests.dim(0), d = enrolled.dim(1);
  auto check_unit = [&](const Tensor& t, const char* what) {
    for (int r = 0; r < t.dim(0); ++r) {
      const double norm =
          std::sqrt(t.values().segment(static_cast<int64_t>(r) * d, d).square().sum());
      if (std::abs(norm - 1.0) > 1e-3) {
        throw std::invalid_argument(std::string("score_trials: ") + what + " row " +
                                    std::to_string(r) + " has norm " + std::to_string(norm));
      }
    }
  };
  check_unit(enrolled, "enrolled");
  check_unit(tests, "test");
  RowMat scores = tests.as_matrix(n, d) * enrolled.as_matrix(s, d).transpose();
  return Tensor({n, s}, Eigen::Map<Eigen::ArrayXd>(scores.data(), scores.size()));
}

double compute_eer(std::span<const double> target_scores, std::span<const double> impostor_scores) {
  if (target_scores.empty() || impostor_scores.empty()) {
    throw std::invalid_argument("compute_eer: empty score list");
  }
  std::vector<double> targets(target_scores.begin(), target_scores.end());
  std::vector<double> impostors(impostor_scores.begin(), impostor_scores.end());
  std::sort(targets.begin(), targets.end());
  std::sort(impostors.begin(), impostors.end());
  std::vector<double> thresholds = targets;
  thresholds.insert(thresholds.end(), impostors.begin(), impostors.end());
  std::sort(thresholds.begin(), thresholds.end());

  const double nt = static_cast<double>(targets.size());
  const double ni = static_cast<double>(impostors.size());
  double best_gap = std::numeric_limits<double>::infinity();
  double best_eer = 0.0;
  for (double th : thresholds) {
    const auto below_t = std::lower_bound(targets.begin(), targets.end(), th) - targets.begin();
    const auto below_i = std::lower_bound(impostors.begin(), impostors.end(), th) - impostors.begin();
    const double frr = static_cast<double>(below_t) / nt;
    const double far = static_cast<double>(impostors.size() - below_i) / ni;
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best_eer = 0.5 * (far + frr);
    }
  }
  return best_eer;
}

double topn_recall(const Tensor& scores, std::span<const int> true_index, int n) {
  if (scores.rank() != 2) {
    throw ShapeError("topn_recall: scores must be [tests,speakers], got " +
                     shape_str(scores.shape()));
  }
  const int tests = scores.dim(0), speakers = scores.dim(1);
  if (n < 1 || n > speakers) {
    throw std::out_of_range("topn_recall: N=" + std::to_string(n) + " outside [1," +
                            std::to_string(speakers) + "]");
  }
  if (static_cast<int>(true_index.size()) != tests) {
    throw ShapeError("topn_recall: " + std::to_string(true_index.size()) + " labels for " +
                     std::to_string(tests) + " tests");
  }
  int hits = 0;
  for (int t = 0; t < tests; ++t) {
    const int truth = true_index[static_cast<size_t>(t)];
    if (truth < 0 || truth >= speakers) {
      throw std::out_of_range("topn_recall: true index " + std::to_string(truth) +
                              " outside enrolled set");
    }
    const double s_true = scores.at(t, truth);
    int rank = 1;
    for (int j = 0; j < speakers; ++j) {
      if (j == truth) continue;
      const double s = scores.at(t, j);
      if (s > s_true || (s == s_true && j < truth)) ++rank;
    }
    if (rank <= n) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(tests);
}

TrialList build_trials(std::span<const UtteranceFeatures> eval_utts, SpeakerModel& model,
                       int window, int threads) {
  std::vector<const UtteranceFeatures*> enrol, tests;
  for (const UtteranceFeatures& u : eval_utts) {
    (u.channel_id == 0 ? enrol : tests).push_back(&u);
  }
  if (enrol.empty()) throw std::invalid_argument("build_trials: no enrolment utterances");
  if (tests.empty()) throw std::invalid_argument("build_trials: no test utterances");

  // Embeddings for everything, order-stable regardless of thread count.
  std::vector<const UtteranceFeatures*> all = enrol;
  all.insert(all.end(), tests.begin(), tests.end());
  std::vector<Tensor> embeddings(all.size());
  const int workers = std::max(1, threads);
  if (workers == 1) {
    for (size_t i = 0; i < all.size(); ++i) {
      embeddings[i] = utterance_embedding(model, all[i]->features, window);
    }
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < all.size(); i = next.fetch_add(1)) {
          embeddings[i] = utterance_embedding(model, all[i]->features, window);
        }
      });
    }
    for (std::thread& t : pool) t.join();
  }

  const int d = model.config.embed_dim;
  std::map<int, std::vector<const Tensor*>> by_speaker;
  for (size_t i = 0; i < enrol.size(); ++i) by_speaker[enrol[i]->speaker_id].push_back(&embeddings[i]);

  TrialList out;
  Eigen::ArrayXd enrolled(static_cast<int64_t>(by_speaker.size()) * d);
  int row = 0;
  std::map<int, int> speaker_row;
  for (const auto& [spk, vecs] : by_speaker) {
    Eigen::ArrayXd mean = Eigen::ArrayXd::Zero(d);
    for (const Tensor* v : vecs) mean += v->values();
    mean /= static_cast<double>(vecs.size());
    const double norm = std::sqrt(mean.square().sum());
    if (norm == 0.0) {
      throw std::invalid_argument("build_trials: zero enrolled embedding for speaker " +
                                  std::to_string(spk));
    }
    enrolled.segment(static_cast<int64_t>(row) * d, d) = mean / norm;
    out.speaker_ids.push_back(spk);
    speaker_row[spk] = row;
    ++row;
  }
  out.enrolled = Tensor({row, d}, std::move(enrolled));

  Eigen::ArrayXd test_mat(static_cast<int64_t>(tests.size()) * d);
  for (size_t i = 0; i < tests.size(); ++i) {
    test_mat.segment(static_cast<int64_t>(i) * d, d) = embeddings[enrol.size() + i].values();
    out.test_utterance_ids.push_back(tests[i]->utterance_id);
    auto it = speaker_row.find(tests[i]->speaker_id);
    if (it == speaker_row.end()) {
      throw std::invalid_argument("build_trials: test speaker " +
                                  std::to_string(tests[i]->speaker_id) +
                                  " has zero enrolment utterances");
    }
    out.true_index.push_back(it->second);
  }
  out.tests = Tensor({static_cast<int>(tests.size()), d}, std::move(test_mat));
  out.scores = score_trials(out.enrolled, out.tests);
  return out;
}

std::vector<double> target_scores(const TrialList& trials) {
  std::vector<double> out;
  for (int t = 0; t < trials.scores.dim(0); ++t) {
    out.push_back(trials.scores.at(t, trials.true_index[static_cast<size_t>(t)]));
  }
  return out;
}

std::vector<double> impostor_scores(const TrialList& trials) {
  std::vector<double> out;
  for (int t = 0; t < trials.scores.dim(0); ++t) {
    for (int s = 0; s < trials.scores.dim(1); ++s) {
      if (s != trials.true_index[static_cast<size_t>(t)]) out.push_back(trials.scores.at(t, s));
    }
  }
  return out;
}

double eer_from_trials(const TrialList& trials) {
  return compute_eer(target_scores(trials), impostor_scores(trials));
}

std::string trials_to_csv(const TrialList& trials) {
  std::ostringstream os;
  os << "test_utterance_id,speaker_id,score,is_target\n";
  for (int t = 0; t < trials.scores.dim(0); ++t) {
    for (int s = 0; s < trials.scores.dim(1); ++s) {
      os << trials.test_utterance_ids[static_cast<size_t>(t)] << ','
         << trials.speaker_ids[static_cast<size_t>(s)] << ','
         << format_double(trials.scores.at(t, s)) << ','
         << (trials.true_index[static_cast<size_t>(t)] == s ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

SweepResult beta_sweep(const TrainConfig& base_config, const ModelConfig& model_config,
                       const Corpus& corpus, std::span<const double> betas,
                       std::span<const uint64_t> seeds) {
  if (betas.empty() || seeds.empty()) {
    throw std::invalid_argument("beta_sweep: need at least one beta and one seed");
  }
  SweepResult out;
  for (double beta : betas) {
    std::vector<double> eers, top1s;
    for (uint64_t seed : seeds) {
      SweepCell cell;
      cell.beta = beta;
      cell.seed = seed;
      try {
        TrainConfig cfg = base_config;
        cfg.architecture = "cat";
        cfg.beta = beta;
        cfg.seed = seed;
        TrainResult r = train_loop(cfg, model_config, corpus);
        if (r.diverged) throw TrainDivergence(r.divergence_message);
        TrialList dev = build_trials(corpus.dev, r.model, cfg.eval_window);
        TrialList test = build_trials(corpus.test, r.model, cfg.eval_window);
        cell.dev_eer = eer_from_trials(dev);
        cell.test_top1 = topn_recall(test.scores, test.true_index, 1);
        cell.ok = true;
        eers.push_back(cell.dev_eer);
        top1s.push_back(cell.test_top1);
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
        cell.dev_eer = std::numeric_limits<double>::quiet_NaN();
        cell.test_top1 = std::numeric_limits<double>::quiet_NaN();
      }
      out.cells.push_back(std::move(cell));
    }
    out.medians.push_back(SweepMedian{beta, median(eers), median(top1s)});
  }
  return out;
}

std::string sweep_cells_to_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "beta,seed,dev_eer,test_top1\n";
  for (const SweepCell& c : sweep.cells) {
    os << format_double(c.beta) << ',' << c.seed << ',' << format_double(c.dev_eer) << ','
       << format_double(c.test_top1) << '\n';
  }
  return os.str();
}

std::string sweep_medians_to_csv(const SweepResult& sweep) {
  std::ostringstream os;
  os << "beta,dev_eer,test_top1\n";
  for (const SweepMedian& m : sweep.medians) {
    os << format_double(m.beta) << ',' << format_double(m.dev_eer) << ','
       << format_double(m.test_top1) << '\n';
  }
  return os.str();
}

double channel_probe_accuracy(const Tensor& inputs, std::span<const int> channel_labels,
                              uint64_t seed) {
  if (inputs.rank() != 2 || inputs.dim(0) != static_cast<int>(channel_labels.size())) {
    throw ShapeError("channel_probe: inputs must be [n,dim] matching the label count");
  }
  const int n = inputs.dim(0), dim = inputs.dim(1);
  if (n < 10) throw std::invalid_argument("channel_probe: need at least 10 samples");

  Rng rng(derive_seed(seed, "probe"));
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  rng.shuffle(order);
  const int n_train = (n * 4) / 5;

  auto subset = [&](int from, int to, std::vector<int>& labels) {
    Eigen::ArrayXd data(static_cast<int64_t>(to - from) * dim);
    for (int i = from; i < to; ++i) {
      const int src = order[static_cast<size_t>(i)];
      data.segment(static_cast<int64_t>(i - from) * dim, dim) =
          inputs.values().segment(static_cast<int64_t>(src) * dim, dim);
      labels.push_back(channel_labels[static_cast<size_t>(src)]);
    }
    return Tensor({to - from, dim}, std::move(data));
  };
  std::vector<int> train_labels, test_labels;
  Tensor train_x = subset(0, n_train, train_labels);
  Tensor test_x = subset(n_train, n, test_labels);

  const int hidden = 16;
  Rng init(derive_seed(seed, "probe.init"));
  LinearLayer fc1 = LinearLayer::init("probe.fc0", dim, hidden, init);
  LinearLayer fc2 = LinearLayer::init("probe.fc1", hidden, 2, init);
  std::vector<Param*> params;
  for (Param* p : fc1.params()) params.push_back(p);
  for (Param* p : fc2.params()) params.push_back(p);

  Tape tape;
  const double lr = 0.5;
  for (int step = 0; step < 300; ++step) {
    tape.reset();
    for (Param* p : params) p->bind(tape);
    Tensor h = relu(linear(train_x, fc1.weight.tensor(), fc1.bias.tensor()));
    Tensor logits = linear(h, fc2.weight.tensor(), fc2.bias.tensor());
    Tensor loss = softmax_loss(logits, train_labels, Reduction::Mean);
    tape.backward(loss);
    sgd_step(params, tape, lr);
    for (Param* p : params) p->unbind();
  }

  Tensor h = relu(linear(test_x, fc1.weight.tensor(), fc1.bias.tensor()));
  Tensor logits = linear(h, fc2.weight.tensor(), fc2.bias.tensor());
  int correct = 0;
  for (int i = 0; i < logits.dim(0); ++i) {
    const int pred = logits.at(i, 1) > logits.at(i, 0) ? 1 : 0;
    correct += pred == test_labels[static_cast<size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(logits.dim(0));
}

}  // namespace catsr
