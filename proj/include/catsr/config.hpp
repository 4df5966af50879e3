#ifndef CATSR_CONFIG_HPP_
#define CATSR_CONFIG_HPP_

#include <string>
#include <vector>

#include "catsr/data.hpp"
#include "catsr/model.hpp"
#include "catsr/train.hpp"

namespace catsr {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Merged run configuration. Defaults are the desk preset; configs/paper.cfg
// restores the 500x64 five-stage geometry and the 0.2 learning rate.
struct RunConfig {
  SynthCorpusConfig corpus;
  FbankConfig fbank;
  ModelConfig model;  // feat_dim and num_speakers are derived from the corpus
  TrainConfig train;
  std::vector<int> eval_topn = {1, 5, 10};
  int threads = 1;  // scoring / feature extraction only, never training
};

// Flat key=value text under [corpus] / [fbank] / [model] / [train] / [eval]
// sections; '#' starts a comment. Unknown keys are errors.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
void apply_config_file(RunConfig& config, const std::string& path);
// "section.key=value" from --set flags.
void apply_override(RunConfig& config, const std::string& assignment);
// Round-trips through parse_config_text.
std::string dump_config(const RunConfig& config);

}  // namespace catsr

#endif  // CATSR_CONFIG_HPP_
