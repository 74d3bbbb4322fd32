#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fprl/config.hpp"
#include "fprl/model.hpp"
#include "fprl/synth.hpp"

namespace fprl {

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::optional<std::size_t> stop_after;  // stop once this step count is reached
  std::ostream* log = nullptr;            // progress lines, if set
};

struct TrainSummary {
  std::size_t first_step = 0;
  std::size_t final_step = 0;
  std::vector<objectives::LossReport> reports;
  double seconds = 0.0;
};

// All "*.fprlclip" files of a directory in name order.
std::vector<synth::VideoClip> load_dataset(const std::filesystem::path& dir);
void check_dataset(const std::vector<synth::VideoClip>& clips, const RunConfig& config);

// One JSON object: step, lr, every loss component, masked, batch and,
// optionally, a wall-clock timestamp.
std::string metrics_line(const objectives::LossReport& report, double lr, bool with_timestamp = true);

// Writes <out>/config.txt, appends <out>/metrics.jsonl, saves
// <out>/ckpt_<step>.bin every checkpoint_every steps and <out>/last.ckpt at
// the end. Resuming truncates metrics at the checkpoint's step.
TrainSummary train(const RunConfig& config, const TrainOptions& options);

}  // namespace fprl
