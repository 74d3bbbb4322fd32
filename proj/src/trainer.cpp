#include "fprl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>

#include "json.hpp"

#include "fprl/checkpoint.hpp"
#include "fprl/error.hpp"
#include "fprl/optim.hpp"

namespace fprl {

namespace fs = std::filesystem;

std::vector<synth::VideoClip> load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".fprlclip") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .fprlclip files in " + dir.string());
  std::vector<synth::VideoClip> clips;
  for (const auto& f : files) clips.push_back(synth::read_clip(f));
  return clips;
}

void check_dataset(const std::vector<synth::VideoClip>& clips, const RunConfig& config) {
  if (clips.empty()) throw DataError("dataset is empty");
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    if (c.side != config.frame_side || c.patch != config.patch_size || c.channels != 3)
      throw DataError("clip " + std::to_string(i) + " has geometry side " + std::to_string(c.side) + ", patch " +
                      std::to_string(c.patch) + ", channels " + std::to_string(c.channels) +
                      "; the configuration expects side " + std::to_string(config.frame_side) + ", patch " +
                      std::to_string(config.patch_size) + ", 3 channels");
    if (c.frames < config.window_len)
      throw DataError("clip " + std::to_string(i) + " has " + std::to_string(c.frames) + " frames, fewer than window_len " +
                      std::to_string(config.window_len));
  }
}

std::string metrics_line(const objectives::LossReport& r, double lr, bool with_timestamp) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["lr"] = lr;
  j["total"] = r.total;
  j["rec"] = r.rec;
  j["align"] = r.align;
  j["pt"] = r.pt;
  j["ft"] = r.ft;
  j["pf"] = r.pf;
  j["cl"] = r.cl;
  j["aux_mask"] = r.aux_mask;
  j["masked"] = r.masked;
  j["batch"] = r.batch;
  if (with_timestamp) {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    j["timestamp"] = buf;
  }
  return j.dump();
}

namespace {

// Keeps the metric lines of steps before `step`.
void truncate_metrics(const fs::path& path, std::size_t step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("step")) throw DataError("corrupt metrics line in " + path.string());
    if (j["step"].get<std::size_t>() < step) kept.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

}  // namespace

TrainSummary train(const RunConfig& config, const TrainOptions& options) {
  config.validate();
  const auto clips = load_dataset(options.data_dir);
  check_dataset(clips, config);
  fs::create_directories(options.out_dir);

  Model model = Model::initialize(config);
  TrainState state;
  if (options.resume) {
    checkpoint::load(*options.resume, config, model, state);
  } else if (!config.teacher_ckpt.empty()) {
    checkpoint::load_teacher(config.teacher_ckpt, model.params);
  }

  {
    std::ofstream cfg(options.out_dir / "config.txt", std::ios::trunc);
    cfg << to_text(config);
  }
  const fs::path metrics_path = options.out_dir / "metrics.jsonl";
  if (options.resume)
    truncate_metrics(metrics_path, state.step);
  else
    std::ofstream(metrics_path, std::ios::trunc);
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw DataError("cannot write " + metrics_path.string());

  TrainSummary summary;
  summary.first_step = state.step;
  const std::size_t end = std::min(config.total_steps, options.stop_after.value_or(config.total_steps));
  const auto start = std::chrono::steady_clock::now();
  while (state.step < end) {
    const double lr = optim::lr_at(state.step, config.lr, config.effective_warmup(), config.total_steps);
    objectives::LossReport report = pretrain_step(model, state, clips, config);
    metrics << metrics_line(report, lr) << '\n';
    metrics.flush();
    summary.reports.push_back(report);
    if (options.log && (report.step % 10 == 0 || state.step == end))
      *options.log << "step " << report.step << "  total " << report.total << "  rec " << report.rec << "  align "
                   << report.align << "  cl " << report.cl << "  lr " << lr << std::endl;
    if (config.checkpoint_every && state.step % config.checkpoint_every == 0)
      checkpoint::save(options.out_dir / ("ckpt_" + std::to_string(state.step) + ".bin"), config, model, state);
  }
  checkpoint::save(options.out_dir / "last.ckpt", config, model, state);
  summary.final_step = state.step;
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

}  // namespace fprl
