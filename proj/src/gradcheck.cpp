#include "fprl/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "fprl/error.hpp"
#include "fprl/model.hpp"

namespace fprl {

RunConfig gradcheck_config() {
  RunConfig c;
  c.window_len = 12;
  c.batch_size = 2;
  c.aux_mask_weight = 1.0;
  c.decoder_depth = 2;
  return c;
}

double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace {

struct Objective {
  const RunConfig& config;
  std::vector<synth::VideoClip> clips;
  std::uint64_t seed;
  std::vector<Tensor>* pinned;  // stop_gradient values of the base evaluation

  double value(const ParamStore& params, std::vector<std::uint8_t>* decisions) const {
    DecisionRecorder recorder;
    StopGradientReplay replay(StopGradientReplay::Mode::replay, pinned);
    Rng rng(seed);
    std::vector<const synth::VideoClip*> batch;
    for (const auto& c : clips) batch.push_back(&c);
    double v = forward_batch(batch, params, config, rng).loss.total.item();
    if (decisions) *decisions = recorder.log();
    return v;
  }
};

ParamStore perturbed(const ParamStore& base, const std::string& name, const std::vector<double>& dir, double step) {
  ParamStore out = base;
  const Tensor& t = base.at(name);
  std::vector<double> v = t.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += step * dir[i];
  out.set(name, Tensor(t.shape(), std::move(v)));
  return out;
}

}  // namespace

GradCheckReport gradcheck_objective(const RunConfig& config, const GradCheckOptions& options) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  Model model = Model::initialize(config);

  std::vector<Tensor> pinned;
  Objective objective{config, {}, derive_seed(options.seed, 1), &pinned};
  for (std::size_t b = 0; b < options.batch; ++b) {
    synth::ClipSpec spec;
    spec.frames = config.window_len;
    spec.side = config.frame_side;
    spec.patch = config.patch_size;
    spec.seed = derive_seed(options.seed, 100 + b);
    objective.clips.push_back(synth::generate_clip(spec));
  }

  std::vector<std::uint8_t> base_decisions;
  const std::vector<std::string> names = model.trainable_names();
  {
    Tape tape;
    ParamStore bound = model.params.bind(tape, Model::trainable);
    DecisionRecorder recorder;
    StopGradientReplay replay(StopGradientReplay::Mode::record, &pinned);
    Rng rng(objective.seed);
    std::vector<const synth::VideoClip*> batch;
    for (const auto& c : objective.clips) batch.push_back(&c);
    Tensor loss = forward_batch(batch, bound, config, rng).loss.total;
    const double base_value = loss.item();
    base_decisions = recorder.log();
    const GradientMap grads = tape.backward(loss);
    std::vector<std::vector<double>> flat;
    for (const auto& n : names) flat.push_back(grads.at(bound.at(n)).to_vector());

    GradCheckReport report;
    report.tensors = names.size();
    Rng dir_rng(derive_seed(options.seed, 2));

    // Five-point central stencil. Every evaluation must take the same discrete
    // decisions as the base point; on a flip the step shrinks, then the probe
    // is redrawn.
    auto stencil = [&](const std::string& name, const std::vector<double>& dir, double h, double& out) {
      std::vector<std::uint8_t> log;
      double f[4];
      const double offsets[4] = {2 * h, h, -h, -2 * h};
      for (int s = 0; s < 4; ++s) {
        f[s] = objective.value(perturbed(model.params, name, dir, offsets[s]), &log);
        if (log != base_decisions) return false;
      }
      out = (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h);
      return true;
    };

    auto probe = [&](const std::string& name, const std::vector<double>& g, auto make_dir, std::string label) {
      GradCheckCase c;
      c.tensor = name;
      c.probe = std::move(label);
      bool done = false;
      for (std::size_t attempt = 0; attempt <= options.max_resamples && !done; ++attempt) {
        std::vector<double> dir = make_dir(attempt);
        for (double h = options.eps; h >= options.eps / 64.0 && !done; h /= 4.0) {
          if (!stencil(name, dir, h, c.numeric)) {
            ++c.resamples;
            continue;
          }
          c.analytic = std::inner_product(g.begin(), g.end(), dir.begin(), 0.0);
          // Below the stencil's round-off resolution only an absolute match is meaningful.
          const double resolution = 15.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(base_value), 1.0) / h;
          c.rel_error = relative_error(c.analytic, c.numeric, resolution / options.tol);
          c.pass = c.rel_error < options.tol;
          done = true;
        }
      }
      if (!done) c.rel_error = INFINITY;
      report.worst_rel_error = std::max(report.worst_rel_error, c.rel_error);
      report.cases.push_back(c);
    };

    for (std::size_t t = 0; t < names.size(); ++t) {
      const std::string& name = names[t];
      const std::vector<double>& g = flat[t];
      const std::size_t n = g.size();

      probe(name, g, [&](std::size_t) {
        std::vector<double> dir(n);
        double norm = 0.0;
        for (auto& x : dir) {
          x = dir_rng.normal();
          norm += x * x;
        }
        for (auto& x : dir) x /= std::sqrt(norm);
        return dir;
      }, "direction");

      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(g[a]) > std::abs(g[b]);
      });
      const std::size_t coords = std::min(options.coordinates, n);
      std::size_t next = coords;
      for (std::size_t k = 0; k < coords; ++k) {
        std::size_t chosen = order[k];
        probe(name, g, [&](std::size_t attempt) {
          // A coordinate sitting on a kink is replaced by the next-largest one.
          if (attempt > 0 && next < n) chosen = order[next++];
          std::vector<double> dir(n, 0.0);
          dir[chosen] = 1.0;
          return dir;
        }, "coord");
        report.cases.back().probe = "coord " + std::to_string(chosen);
      }
    }
    report.pass = std::all_of(report.cases.begin(), report.cases.end(), [](const auto& c) { return c.pass; });
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
  }
}

}  // namespace fprl
