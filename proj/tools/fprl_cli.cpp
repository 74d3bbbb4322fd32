// Command-line front end: data generation, pre-training, gradient check,
// mask visualization and scan benchmarking.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "fprl/checkpoint.hpp"
#include "fprl/error.hpp"
#include "fprl/gradcheck.hpp"
#include "fprl/kernels.hpp"
#include "fprl/model.hpp"
#include "fprl/ssm.hpp"
#include "fprl/synth.hpp"
#include "fprl/trainer.hpp"

namespace fs = std::filesystem;
using namespace fprl;

namespace {

int gen_data(const fs::path& out, std::size_t count, std::uint64_t seed, synth::ClipSpec spec) {
  fs::create_directories(out);
  for (std::size_t i = 0; i < count; ++i) {
    spec.seed = derive_seed(seed, i);
    char name[48];
    std::snprintf(name, sizeof name, "clip_%04zu.fprlclip", i);
    synth::write_clip(out / name, synth::generate_clip(spec));
  }
  std::cout << "wrote " << count << " clips to " << out.string() << "\n";
  return 0;
}

int pretrain(const std::string& config_path, const std::string& data, const std::string& out,
             const std::string& resume, std::size_t stop_after, bool quiet) {
  RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
  if (!data.empty()) config.data_dir = data;
  if (!out.empty()) config.out_dir = out;
  config.validate();
  TrainOptions opts;
  opts.data_dir = config.data_dir;
  opts.out_dir = config.out_dir;
  if (!resume.empty()) opts.resume = resume;
  if (stop_after) opts.stop_after = stop_after;
  if (!quiet) opts.log = &std::cout;
  TrainSummary s = train(config, opts);
  std::cout << "trained steps " << s.first_step << ".." << s.final_step << " in " << s.seconds << " s; outputs in "
            << config.out_dir << "\n";
  return 0;
}

int gradcheck(const std::string& config_path, const GradCheckOptions& opts, bool verbose) {
  RunConfig config = config_path.empty() ? gradcheck_config() : load_config(config_path);
  GradCheckReport r = gradcheck_objective(config, opts);
  for (const auto& c : r.cases)
    if (verbose || !c.pass)
      std::printf("%-4s %-40s %-12s analytic % .10e numeric % .10e rel %.2e resampled %zu\n", c.pass ? "ok" : "FAIL",
                  c.tensor.c_str(), c.probe.c_str(), c.analytic, c.numeric, c.rel_error, c.resamples);
  std::printf("%zu tensors, %zu probes, worst rel. error %.3e, %.1f s: %s\n", r.tensors, r.cases.size(),
              r.worst_rel_error, r.seconds, r.pass ? "PASS" : "FAIL");
  return r.pass ? 0 : 3;
}

void write_pgm(const fs::path& path, std::size_t side, const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << side << " " << side << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

int mask_viz(const std::string& ckpt, const std::string& clip_path, const std::string& out, std::string config_path,
             std::uint64_t seed) {
  if (config_path.empty()) config_path = (fs::path(ckpt).parent_path() / "config.txt").string();
  RunConfig config = load_config(config_path);
  Model model = Model::initialize(config);
  TrainState state;
  checkpoint::load(ckpt, config, model, state);
  synth::VideoClip clip = synth::read_clip(clip_path);
  check_dataset({clip}, config);

  Rng rng(seed);
  ClipOutputs o = forward_clip(clip, model.params, config, rng);
  const auto& sel = o.selection;
  const std::size_t G = config.grid(), P = config.patch_size, S = config.frame_side;
  fs::create_directories(out);

  std::vector<bool> visible(sel.P.size(), false);
  for (std::size_t i : sel.visible) visible[i] = true;
  for (std::size_t f = 0; f < config.frames_per_view; ++f) {
    std::vector<std::uint8_t> img(S * S, 0);
    for (std::size_t t = 0; t < G * G; ++t) {
      if (!visible[f * G * G + t]) continue;
      std::size_t gy = t / G, gx = t % G;
      for (std::size_t y = gy * P; y < (gy + 1) * P; ++y)
        for (std::size_t x = gx * P; x < (gx + 1) * P; ++x) img[y * S + x] = 255;
    }
    write_pgm(fs::path(out) / ("mask_frame" + std::to_string(o.views.current[f]) + ".pgm"), S, img);
  }
  std::ofstream csv(fs::path(out) / "probabilities.csv");
  csv << "token,frame,row,col,H,R,S,P,visible\n";
  csv.precision(17);
  for (std::size_t i = 0; i < sel.P.size(); ++i) {
    std::size_t f = i / (G * G), t = i % (G * G);
    csv << i << ',' << o.views.current[f] << ',' << t / G << ',' << t % G << ',' << sel.H[i] << ',' << sel.R[i]
        << ',' << sel.S[i] << ',' << sel.P[i] << ',' << (visible[i] ? 1 : 0) << '\n';
  }
  std::cout << "visible " << sel.visible.size() << " of " << sel.P.size() << " tokens; wrote " << out << "\n";
  return 0;
}

int scan_bench(const std::vector<std::size_t>& sizes, std::size_t reps, std::size_t channels, std::size_t state) {
  std::printf("%-8s %-7s %14s %14s\n", "length", "isa", "seq ns/token", "par ns/token");
  for (std::size_t L : sizes) {
    ssm::ScanProblem p;
    p.length = L;
    p.channels = channels;
    p.state = state;
    Rng rng(L);
    for (std::size_t i = 0; i < L * state * channels; ++i) {
      p.a_bar.push_back(rng.uniform(0.5, 0.99));
      p.b_bar.push_back(rng.uniform(-0.1, 0.1));
    }
    for (std::size_t i = 0; i < L * state; ++i) p.c.push_back(rng.normal());
    for (std::size_t i = 0; i < L * channels; ++i) p.x.push_back(rng.normal());
    for (kernels::Isa isa : {kernels::Isa::scalar, kernels::Isa::avx2}) {
      if (!kernels::isa_supported(isa)) continue;
      kernels::select(isa);
      auto time = [&](auto&& fn) {
        double sink = 0.0;
        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t r = 0; r < reps; ++r) sink += fn()[0];
        auto dt = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count();
        if (sink == 12345.678) std::puts("");
        return dt / static_cast<double>(reps * L);
      };
      double seq = time([&] { return ssm::scan_sequential(p); });
      double par = time([&] { return ssm::scan_parallel(p); });
      std::printf("%-8zu %-7s %14.2f %14.2f\n", L, std::string(kernels::isa_name(isa)).c_str(), seq, par);
    }
  }
  kernels::select(kernels::best_isa());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised video pre-training on synthetic clips"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic clip dataset");
  std::string gen_out = "data";
  std::size_t gen_count = 64;
  std::uint64_t gen_seed = 0;
  synth::ClipSpec spec;
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_option("--count", gen_count, "Number of clips")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Master seed")->capture_default_str();
  gen->add_option("--frames", spec.frames, "Frames per clip")->capture_default_str();
  gen->add_option("--side", spec.side, "Frame side in pixels")->capture_default_str();
  gen->add_option("--patch", spec.patch, "Patch size recorded in the clip header")->capture_default_str();
  gen->add_option("--radius-min", spec.radius_min, "Smallest lesion radius")->capture_default_str();
  gen->add_option("--radius-max", spec.radius_max, "Largest lesion radius")->capture_default_str();
  gen->add_option("--drift", spec.drift, "Background jitter per frame, pixels")->capture_default_str();
  gen->add_option("--noise", spec.noise, "Gaussian noise sigma")->capture_default_str();

  auto* pre = app.add_subcommand("pretrain", "Run pre-training");
  std::string cfg_path, data_dir, out_dir, resume;
  std::size_t stop_after = 0;
  bool quiet = false;
  pre->add_option("--config", cfg_path, "Config file (key = value)");
  pre->add_option("--data", data_dir, "Clip directory (overrides data_dir)");
  pre->add_option("--out", out_dir, "Output directory (overrides out_dir)");
  pre->add_option("--resume", resume, "Checkpoint to resume from");
  pre->add_option("--stop-after", stop_after, "Stop once this many steps are done");
  pre->add_flag("--quiet", quiet, "No progress output");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
  GradCheckOptions gc_opts;
  std::string gc_config;
  bool gc_verbose = false;
  gc->add_option("--seed", gc_opts.seed)->capture_default_str();
  gc->add_option("--eps", gc_opts.eps)->capture_default_str();
  gc->add_option("--tol", gc_opts.tol)->capture_default_str();
  gc->add_option("--config", gc_config, "Config file (default: desk gradient-check setup)");
  gc->add_flag("-v,--verbose", gc_verbose, "Print every probe");

  auto* viz = app.add_subcommand("mask-viz", "Write TPAM masks as PGM plus the probability table");
  std::string viz_ckpt, viz_clip, viz_out = "mask_viz", viz_config;
  std::uint64_t viz_seed = 0;
  viz->add_option("--ckpt", viz_ckpt)->required();
  viz->add_option("--clip", viz_clip)->required();
  viz->add_option("--out", viz_out)->capture_default_str();
  viz->add_option("--config", viz_config, "Config (default: config.txt next to the checkpoint)");
  viz->add_option("--seed", viz_seed, "View sampling seed")->capture_default_str();

  auto* bench = app.add_subcommand("scan-bench", "Time sequential against parallel scans");
  std::vector<std::size_t> sizes{16, 64, 256, 1024};
  std::size_t reps = 20, channels = 32, state = 8;
  bench->add_option("--sizes", sizes)->delimiter(',')->capture_default_str();
  bench->add_option("--reps", reps)->capture_default_str();
  bench->add_option("--channels", channels)->capture_default_str();
  bench->add_option("--state", state)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return gen_data(gen_out, gen_count, gen_seed, spec);
    if (*pre) return pretrain(cfg_path, data_dir, out_dir, resume, stop_after, quiet);
    if (*gc) return gradcheck(gc_config, gc_opts, gc_verbose);
    if (*viz) return mask_viz(viz_ckpt, viz_clip, viz_out, viz_config, viz_seed);
    if (*bench) return scan_bench(sizes, reps, channels, state);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DegenerateInputError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
