#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "mia/gradcheck.hpp"
#include "mia/io.hpp"
#include "mia/metrics.hpp"
#include "mia/model.hpp"
#include "mia/synthetic.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using mia::real;

namespace {

struct RunConfig {
  mia::ModelConfig model;
  mia::synth::SyntheticSpec synth;
  uint64_t seed = 0;
  std::string mode = "unmasked";
  real hm_threshold = 0.2;
};

// Throws std::invalid_argument on malformed content; callers map that to exit 2.
RunConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config: " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  RunConfig cfg;
  try {
    auto& m = cfg.model;
    m.scale = j.value("scale", m.scale);
    m.channels = j.value("channels", m.channels);
    m.window_side = j.value("window_side", m.window_side);
    m.heads = j.value("heads", m.heads);
    m.M = j.value("M", m.M);
    m.N = j.value("N", m.N);
    m.skip_interval = j.value("skip_interval", m.skip_interval);
    m.ffn_ratio = j.value("ffn_ratio", m.ffn_ratio);
    m.tau = j.value("tau", m.tau);
    m.lambda = j.value("lambda", m.lambda);
    m.charbonnier_eps = j.value("charbonnier_eps", m.charbonnier_eps);
    m.init_std = j.value("init_std", m.init_std);
    m.global_residual = j.value("global_residual", m.global_residual);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.mode = j.value("mode", cfg.mode);
    cfg.hm_threshold = j.value("hm_threshold", cfg.hm_threshold);

    auto& s = cfg.synth;
    s.T = j.value("T", s.T);
    s.H = j.value("H", s.H);
    s.W = j.value("W", s.W);
    s.scale = m.scale;
    const std::string pat = j.value("pattern", std::string("static"));
    if (pat == "static")
      s.pattern = mia::synth::Pattern::static_scene;
    else if (pat == "moving_square")
      s.pattern = mia::synth::Pattern::moving_square;
    else if (pat == "mixed")
      s.pattern = mia::synth::Pattern::mixed;
    else
      throw std::invalid_argument("unknown pattern: " + pat);
    s.vy = j.value("vy", s.vy);
    s.vx = j.value("vx", s.vx);
    s.fraction = j.value("fraction", s.fraction);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.seed = cfg.seed;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config field error: ") + e.what());
  }
  cfg.model.validate();
  cfg.synth.validate();
  if (cfg.mode != "unmasked" && cfg.mode != "masked" && cfg.mode != "handcrafted")
    throw std::invalid_argument("mode must be unmasked, masked or handcrafted");
  return cfg;
}

mia::RunMode parse_mode(const std::string& m) {
  if (m == "unmasked") return mia::RunMode::unmasked;
  if (m == "masked") return mia::RunMode::masked;
  return mia::RunMode::handcrafted;
}

std::vector<mia::Tensor> read_frames(const fs::path& dir) {
  auto files = mia::io::list_frame_files(dir);
  if (files.empty()) throw std::runtime_error("no frames found in " + dir.string());
  std::vector<mia::Tensor> out;
  for (auto& f : files) out.push_back(mia::io::read_frame(f));
  return out;
}

std::string frame_name(const char* stem, int t) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03d.miat", stem, t);
  return buf;
}

std::string fmt(real v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.precision(10);
  os << v;
  return os.str();
}

int cmd_gen(const fs::path& config, const fs::path& out_dir) {
  RunConfig cfg = load_config(config);
  mia::synth::Sequence seq = mia::synth::gen_synthetic(cfg.synth);
  fs::create_directories(out_dir / "hr");
  fs::create_directories(out_dir / "lr");
  for (size_t t = 0; t < seq.hr.size(); ++t) {
    mia::io::write_miat(out_dir / "hr" / frame_name("frame", (int)t), seq.hr[t]);
    mia::io::write_miat(out_dir / "lr" / frame_name("frame", (int)t), seq.lr[t]);
  }
  std::cout << "wrote " << seq.hr.size() << " HR/LR frame pairs to "
            << out_dir.string() << '\n';
  return 0;
}

int cmd_infer(const fs::path& config, const fs::path& lr_dir, const fs::path& hr_dir,
              const fs::path& out_dir, const std::string& mode_flag,
              bool saturate, bool dump_masks, bool dump_frames,
              const fs::path& checkpoint, uint64_t seed_flag, bool seed_set) {
  RunConfig cfg = load_config(config);
  if (!mode_flag.empty()) cfg.mode = mode_flag;
  if (cfg.mode != "unmasked" && cfg.mode != "masked" && cfg.mode != "handcrafted")
    throw std::invalid_argument("mode must be unmasked, masked or handcrafted");
  if (seed_set) cfg.seed = seed_flag;

  mia::Model model(cfg.model, cfg.seed);
  if (!checkpoint.empty()) mia::io::load_checkpoint(checkpoint, model.params());

  std::vector<mia::Tensor> lr = read_frames(lr_dir);
  std::vector<mia::Tensor> hr;
  if (!hr_dir.empty()) hr = read_frames(hr_dir);

  mia::ForwardOptions opts;
  opts.mode = parse_mode(cfg.mode);
  opts.saturate_masks = saturate;
  opts.hm_threshold = cfg.hm_threshold;
  opts.seed = cfg.seed;
  mia::ForwardResult res = model.forward_sequence(lr, opts);

  fs::create_directories(out_dir);
  std::ostringstream csv;
  csv << "t,psnr,ssim,flops,mean_alpha\n";
  for (size_t t = 0; t < res.hr.size(); ++t) {
    real p = 99.0, s = 1.0;
    if (!hr.empty()) {
      p = mia::metrics::psnr(res.hr[t], hr[t]);
      s = mia::metrics::ssim(res.hr[t], hr[t]);
    }
    const long long flops = 2 * res.ledger.frame_macs((int)t);
    csv << t << ',' << fmt(p) << ',' << fmt(s) << ',' << flops << ','
        << fmt(res.frame_alpha[t]) << '\n';
  }
  mia::io::write_text_file(out_dir / "metrics.csv", csv.str());

  if (dump_masks) {
    for (auto& frame_recs : res.records)
      for (auto& r : frame_recs) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "mask_t%d_m%d_n%d.pgm", r.frame, r.module,
                      r.block);
        mia::io::write_pgm_mask(out_dir / buf, r.mask.values);
      }
  }
  if (dump_frames)
    for (size_t t = 0; t < res.hr.size(); ++t)
      mia::io::write_miat(out_dir / frame_name("sr", (int)t), res.hr[t]);

  std::cout << "mean_alpha " << fmt(res.mean_alpha) << '\n';
  return 0;
}

int cmd_train(const fs::path& config, const fs::path& lr_dir, const fs::path& hr_dir,
              const fs::path& out_dir, int steps, real lr_rate) {
  RunConfig cfg = load_config(config);
  std::vector<mia::Tensor> lr = read_frames(lr_dir);
  std::vector<mia::Tensor> hr = read_frames(hr_dir);

  mia::Model model(cfg.model, cfg.seed);
  mia::ad::AdamConfig adam;
  adam.lr = lr_rate;
  mia::ad::AdamState state;
  std::ostringstream csv;
  csv << "step,total,l_sr,l_mask,mean_alpha\n";
  for (int step = 0; step < steps; ++step) {
    mia::TrainStats st =
        mia::train_step(model, lr, hr, cfg.seed * 1000003ULL + step, adam, state);
    csv << step << ',' << fmt(st.total) << ',' << fmt(st.l_sr) << ','
        << fmt(st.l_mask) << ',' << fmt(st.mean_alpha) << '\n';
    if (step == 0 || (step + 1) % 50 == 0)
      std::cout << "step " << step << " total " << fmt(st.total) << '\n';
  }
  fs::create_directories(out_dir);
  mia::io::write_text_file(out_dir / "loss.csv", csv.str());
  mia::io::save_checkpoint(out_dir / "checkpoint", model.params());
  return 0;
}

int cmd_flops(const fs::path& config, const fs::path& lr_dir, const fs::path& out_dir,
              real alpha) {
  RunConfig cfg = load_config(config);
  if (alpha < 0 || alpha > 1) throw std::invalid_argument("alpha must be in [0,1]");
  std::vector<mia::Tensor> lr = read_frames(lr_dir);
  const int H = lr[0].dim(0), W = lr[0].dim(1);

  mia::Model model(cfg.model, cfg.seed);
  mia::ForwardOptions opts;
  opts.seed = cfg.seed;
  const long long ones = (long long)std::llround(alpha * H * W);
  mia::Tensor mask({H, W});
  for (long long i = 0; i < ones; ++i) mask[i] = 1.0;
  opts.forced_mask = mask;
  mia::ForwardResult res = model.forward_sequence(lr, opts);

  // Middle frame: first-traversal frames force all-ones masks.
  const int t = (int)lr.size() / 2;
  std::map<std::pair<int, int>, long long> counts;
  for (auto& r : res.records[(size_t)t])
    counts[{r.module, r.block}] =
        (long long)std::llround(r.mask.alpha * H * W);
  auto rows = mia::instrumented_vs_analytic(res.ledger, t, H, W, cfg.model.channels,
                                            cfg.model.window_side, counts);
  fs::create_directories(out_dir);
  mia::io::write_text_file(out_dir / "flops.csv", mia::flop_report_csv(rows));
  std::cout << mia::flop_report_csv(rows);
  return 0;
}

int cmd_check_grad(const fs::path& out_dir) {
  auto results = mia::run_standard_grad_checks();
  real worst = 0;
  std::ostringstream csv;
  csv << "check,max_rel_err\n";
  for (auto& [name, r] : results) {
    csv << name << ',' << fmt(r.worst) << '\n';
    worst = std::max(worst, r.worst);
  }
  csv << "WORST," << fmt(worst) << '\n';
  fs::create_directories(out_dir);
  mia::io::write_text_file(out_dir / "gradcheck.csv", csv.str());
  std::cout << csv.str();
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIA-VSR desk-scale engine"};
  app.require_subcommand(1);

  std::string config, lr_dir, hr_dir, out_dir = "out", mode, checkpoint;
  bool saturate = false, dump_masks = false, dump_frames = false;
  int steps = 500;
  double lr_rate = 1e-3, alpha = 1.0;
  uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen", "generate a synthetic LR/HR sequence");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out_dir);

  auto* infer = app.add_subcommand("infer", "run super-resolution inference");
  infer->add_option("--config", config)->required();
  infer->add_option("--lr", lr_dir)->required();
  infer->add_option("--hr", hr_dir);
  infer->add_option("--out", out_dir);
  infer->add_option("--mode", mode);
  infer->add_flag("--saturate-masks", saturate);
  infer->add_flag("--dump-masks", dump_masks);
  infer->add_flag("--dump-frames", dump_frames);
  infer->add_option("--checkpoint", checkpoint);
  auto* seed_opt = infer->add_option("--seed", seed);

  auto* train = app.add_subcommand("train", "train on one sequence");
  train->add_option("--config", config)->required();
  train->add_option("--lr-frames", lr_dir)->required();
  train->add_option("--hr-frames", hr_dir)->required();
  train->add_option("--out", out_dir);
  train->add_option("--steps", steps);
  train->add_option("--learning-rate", lr_rate);

  auto* flops = app.add_subcommand("flops", "per-block FLOP report");
  flops->add_option("--config", config)->required();
  flops->add_option("--lr", lr_dir)->required();
  flops->add_option("--out", out_dir);
  flops->add_option("--alpha", alpha);

  auto* cg = app.add_subcommand("check-grad", "finite-difference gradient check");
  cg->add_option("--out", out_dir);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(config, out_dir);
    if (infer->parsed())
      return cmd_infer(config, lr_dir, hr_dir, out_dir, mode, saturate, dump_masks,
                       dump_frames, checkpoint, seed, seed_opt->count() > 0);
    if (train->parsed()) return cmd_train(config, lr_dir, hr_dir, out_dir, steps, lr_rate);
    if (flops->parsed()) return cmd_flops(config, lr_dir, out_dir, alpha);
    if (cg->parsed()) return cmd_check_grad(out_dir);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
