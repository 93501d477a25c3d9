// crfd: compositional dynamic radiance fields at desk scale.
// One binary, subcommand style; config file + flag overrides (flags win).

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "crfd/errors.hpp"
#include "crfd/metrics.hpp"
#include "crfd/sampling.hpp"
#include "crfd/trainer.hpp"

namespace fs = std::filesystem;
using namespace crfd;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::int64_t seed = -1;
  int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run config file (key=value lines)");
  cmd->add_option("--set", opts.overrides, "config override key=value (repeatable)");
  cmd->add_option("--seed", opts.seed, "override the run seed");
  cmd->add_option("--threads", opts.threads, "worker threads (default 1; env CRFD_THREADS)");
}

RunConfig resolve_config(const CommonOpts& opts, const RunConfig* base = nullptr) {
  RunConfig cfg = base ? *base : RunConfig{};
  if (!opts.config_path.empty()) cfg = RunConfig::load_file(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.threads > 0) {
    cfg.threads = opts.threads;
  } else if (const char* env = std::getenv("CRFD_THREADS")) {
    cfg.threads = std::max(1, std::atoi(env));
  }
  cfg.validate();
  return cfg;
}

void write_echo_for(const std::string& out, const RunConfig& cfg, bool out_is_dir) {
  if (out_is_dir) {
    fs::create_directories(out);
    cfg.write_echo((fs::path(out) / "resolved_config.txt").string());
  } else {
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    cfg.write_echo(out + ".config");
  }
}

struct LoadedModel {
  Checkpoint ckpt;
  RunConfig cfg;
  std::unique_ptr<Model> model;
  std::unique_ptr<Dataset> dataset;
};

LoadedModel load_model(const std::string& ckpt_path, const std::string& data_override,
                       const CommonOpts& opts) {
  LoadedModel lm;
  lm.ckpt = Checkpoint::load(ckpt_path);
  CommonOpts merged = opts;
  lm.cfg = lm.ckpt.config;
  if (!opts.config_path.empty()) lm.cfg = RunConfig::load_file(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    lm.cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed >= 0) lm.cfg.seed = static_cast<std::uint64_t>(opts.seed);
  if (opts.threads > 0) lm.cfg.threads = opts.threads;
  else if (const char* env = std::getenv("CRFD_THREADS")) lm.cfg.threads = std::max(1, std::atoi(env));
  if (!data_override.empty()) lm.cfg.data = data_override;
  lm.cfg.validate();
  if (lm.cfg.data.empty()) throw UsageError("no dataset path: pass --data or keep it in the checkpoint");

  // The architecture comes from the checkpoint's own config.
  lm.model = std::make_unique<Model>(lm.ckpt.config);
  for (const auto& [name, t] : lm.ckpt.params) lm.model->params().set(name, t);
  lm.dataset = std::make_unique<Dataset>(load_dataset(lm.cfg.data));
  return lm;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& opts, const std::string& out) {
  RunConfig cfg = resolve_config(opts);
  SyntheticScene scene = SyntheticScene::from_config(cfg);
  generate_dataset(scene, cfg, out, cfg.threads);
  write_echo_for(out, cfg, true);
  std::cout << "dataset written to " << out << " (" << (cfg.n_train_cams + cfg.n_test_cams)
            << " cameras, " << cfg.n_frames << " frames)\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data, const std::string& out,
              const std::string& conditioning, const std::string& resume) {
  RunConfig cfg = resolve_config(opts);
  if (!conditioning.empty()) cfg.conditioning = conditioning;
  cfg.data = data;
  cfg.validate();
  Dataset ds = load_dataset(data);
  Trainer trainer(ds, cfg);
  std::unique_ptr<Checkpoint> resume_ckpt;
  if (!resume.empty()) resume_ckpt = std::make_unique<Checkpoint>(Checkpoint::load(resume));
  write_echo_for(out, cfg, true);
  trainer.train(out, resume_ckpt.get());
  std::cout << "trained to iteration " << cfg.max_iters << "; checkpoint at " << out
            << "/checkpoint.crfd\n";
  return 0;
}

int cmd_render(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
               const std::string& camera, int frame, const std::string& mode,
               const std::string& out) {
  LoadedModel lm = load_model(ckpt_path, data, opts);
  if (!mode.empty()) lm.cfg.sampling = mode;
  const Camera& cam = lm.dataset->camera_by_id(camera);  // unknown id -> data error
  if (frame < 0 || frame >= lm.dataset->n_frames)
    throw DataError("frame " + std::to_string(frame) + " outside dataset range [0," +
                    std::to_string(lm.dataset->n_frames) + ")");
  RenderSettings settings = RenderSettings::from_config(lm.cfg);
  ImageRender render = render_eval(*lm.model, *lm.dataset, lm.ckpt.conditioning_cams, frame, cam,
                                   settings, lm.cfg.threads);
  fs::create_directories(out);
  write_ppm((fs::path(out) / "fine.ppm").string(), render.fine);
  write_ppm((fs::path(out) / "coarse.ppm").string(), render.coarse);
  write_float_channels((fs::path(out) / "alpha.bin").string(), render.alpha);
  write_float_channels((fs::path(out) / "depth.bin").string(), render.depth);
  write_echo_for(out, lm.cfg, true);
  std::cout << "rendered frame " << frame << " from " << camera << " into " << out << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
             const std::string& split, const std::string& out) {
  LoadedModel lm = load_model(ckpt_path, data, opts);
  const Dataset& ds = *lm.dataset;
  const std::vector<int>& cams = split == "train" ? ds.train_indices : ds.test_indices;
  if (split != "train" && split != "test") throw UsageError("--split must be train or test");
  RenderSettings settings = RenderSettings::from_config(lm.cfg);

  std::ostringstream csv;
  csv << "frame,camera,mse,psnr,ssim\n";
  double sum_mse = 0, sum_psnr = 0, sum_ssim = 0;
  int rows = 0;
  for (int frame = 0; frame < ds.n_frames; ++frame)
    for (int ci : cams) {
      const Camera& cam = ds.cameras[static_cast<size_t>(ci)];
      ImageRender render = render_eval(*lm.model, ds, lm.ckpt.conditioning_cams, frame, cam,
                                       settings, lm.cfg.threads);
      const Image8& gt = ds.images[static_cast<size_t>(frame)][static_cast<size_t>(ci)];
      double m = mse_8bit(render.fine, gt);
      double p = psnr(m);
      double s = ssim(render.fine, gt);
      csv << frame << "," << cam.id << "," << fmt(m) << "," << fmt(p) << "," << fmt(s) << "\n";
      sum_mse += m;
      sum_psnr += p;
      sum_ssim += s;
      ++rows;
    }
  csv << "mean,all," << fmt(sum_mse / rows) << "," << fmt(sum_psnr / rows) << ","
      << fmt(sum_ssim / rows) << "\n";
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out);
  if (!f) throw DataError("cannot write '" + out + "'");
  f << csv.str();
  write_echo_for(out, lm.cfg, false);
  std::cout << "evaluated " << rows << " view/frame pairs into " << out << "\n";
  return 0;
}

int cmd_bench(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
              const std::string& out) {
  LoadedModel lm = load_model(ckpt_path, data, opts);
  const Dataset& ds = *lm.dataset;
  RenderSettings settings = RenderSettings::from_config(lm.cfg);
  Tensor z = frame_code(*lm.model, ds, lm.ckpt.conditioning_cams, 0);
  std::vector<Camera> views;
  std::vector<Image8> gt;
  for (int ci : ds.test_indices) {
    views.push_back(ds.cameras[static_cast<size_t>(ci)]);
    gt.push_back(ds.images[0][static_cast<size_t>(ci)]);
  }
  auto rows = benchmark_strategies(*lm.model, z, views, gt, settings,
                                   {SamplingMode::SS, SamplingMode::HS, SamplingMode::CoarseOnly},
                                   lm.cfg.threads);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out);
  if (!f) throw DataError("cannot write '" + out + "'");
  f << bench_csv(rows);
  write_echo_for(out, lm.cfg, false);
  for (const auto& r : rows)
    std::cout << r.mode << ": psnr=" << r.psnr << " wall_ms=" << r.wall_ms
              << " evals/ray=" << r.evals_per_ray << "\n";
  return 0;
}

int cmd_seqlen(const CommonOpts& opts, const std::string& data, const std::string& out) {
  RunConfig base = resolve_config(opts);
  base.data = data;
  Dataset ds = load_dataset(data);
  std::vector<int> lengths;
  for (int len : {1, 4, 8, 16})
    if (len <= ds.n_frames) lengths.push_back(len);
  RenderSettings settings = RenderSettings::from_config(base);

  std::ostringstream csv;
  csv << "mode,seq_len,mse,ssim\n";
  for (const std::string& mode : {std::string("local"), std::string("global")}) {
    for (int len : lengths) {
      RunConfig cfg = base;
      cfg.conditioning = mode;
      Trainer trainer(ds, cfg);
      trainer.set_frame_limit(len);
      for (std::uint64_t it = 0; it < static_cast<std::uint64_t>(cfg.max_iters); ++it)
        trainer.train_step(trainer.sample_batch(it), it);
      // The shared first frame is the test frame.
      double sum_sq = 0, sum_ssim = 0;
      std::int64_t count = 0;
      for (int ci : ds.test_indices) {
        const Camera& cam = ds.cameras[static_cast<size_t>(ci)];
        ImageRender render =
            render_eval(trainer.model(), ds, trainer.cond_cams(), 0, cam, settings, cfg.threads);
        const Image8& gt = ds.images[0][static_cast<size_t>(ci)];
        sum_sq += mse_8bit(render.fine, gt) * static_cast<double>(gt.rgb.size());
        count += static_cast<std::int64_t>(gt.rgb.size());
        sum_ssim += ssim(render.fine, gt);
      }
      csv << mode << "," << len << "," << fmt(sum_sq / static_cast<double>(count)) << ","
          << fmt(sum_ssim / static_cast<double>(ds.test_indices.size())) << "\n";
      std::cout << "seqlen " << mode << " len=" << len
                << " mse=" << sum_sq / static_cast<double>(count) << "\n";
    }
  }
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::ofstream f(out);
  if (!f) throw DataError("cannot write '" + out + "'");
  f << csv.str();
  write_echo_for(out, base, false);
  return 0;
}

int cmd_animate_interp(const CommonOpts& opts, const std::string& ckpt_path,
                       const std::string& data, const std::string& camera, int frame_a,
                       int frame_b, int steps, const std::string& out) {
  LoadedModel lm = load_model(ckpt_path, data, opts);
  const Camera& cam =
      camera.empty() ? lm.dataset->cameras[static_cast<size_t>(lm.dataset->test_indices[0])]
                     : lm.dataset->camera_by_id(camera);
  RenderSettings settings = RenderSettings::from_config(lm.cfg);
  Tensor z_a = frame_code(*lm.model, *lm.dataset, lm.ckpt.conditioning_cams, frame_a);
  Tensor z_b = frame_code(*lm.model, *lm.dataset, lm.ckpt.conditioning_cams, frame_b);
  auto codes = latent_interpolate(z_a, z_b, steps);
  fs::create_directories(out);
  for (size_t i = 0; i < codes.size(); ++i) {
    ImageRender render = render_image(*lm.model, codes[i], cam, settings, 0, lm.cfg.threads);
    char name[32];
    std::snprintf(name, sizeof(name), "interp_%03zu.ppm", i);
    write_ppm((fs::path(out) / name).string(), render.fine);
  }
  write_echo_for(out, lm.cfg, true);
  std::cout << "wrote " << codes.size() << " interpolation frames to " << out << "\n";
  return 0;
}

int cmd_animate_sample(const CommonOpts& opts, const std::string& ckpt_path,
                       const std::string& data, const std::string& camera, int n,
                       const std::string& out) {
  LoadedModel lm = load_model(ckpt_path, data, opts);
  const Camera& cam =
      camera.empty() ? lm.dataset->cameras[static_cast<size_t>(lm.dataset->test_indices[0])]
                     : lm.dataset->camera_by_id(camera);
  RenderSettings settings = RenderSettings::from_config(lm.cfg);
  Rng rng = Rng(lm.cfg.seed).derive(rng_tag::kLatent);
  auto codes = latent_sample(rng, n, lm.ckpt.config.z_dim);
  fs::create_directories(out);
  for (size_t i = 0; i < codes.size(); ++i) {
    ImageRender render = render_image(*lm.model, codes[i], cam, settings, 0, lm.cfg.threads);
    char name[32];
    std::snprintf(name, sizeof(name), "sample_%03zu.ppm", i);
    write_ppm((fs::path(out) / name).string(), render.fine);
  }
  write_echo_for(out, lm.cfg, true);
  std::cout << "wrote " << codes.size() << " latent samples to " << out << "\n";
  return 0;
}

int cmd_animate_keypoints(const CommonOpts& opts, const std::string& ckpt_path,
                          const std::string& data, const std::string& camera,
                          const std::string& kps_file, const std::string& out) {
  LoadedModel lm = load_model(ckpt_path, data, opts);
  const Camera& cam =
      camera.empty() ? lm.dataset->cameras[static_cast<size_t>(lm.dataset->test_indices[0])]
                     : lm.dataset->camera_by_id(camera);
  std::ifstream kf(kps_file);
  if (!kf) throw DataError("cannot open keypoint file '" + kps_file + "'");
  std::vector<double> xs, ys;
  double x, y;
  while (kf >> x >> y) {
    xs.push_back(x);
    ys.push_back(y);
  }
  if (xs.empty()) throw DataError("keypoint file '" + kps_file + "' holds no points");
  int k = static_cast<int>(xs.size());
  std::vector<double> pts(static_cast<size_t>(2) * k);
  for (int i = 0; i < k; ++i) {
    pts[static_cast<size_t>(i)] = xs[static_cast<size_t>(i)];
    pts[static_cast<size_t>(k + i)] = ys[static_cast<size_t>(i)];
  }
  Tape t(false);
  Tensor z = lm.model->keypoint_encode(t, Tensor::from({2, k}, std::move(pts)));
  RenderSettings settings = RenderSettings::from_config(lm.cfg);
  ImageRender render = render_image(*lm.model, z, cam, settings, 0, lm.cfg.threads);
  fs::create_directories(out);
  write_ppm((fs::path(out) / "keypoints.ppm").string(), render.fine);
  write_echo_for(out, lm.cfg, true);
  std::cout << "wrote keypoint-driven render to " << out << "\n";
  return 0;
}

int cmd_finetune(const CommonOpts& opts, const std::string& ckpt_path, const std::string& data,
                 const std::string& scope, const std::string& out) {
  if (scope != "encoder" && scope != "full") throw UsageError("--scope must be encoder or full");
  Checkpoint ckpt = Checkpoint::load(ckpt_path);
  RunConfig cfg = ckpt.config;
  if (!opts.config_path.empty()) cfg = RunConfig::load_file(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (opts.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed);
  cfg.data = data;
  cfg.validate();
  Dataset novel = load_dataset(data);
  Trainer trainer(novel, cfg);
  for (const auto& [name, t] : ckpt.params) trainer.model().params().set(name, t);
  if (scope == "encoder") trainer.set_trainable_prefixes({"enc."});
  write_echo_for(out, cfg, true);
  trainer.train(out);
  std::cout << "fine-tuned (" << scope << ") on " << data << "; checkpoint at " << out
            << "/checkpoint.crfd\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional dynamic radiance fields: synthesize, train, render, evaluate"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string out, data, ckpt, camera, conditioning, resume, mode, split = "test", scope = "encoder";
  std::string kps_file;
  int frame = 0, frame_a = 0, frame_b = 0, steps = 2, n_samples = 1;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-view dataset");
  add_common(synth, opts);
  synth->add_option("--out", out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  add_common(train, opts);
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--conditioning", conditioning, "local|global");
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* render = app.add_subcommand("render", "render a frame from a checkpoint");
  add_common(render, opts);
  render->add_option("--ckpt", ckpt, "checkpoint path")->required();
  render->add_option("--data", data, "dataset directory (default: from checkpoint)");
  render->add_option("--camera", camera, "camera id")->required();
  render->add_option("--frame", frame, "frame index")->required();
  render->add_option("--mode", mode, "ss|hs|coarse");
  render->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, opts);
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--data", data, "dataset directory (default: from checkpoint)");
  eval->add_option("--split", split, "train|test (default test)");
  eval->add_option("--out", out, "output CSV path")->required();

  auto* bench = app.add_subcommand("bench", "benchmark SS vs HS vs coarse-only");
  add_common(bench, opts);
  bench->add_option("--ckpt", ckpt, "checkpoint path")->required();
  bench->add_option("--data", data, "dataset directory (default: from checkpoint)");
  bench->add_option("--out", out, "output CSV path")->required();

  auto* seqlen = app.add_subcommand("seqlen", "sequence-length ablation sweep");
  add_common(seqlen, opts);
  seqlen->add_option("--data", data, "dataset directory")->required();
  seqlen->add_option("--out", out, "output CSV path")->required();

  auto* animate = app.add_subcommand("animate", "animation utilities");
  add_common(animate, opts);
  animate->require_subcommand(1);
  animate->add_option("--ckpt", ckpt, "checkpoint path")->required();
  animate->add_option("--data", data, "dataset directory (default: from checkpoint)");
  animate->add_option("--camera", camera, "camera id (default: first test camera)");
  animate->add_option("--out", out, "output directory")->required();
  auto* interp = animate->add_subcommand("interp", "interpolate between two frames");
  interp->add_option("--frame-a", frame_a)->required();
  interp->add_option("--frame-b", frame_b)->required();
  interp->add_option("--steps", steps, "number of frames, endpoints included");
  auto* sample = animate->add_subcommand("sample", "render draws from the latent prior");
  sample->add_option("--n", n_samples, "number of samples");
  auto* kps = animate->add_subcommand("keypoints", "render from a 2D keypoint file");
  kps->add_option("--kps-file", kps_file, "file with one 'x y' pair per line")->required();

  auto* finetune = app.add_subcommand("finetune", "fit a novel sequence");
  add_common(finetune, opts);
  finetune->add_option("--ckpt", ckpt, "checkpoint path")->required();
  finetune->add_option("--data", data, "novel dataset directory")->required();
  finetune->add_option("--scope", scope, "encoder|full (default encoder)");
  finetune->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(opts, out);
    if (train->parsed()) return cmd_train(opts, data, out, conditioning, resume);
    if (render->parsed()) return cmd_render(opts, ckpt, data, camera, frame, mode, out);
    if (eval->parsed()) return cmd_eval(opts, ckpt, data, split, out);
    if (bench->parsed()) return cmd_bench(opts, ckpt, data, out);
    if (seqlen->parsed()) return cmd_seqlen(opts, data, out);
    if (animate->parsed()) {
      if (interp->parsed())
        return cmd_animate_interp(opts, ckpt, data, camera, frame_a, frame_b, steps, out);
      if (sample->parsed()) return cmd_animate_sample(opts, ckpt, data, camera, n_samples, out);
      if (kps->parsed()) return cmd_animate_keypoints(opts, ckpt, data, camera, kps_file, out);
    }
    if (finetune->parsed()) return cmd_finetune(opts, ckpt, data, scope, out);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
