#include "crfd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crfd/errors.hpp"
#include "crfd/metrics.hpp"

namespace fs = std::filesystem;

namespace crfd {

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const std::set<std::string>* only) {
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& [name, p] : params) {
    if (only && only->find(name) == only->end()) continue;
    auto git = grads.find(name);
    std::vector<double> zero;
    const std::vector<double>* g;
    if (git == grads.end()) {
      zero.assign(static_cast<size_t>(p.size()), 0.0);
      g = &zero;
    } else {
      if (git->second.shape() != p.shape())
        throw std::invalid_argument("adam_step: gradient shape mismatch for '" + name + "'");
      g = &git->second.values();
    }
    auto mit = state.m.find(name);
    if (mit == state.m.end()) {
      state.m.emplace(name, Tensor::zeros(p.shape()));
      state.v.emplace(name, Tensor::zeros(p.shape()));
      mit = state.m.find(name);
    }
    std::vector<double> m = mit->second.values();
    std::vector<double> v = state.v.at(name).values();
    std::vector<double> theta = p.values();
    for (size_t i = 0; i < theta.size(); ++i) {
      double gi = (*g)[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      theta[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    state.m[name] = Tensor::from(p.shape(), std::move(m));
    state.v[name] = Tensor::from(p.shape(), std::move(v));
    params.set(name, Tensor::from(p.shape(), std::move(theta), true));
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void Checkpoint::save(const std::string& path) const {
  ParamStore combined;
  for (const auto& [name, t] : params) combined.add(name, t);
  for (const auto& [name, t] : adam.m) combined.add("adam.m." + name, t);
  for (const auto& [name, t] : adam.v) combined.add("adam.v." + name, t);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "' for writing");
  combined.save(f);
  f << "trailer\n";
  f << "iter = " << iteration << "\n";
  f << "adam_step = " << adam.step << "\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "adam_lr = %.17g\nadam_beta1 = %.17g\nadam_beta2 = %.17g\nadam_eps = %.17g\n",
                adam.lr, adam.beta1, adam.beta2, adam.eps);
  f << buf;
  f << "conditioning_cams =";
  for (const auto& id : conditioning_cams) f << " " << id;
  f << "\n[config]\n" << config.to_text() << "[end]\n";
  if (!f) throw std::runtime_error("checkpoint write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint '" + path + "'");
  ParamStore combined = ParamStore::load(f);
  Checkpoint ckpt;
  for (const auto& [name, t] : combined) {
    if (name.rfind("adam.m.", 0) == 0)
      ckpt.adam.m.emplace(name.substr(7), Tensor::from(t.shape(), t.values()));
    else if (name.rfind("adam.v.", 0) == 0)
      ckpt.adam.v.emplace(name.substr(7), Tensor::from(t.shape(), t.values()));
    else
      ckpt.params.add(name, t);
  }
  std::string line;
  if (!std::getline(f, line) || line != "trailer")
    throw DataError("checkpoint '" + path + "': missing trailer");
  bool in_config = false;
  std::string cfg_text;
  while (std::getline(f, line)) {
    if (line == "[config]") {
      in_config = true;
      continue;
    }
    if (line == "[end]") break;
    if (in_config) {
      cfg_text += line + "\n";
      continue;
    }
    std::istringstream ls(line);
    std::string key, eq;
    ls >> key >> eq;
    if (eq != "=") throw DataError("checkpoint '" + path + "': malformed trailer line '" + line + "'");
    if (key == "iter") ls >> ckpt.iteration;
    else if (key == "adam_step") ls >> ckpt.adam.step;
    else if (key == "adam_lr") ls >> ckpt.adam.lr;
    else if (key == "adam_beta1") ls >> ckpt.adam.beta1;
    else if (key == "adam_beta2") ls >> ckpt.adam.beta2;
    else if (key == "adam_eps") ls >> ckpt.adam.eps;
    else if (key == "conditioning_cams") {
      std::string id;
      while (ls >> id) ckpt.conditioning_cams.push_back(id);
    } else {
      throw DataError("checkpoint '" + path + "': unknown trailer key '" + key + "'");
    }
  }
  ckpt.config = RunConfig::from_text(cfg_text);
  return ckpt;
}

// ---------------------------------------------------------------------------
// Conditioning views

std::vector<std::string> pick_conditioning_cameras(const Dataset& ds) {
  if (ds.train_indices.empty()) throw DataError("dataset has no training cameras");
  const Vec3 axes[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  std::vector<std::string> out;
  std::set<int> used;
  for (const Vec3& axis : axes) {
    int best = -1;
    double best_dot = -2;
    for (int i : ds.train_indices) {
      if (used.count(i)) continue;
      double d = ds.cameras[static_cast<size_t>(i)].center.normalized().dot(axis);
      if (d > best_dot) {
        best_dot = d;
        best = i;
      }
    }
    if (best < 0) best = ds.train_indices[0];  // fewer than 3 train cams: reuse
    used.insert(best);
    out.push_back(ds.cameras[static_cast<size_t>(best)].id);
  }
  return out;
}

Tensor conditioning_views(const Dataset& ds, const std::vector<std::string>& cam_ids, int frame,
                          int enc_h, int enc_w) {
  if (cam_ids.size() != 3) throw std::invalid_argument("exactly three conditioning views required");
  if (frame < 0 || frame >= ds.n_frames)
    throw std::invalid_argument("frame " + std::to_string(frame) + " outside dataset range");
  std::vector<double> all;
  all.reserve(static_cast<size_t>(9) * enc_h * enc_w);
  for (const std::string& id : cam_ids) {
    size_t cam_idx = 0;
    bool found = false;
    for (size_t i = 0; i < ds.cameras.size(); ++i)
      if (ds.cameras[i].id == id) {
        cam_idx = i;
        found = true;
        break;
      }
    if (!found) throw DataError("conditioning camera '" + id + "' not in dataset");
    const Image8& img = ds.images[static_cast<size_t>(frame)][cam_idx];
    std::vector<double> chw = to_chw(img);
    std::vector<double> resized = resize_bilinear_chw(chw, 3, img.height, img.width, enc_h, enc_w);
    all.insert(all.end(), resized.begin(), resized.end());
  }
  return Tensor::from({9, enc_h, enc_w}, std::move(all));
}

Tensor frame_code(const Model& model, const Dataset& ds,
                  const std::vector<std::string>& cond_cams, int frame) {
  Tape t(false);
  Tensor views =
      conditioning_views(ds, cond_cams, frame, model.config().enc_h, model.config().enc_w);
  return model.encode(t, views).mu;
}

ImageRender render_eval(const Model& model, const Dataset& ds,
                        const std::vector<std::string>& cond_cams, int frame, const Camera& cam,
                        const RenderSettings& settings, int threads, RenderStats* stats) {
  Tensor z = frame_code(model, ds, cond_cams, frame);
  return render_image(model, z, cam, settings, 0, threads, stats);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const Dataset& ds, const RunConfig& cfg)
    : ds_(ds), cfg_(cfg), model_(cfg), adam_(AdamState::from_config(cfg)) {
  cfg_.validate();
  if (ds.n_frames < 1) throw DataError("dataset has no frames");
  model_.init_params(Rng(cfg_.seed).derive(rng_tag::kInit));
  cond_cams_ = pick_conditioning_cameras(ds);
}

void Trainer::set_trainable_prefixes(std::vector<std::string> prefixes) {
  trainable_prefixes_ = std::move(prefixes);
  trainable_set_.clear();
  for (const auto& [name, t] : model_.params())
    for (const auto& p : trainable_prefixes_)
      if (name.rfind(p, 0) == 0) trainable_set_.insert(name);
}

std::vector<BatchGroup> Trainer::sample_batch(std::uint64_t iter) const {
  Rng r = Rng(cfg_.seed).derive(rng_tag::kTrain).derive(iter);
  int frames_avail = frame_limit_ > 0 ? std::min(frame_limit_, ds_.n_frames) : ds_.n_frames;
  BatchGroup g;
  g.frame = static_cast<int>(r.next_below(static_cast<std::uint64_t>(frames_avail)));
  g.cam_index = ds_.train_indices[r.next_below(ds_.train_indices.size())];
  const Camera& cam = ds_.cameras[static_cast<size_t>(g.cam_index)];
  std::uint64_t npx = static_cast<std::uint64_t>(cam.width) * cam.height;
  g.pixel_indices.resize(static_cast<size_t>(cfg_.rays_per_batch));
  for (int i = 0; i < cfg_.rays_per_batch; ++i)
    g.pixel_indices[static_cast<size_t>(i)] = static_cast<int>(r.next_below(npx));
  return {g};
}

void Trainer::throw_nan(const Tape& tape, std::uint64_t iter) const {
  std::string where = tape.first_nan_node();
  for (const auto& [name, p] : model_.params())
    if (p.has_nan()) {
      where = "parameter " + name;
      break;
    }
  throw NumericError("NaN loss at iteration " + std::to_string(iter) +
                     " (first NaN tensor: " + (where.empty() ? "<unknown>" : where) + ")");
}

TrainStepResult Trainer::train_step(const std::vector<BatchGroup>& groups, std::uint64_t iter) {
  if (groups.empty()) throw std::invalid_argument("train_step: empty batch");
  Tape tape;
  const Box3 bounds = Model::default_scene_bounds();
  RenderSettings settings = RenderSettings::from_config(cfg_);
  LossWeights weights = LossWeights::from_config(cfg_);
  bool global = model_.global_conditioning();

  TrainStepResult result;
  std::vector<Tensor> fine_rgbs, coarse_rgbs, fine_alphas, coarse_alphas, gts;
  std::vector<LatentDistribution> dists;
  double miss_recon = 0;  // per-pass constant from background-only rays
  std::int64_t n_miss = 0;

  Rng noise_rng = Rng(cfg_.seed).derive(rng_tag::kNoise).derive(iter);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const BatchGroup& g = groups[gi];
    if (g.frame < 0 || g.frame >= ds_.n_frames)
      throw std::invalid_argument("batch frame " + std::to_string(g.frame) + " out of range");
    const Camera& cam = ds_.cameras.at(static_cast<size_t>(g.cam_index));
    const Image8& gt_img = ds_.images[static_cast<size_t>(g.frame)][static_cast<size_t>(g.cam_index)];

    Tensor views = conditioning_views(ds_, cond_cams_, g.frame, cfg_.enc_h, cfg_.enc_w);
    LatentDistribution dist = model_.encode(tape, views);
    dists.push_back(dist);

    Rng nr = noise_rng.derive(gi);
    std::vector<double> noise(static_cast<size_t>(cfg_.z_dim));
    for (double& x : noise) x = nr.normal();
    Tensor z = reparameterize(tape, dist, Tensor::from({cfg_.z_dim}, std::move(noise)));

    Vec3 view = (cam.center - bounds.center()).normalized();
    VoxelField field = model_.decode(tape, z, view);
    ++result.decoder_invocations;
    if (field.grid.has_nan()) throw_nan(tape, iter);

    RayBatch rb;
    std::vector<double> gt_vals;
    for (int p : g.pixel_indices) {
      int x = p % cam.width;
      int y = p / cam.width;
      double r8 = gt_img.rgb[static_cast<size_t>(p) * 3 + 0] / 255.0;
      double g8 = gt_img.rgb[static_cast<size_t>(p) * 3 + 1] / 255.0;
      double b8 = gt_img.rgb[static_cast<size_t>(p) * 3 + 2] / 255.0;
      auto ray = generate_ray(cam, x, y, bounds);
      if (!ray) {
        // Background-only ray: prediction is exactly I_bg with zero alpha,
        // a constant w.r.t. every parameter.
        double dx = settings.background.x - r8;
        double dy = settings.background.y - g8;
        double dz = settings.background.z - b8;
        miss_recon += dx * dx + dy * dy + dz * dz;
        ++n_miss;
        continue;
      }
      rb.rays.push_back(*ray);
      rb.ids.push_back((static_cast<std::uint64_t>(gi) << 32) | static_cast<std::uint64_t>(p));
      gt_vals.push_back(r8);
      gt_vals.push_back(g8);
      gt_vals.push_back(b8);
    }
    if (rb.rays.empty()) continue;

    Rng render_rng = Rng(cfg_.seed).derive(rng_tag::kRaySampling).derive(iter).derive(gi);
    BatchRender br = [&] {
      try {
        return render_batch(tape, rb, model_, field, global ? &z : nullptr, view, settings,
                            &render_rng, &result.render_stats);
      } catch (const std::invalid_argument&) {
        // A NaN reaching the samplers trips their validation first.
        if (!tape.first_nan_node().empty()) throw_nan(tape, iter);
        throw;
      }
    }();
    if (br.fine_rgb.has_nan() || br.coarse_rgb.has_nan() || br.fine_alpha.has_nan() ||
        br.coarse_alpha.has_nan())
      throw_nan(tape, iter);
    fine_rgbs.push_back(br.fine_rgb);
    coarse_rgbs.push_back(br.coarse_rgb);
    fine_alphas.push_back(br.fine_alpha);
    coarse_alphas.push_back(br.coarse_alpha);
    gts.push_back(Tensor::from({static_cast<int>(rb.rays.size()), 3}, std::move(gt_vals)));
  }

  LossBreakdown lb;
  Tensor total;
  double kl_value = 0;
  {
    Tensor kl_total;
    for (const LatentDistribution& d : dists) {
      Tensor k = kl_loss(tape, d);
      kl_total = kl_total.defined() ? tape.add(kl_total, k) : k;
    }
    kl_value = kl_total.item();

    if (!fine_rgbs.empty()) {
      Tensor fine_rgb = fine_rgbs.size() == 1 ? fine_rgbs[0] : tape.concat(fine_rgbs, 0);
      Tensor coarse_rgb = coarse_rgbs.size() == 1 ? coarse_rgbs[0] : tape.concat(coarse_rgbs, 0);
      Tensor fine_alpha = fine_alphas.size() == 1 ? fine_alphas[0] : tape.concat(fine_alphas, 0);
      Tensor coarse_alpha =
          coarse_alphas.size() == 1 ? coarse_alphas[0] : tape.concat(coarse_alphas, 0);
      Tensor gt = gts.size() == 1 ? gts[0] : tape.concat(gts, 0);

      Tensor l_r_fine = reconstruction_loss(tape, fine_rgb, gt);
      Tensor l_r_coarse = reconstruction_loss(tape, coarse_rgb, gt);
      Tensor l_beta_fine = beta_prior(tape, fine_alpha, weights.beta_eps);
      Tensor l_beta_coarse = beta_prior(tape, coarse_alpha, weights.beta_eps);
      total = tape.add(l_r_fine, l_r_coarse);
      total = tape.add(total, tape.mul_scalar(l_beta_fine, weights.lambda_f));
      total = tape.add(total, tape.mul_scalar(l_beta_coarse, weights.lambda_c));
      lb.l_r_fine = l_r_fine.item();
      lb.l_r_coarse = l_r_coarse.item();
      lb.l_beta_fine = l_beta_fine.item();
      lb.l_beta_coarse = l_beta_coarse.item();
    }
    Tensor kl_w = tape.mul_scalar(kl_total, weights.lambda_kl);
    total = total.defined() ? tape.add(total, kl_w) : kl_w;
    lb.l_kl = kl_value;
  }
  if (n_miss > 0) {
    double miss_beta =
        static_cast<double>(n_miss) * (std::log(weights.beta_eps) + std::log(1.0 - weights.beta_eps));
    lb.l_r_fine += miss_recon;
    lb.l_r_coarse += miss_recon;
    lb.l_beta_fine += miss_beta;
    lb.l_beta_coarse += miss_beta;
    total = tape.add_scalar(total, 2.0 * miss_recon +
                                       (weights.lambda_f + weights.lambda_c) * miss_beta);
  }
  lb.total = total;
  lb.total_value = total.item();

  if (total.has_nan() || std::isnan(lb.total_value)) throw_nan(tape, iter);

  tape.backward(total);
  std::map<std::string, Tensor> grads;
  for (const auto& [name, p] : model_.params()) grads.emplace(name, tape.grad(p));
  adam_step(model_.params(), grads, adam_, trainable_set_.empty() ? nullptr : &trainable_set_);

  result.loss = lb;
  return result;
}

double Trainer::eval_psnr(int frame) const {
  RenderSettings settings = RenderSettings::from_config(cfg_);
  double sq_sum = 0;
  std::int64_t count = 0;
  for (int ci : ds_.test_indices) {
    const Camera& cam = ds_.cameras[static_cast<size_t>(ci)];
    ImageRender r = render_eval(model_, ds_, cond_cams_, frame, cam, settings, 1);
    const Image8& gt = ds_.images[static_cast<size_t>(frame)][static_cast<size_t>(ci)];
    sq_sum += mse_8bit(r.fine, gt) * static_cast<double>(gt.rgb.size());
    count += static_cast<std::int64_t>(gt.rgb.size());
  }
  return psnr(sq_sum / static_cast<double>(count));
}

Checkpoint Trainer::make_checkpoint(std::int64_t iteration) const {
  Checkpoint ckpt;
  for (const auto& [name, t] : model_.params()) ckpt.params.add(name, t);
  ckpt.adam = adam_;
  ckpt.config = cfg_;
  ckpt.iteration = iteration;
  ckpt.conditioning_cams = cond_cams_;
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  for (const auto& [name, t] : ckpt.params) model_.params().set(name, t);
  adam_ = ckpt.adam;
  if (!ckpt.conditioning_cams.empty()) cond_cams_ = ckpt.conditioning_cams;
}

std::string Trainer::train(const std::string& out_dir, const Checkpoint* resume) {
  fs::create_directories(out_dir);
  std::int64_t start = 0;
  if (resume) {
    restore(*resume);
    start = resume->iteration;
  }
  std::ostringstream csv;
  csv << "iter,total,l_r_fine,l_r_coarse,l_beta_fine,l_beta_coarse,l_kl,eval_psnr\n";
  char buf[512];
  for (std::int64_t iter = start; iter < cfg_.max_iters; ++iter) {
    auto batch = sample_batch(static_cast<std::uint64_t>(iter));
    TrainStepResult res = train_step(batch, static_cast<std::uint64_t>(iter));
    std::string eval_field;
    if ((iter + 1) % cfg_.eval_every == 0 || iter + 1 == cfg_.max_iters) {
      std::snprintf(buf, sizeof(buf), "%.17g", eval_psnr(0));
      eval_field = buf;
    }
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%s\n",
                  static_cast<long long>(iter), res.loss.total_value, res.loss.l_r_fine,
                  res.loss.l_r_coarse, res.loss.l_beta_fine, res.loss.l_beta_coarse, res.loss.l_kl,
                  eval_field.c_str());
    csv << buf;
    if (cfg_.ckpt_every > 0 && (iter + 1) % cfg_.ckpt_every == 0 && iter + 1 < cfg_.max_iters)
      make_checkpoint(iter + 1).save((fs::path(out_dir) / ("ckpt_" + std::to_string(iter + 1) + ".crfd")).string());
  }
  make_checkpoint(cfg_.max_iters).save((fs::path(out_dir) / "checkpoint.crfd").string());
  std::ofstream mf(fs::path(out_dir) / "metrics.csv");
  if (!mf) throw std::runtime_error("cannot write metrics.csv in '" + out_dir + "'");
  mf << csv.str();
  return csv.str();
}

// ---------------------------------------------------------------------------
// Keypoint distillation and latent utilities

Tensor keypoints_tensor(const Dataset& ds, int frame) {
  const auto& kps = ds.keypoints.at(static_cast<size_t>(frame));
  int k = static_cast<int>(kps.size());
  std::vector<double> v(static_cast<size_t>(2) * k);
  for (int i = 0; i < k; ++i) {
    v[static_cast<size_t>(i)] = kps[static_cast<size_t>(i)][0];
    v[static_cast<size_t>(k + i)] = kps[static_cast<size_t>(i)][1];
  }
  return Tensor::from({2, k}, std::move(v));
}

DistillResult distill_keypoint_encoder(Trainer& trainer, const Dataset& ds) {
  for (int f = 0; f < ds.n_frames; ++f)
    if (ds.keypoints[static_cast<size_t>(f)].empty())
      throw DataError("dataset frame " + std::to_string(f) + " has no keypoints");
  Model& model = trainer.model();
  const RunConfig& cfg = model.config();

  // Targets are the posterior means, not reparameterized draws.
  std::vector<Tensor> targets;
  for (int f = 0; f < ds.n_frames; ++f)
    targets.push_back(frame_code(model, ds, trainer.cond_cams(), f));

  std::set<std::string> kps_only;
  for (const auto& [name, t] : model.params())
    if (name.rfind("kps.", 0) == 0) kps_only.insert(name);

  AdamState opt = AdamState::from_config(cfg);
  opt.lr = cfg.distill_lr;

  auto latent_mse = [&]() {
    Tape t(false);
    double s = 0;
    std::int64_t n = 0;
    for (int f = 0; f < ds.n_frames; ++f) {
      Tensor z = model.keypoint_encode(t, keypoints_tensor(ds, f));
      for (int j = 0; j < z.dim(0); ++j) {
        double d = z.at(j) - targets[static_cast<size_t>(f)].at(j);
        s += d * d;
        ++n;
      }
    }
    return s / static_cast<double>(n);
  };

  DistillResult result;
  result.initial_latent_mse = latent_mse();
  for (int it = 0; it < cfg.distill_iters; ++it) {
    Tape tape;
    Tensor loss;
    for (int f = 0; f < ds.n_frames; ++f) {
      Tensor z = model.keypoint_encode(tape, keypoints_tensor(ds, f));
      Tensor diff = tape.sub(z, targets[static_cast<size_t>(f)]);
      Tensor sq = tape.reduce_sum(tape.mul(diff, diff));
      loss = loss.defined() ? tape.add(loss, sq) : sq;
    }
    tape.backward(loss);
    std::map<std::string, Tensor> grads;
    for (const auto& name : kps_only) grads.emplace(name, tape.grad(model.params().get(name)));
    adam_step(model.params(), grads, opt, &kps_only);
    result.history.push_back(loss.item());
  }
  result.final_latent_mse = latent_mse();
  return result;
}

std::vector<Tensor> latent_interpolate(const Tensor& z_a, const Tensor& z_b, int steps) {
  if (steps < 2) throw std::invalid_argument("latent_interpolate requires steps >= 2");
  if (z_a.shape() != z_b.shape())
    throw std::invalid_argument("latent_interpolate: code shapes differ");
  std::vector<Tensor> out;
  for (int s = 0; s < steps; ++s) {
    double t = static_cast<double>(s) / (steps - 1);
    std::vector<double> v(static_cast<size_t>(z_a.size()));
    for (std::int64_t i = 0; i < z_a.size(); ++i) v[static_cast<size_t>(i)] = (1.0 - t) * z_a.at(i) + t * z_b.at(i);
    out.push_back(Tensor::from(z_a.shape(), std::move(v)));
  }
  return out;
}

std::vector<Tensor> latent_sample(Rng& rng, int n, int z_dim) {
  std::vector<Tensor> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v(static_cast<size_t>(z_dim));
    for (double& x : v) x = rng.normal();
    out.push_back(Tensor::from({z_dim}, std::move(v)));
  }
  return out;
}

}  // namespace crfd
