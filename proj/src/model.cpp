#include "fprl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fprl/context.hpp"
#include "fprl/error.hpp"
#include "fprl/layers.hpp"

namespace fprl {

namespace {

void init_encoder_stack(ParamStore& store, const std::string& prefix, const RunConfig& c, Rng& rng) {
  views::init_patch_embedding(store, prefix + ".embed", c.patch_values(), c.tokens_per_view(), c.embed_dim, rng);
  ssm::init_encoder(store, prefix, c.encoder(), rng);
}

}  // namespace

void init_teacher(ParamStore& store, const RunConfig& config) {
  Rng rng(derive_seed(kTeacherSeed, 0));
  init_encoder_stack(store, "teacher", config, rng);
}

Model Model::initialize(const RunConfig& c) {
  c.validate();
  Model model;
  ParamStore& s = model.params;
  Rng rng(derive_seed(c.seed, ~std::uint64_t{0}));
  const std::size_t d = c.embed_dim, n = c.tokens_per_view();

  init_encoder_stack(s, "student", c, rng);
  init_teacher(s, c);
  tpam::init_mask_head(s, "mask", d, rng);
  s.add("stream.mask_token", uniform_tensor({d}, 0.02, rng));
  s.add("stream.pos", uniform_tensor({n, d}, 0.1, rng));
  context::init_cvmfc(s, "cvmfc", d, c.cvmfc(), rng);
  for (std::size_t j = 0; j < c.decoder_depth; ++j)
    init_transformer_block(s, "decoder.block" + std::to_string(j), d, rng);
  init_layer_norm(s, "decoder.norm", d);
  init_linear(s, "decoder.head", d, c.patch_values(), rng);
  context::init_projector(s, "agtp.query", d, d, rng);
  for (const auto& name : s.names())
    if (name.starts_with("agtp.query.")) s.add("agtp.target." + name.substr(11), s.at(name));
  return model;
}

bool Model::trainable(const std::string& name) {
  return !name.starts_with("teacher.") && !name.starts_with("agtp.target.");
}

std::vector<std::string> Model::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& e : params.entries())
    if (trainable(e.name)) out.push_back(e.name);
  return out;
}

ClipOutputs forward_clip(const synth::VideoClip& clip, const ParamStore& p, const RunConfig& c, Rng& rng) {
  if (clip.side != c.frame_side || clip.patch != c.patch_size || clip.channels != 3)
    throw DataError("clip geometry " + std::to_string(clip.side) + "px/patch " + std::to_string(clip.patch) +
                    " does not match the configuration");
  const ssm::EncoderConfig enc = c.encoder();
  ClipOutputs out;
  out.views = views::sample_views(clip.frames, c.window_len, c.frames_per_view, rng);

  const Tensor past_px = clip.frames_tensor(out.views.past);
  const Tensor cur_px = clip.frames_tensor(out.views.current);
  const Tensor fut_px = clip.frames_tensor(out.views.future);
  const views::TokenizedView past = views::tokenize(past_px, c.patch_size, p, "student.embed");
  const views::TokenizedView cur = views::tokenize(cur_px, c.patch_size, p, "student.embed");
  const views::TokenizedView fut = views::tokenize(fut_px, c.patch_size, p, "student.embed");
  const views::TokenizedView cur_t = views::tokenize(cur_px, c.patch_size, p, "teacher.embed");

  out.teacher = ssm::encode(cur_t.tokens, cur_t.segments, enc, p, "teacher").detached();
  const Tensor z_p = ssm::encode(past.tokens, past.segments, enc, p, "student");
  const Tensor z_f = ssm::encode(fut.tokens, fut.segments, enc, p, "student");

  const Tensor H = tpam::saliency_prior(out.teacher);
  const Tensor R = tpam::attention_logits(cur.tokens, p, "mask", c.mask_heads);
  out.selection = tpam::fuse_and_select(H, R, c.alpha, c.mask_ratio, c.mask_select_mode, rng);
  const tpam::MaskedTokens masked = tpam::apply_mask(cur.tokens, out.selection.visible, cur.segments);
  const Tensor z_vis = ssm::encode(masked.visible, masked.segments, enc, p, "student");
  const Tensor z_full =
      add(tpam::scatter_with_mask_token(z_vis, masked, p.at("stream.mask_token")), p.at("stream.pos"));

  Tensor h = z_full;
  for (std::size_t j = 0; j < c.decoder_depth; ++j) h = transformer_block(h, p, "decoder.block" + std::to_string(j), 1);
  out.recon = linear(layer_norm(h, p, "decoder.norm"), p, "decoder.head");
  out.target = cur.patches;
  out.rec = objectives::loss_rec(out.recon, out.target, out.selection.masked);

  const context::CvmfcConfig cv = c.cvmfc();
  const context::CvmfcOutput cp = context::cvmfc(z_full, z_p, p, "cvmfc", cv, context::Path::past);
  const context::CvmfcOutput cf = context::cvmfc(z_full, z_f, p, "cvmfc", cv, context::Path::future);
  out.completed_past = cp.completed;
  out.completed_future = cf.completed;
  out.align = objectives::loss_align(cp.completed, cf.completed, out.teacher, out.selection.masked, c.lambda_pf);

  out.p_p = context::agtp_pool(cp.attention, z_p, p, "agtp.target", c.agtp_attn_pool);
  out.p_f = context::agtp_pool(cf.attention, z_f, p, "agtp.target", c.agtp_attn_pool);
  out.p_c = context::agtp_current(z_vis, p, "agtp.query");

  if (c.aux_mask_weight > 0.0) {
    const Tensor err = stop_gradient(objectives::per_token_squared_error(out.recon, out.target));
    out.aux_mask = objectives::loss_aux_mask(out.selection.P, err, out.selection.masked);
  }
  return out;
}

namespace {

Tensor batch_mean(const std::vector<ClipOutputs>& clips, Tensor ClipOutputs::*field) {
  Tensor acc;
  for (const auto& c : clips) acc = acc.empty() ? c.*field : add(acc, c.*field);
  return scale(acc, 1.0 / static_cast<double>(clips.size()));
}

Tensor align_mean(const std::vector<ClipOutputs>& clips, Tensor objectives::AlignTerms::*field) {
  Tensor acc;
  for (const auto& c : clips) acc = acc.empty() ? c.align.*field : add(acc, c.align.*field);
  return scale(acc, 1.0 / static_cast<double>(clips.size()));
}

}  // namespace

BatchOutputs forward_batch(std::span<const synth::VideoClip* const> clips, const ParamStore& params,
                           const RunConfig& config, Rng& rng) {
  if (clips.empty()) throw StructuralError("empty batch");
  BatchOutputs out;
  for (const auto* clip : clips) out.clips.push_back(forward_clip(*clip, params, config, rng));

  objectives::LossComponents parts;
  parts.rec = batch_mean(out.clips, &ClipOutputs::rec);
  parts.pt = align_mean(out.clips, &objectives::AlignTerms::pt);
  parts.ft = align_mean(out.clips, &objectives::AlignTerms::ft);
  parts.pf = align_mean(out.clips, &objectives::AlignTerms::pf);
  parts.align = align_mean(out.clips, &objectives::AlignTerms::align);
  if (config.aux_mask_weight > 0.0) parts.aux_mask = batch_mean(out.clips, &ClipOutputs::aux_mask);

  std::vector<Tensor> pc, pp, pf;
  for (const auto& c : out.clips) {
    pc.push_back(c.p_c);
    pp.push_back(c.p_p);
    pf.push_back(c.p_f);
  }
  parts.cl = objectives::loss_cl(pc, pp, pf, config.tau, config.include_positive_in_denominator, config.similarity);
  out.loss = objectives::loss_total(parts, config.loss_weights());
  out.loss.report.batch = clips.size();
  out.loss.report.masked = out.clips.front().selection.masked.size();
  return out;
}

IndexList sample_batch(std::size_t dataset_size, std::size_t batch, Rng& rng) {
  if (dataset_size == 0) throw DataError("dataset is empty");
  IndexList out;
  if (dataset_size < batch) {
    for (std::size_t i = 0; i < batch; ++i) out.push_back(rng.below(dataset_size));
    return out;
  }
  IndexList pool(dataset_size);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < batch; ++i) std::swap(pool[i], pool[i + rng.below(dataset_size - i)]);
  out.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(batch));
  return out;
}

Rng step_rng(const RunConfig& config, std::size_t step) { return Rng(derive_seed(config.seed, step)); }

objectives::LossReport pretrain_step(Model& model, TrainState& state, std::span<const synth::VideoClip> dataset,
                                     const RunConfig& config) {
  Rng rng = step_rng(config, state.step);
  const IndexList picks = sample_batch(dataset.size(), config.batch_size, rng);
  std::vector<const synth::VideoClip*> batch;
  for (std::size_t i : picks) batch.push_back(&dataset[i]);

  Tape tape;
  const ParamStore bound = model.params.bind(tape, Model::trainable);
  BatchOutputs fwd = forward_batch(batch, bound, config, rng);
  objectives::LossReport report = fwd.loss.report;
  report.step = state.step;
  const GradientMap grads = tape.backward(fwd.loss.total);

  const std::vector<std::string> names = model.trainable_names();
  for (const auto& name : names)
    for (double g : grads.at(bound.at(name)).values())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient for " + name + " at step " + std::to_string(state.step));

  optim::AdamWConfig opt{optim::lr_at(state.step, config.lr, config.effective_warmup(), config.total_steps),
                         config.beta1, config.beta2, config.weight_decay, 1e-8};
  for (const auto& name : names) {
    const Tensor& current = model.params.at(name);
    std::vector<double> theta = current.to_vector();
    optim::adamw_step(theta, grads.at(bound.at(name)).values(), state.moments[name], state.step + 1, opt);
    model.params.set(name, Tensor(current.shape(), std::move(theta)));
  }
  context::ema_update(model.params, "agtp.target", "agtp.query", config.agtp_ema ? config.ema_momentum : 0.0);
  ++state.step;
  return report;
}

}  // namespace fprl
