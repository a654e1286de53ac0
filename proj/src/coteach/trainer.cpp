#include "dfpg/coteach/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dfpg/numerics/ops.hpp"
#include "dfpg/numerics/params.hpp"
#include "json.hpp"

namespace dfpg::coteach {

using annotator::PseudoLabelRecord;

double epoch_gamma(const CoteachConfig& config, int epoch) {
  if (config.epochs == 1) return config.gamma_min;
  return gamma_schedule(epoch, config.epochs, config.gamma_min, config.gamma_max);
}

void validate(const CoteachConfig& c) {
  if (c.epochs < 1) throw ConfigError("coteach.epochs must be >= 1");
  if (c.batch_size == 0) throw ConfigError("coteach.batch_size must be positive");
  if (!(c.lr > 0)) throw ConfigError("coteach.lr must be positive");
  if (!(c.beta >= 0)) throw ConfigError("coteach.beta must be >= 0");
  if (!(c.tau > 0 && c.tau <= 1)) throw ConfigError("filter.tau must be in (0, 1]");
  if (!(c.delta > 0)) throw ConfigError("filter.delta must be > 0");
  if (!(c.gamma_min >= 0 && c.gamma_max >= c.gamma_min)) {
    throw ConfigError("coteach gamma range must satisfy 0 <= gamma_min <= gamma_max");
  }
}

namespace {

std::vector<double> softmax_row64(const float* logits, std::size_t classes) {
  std::vector<double> p(classes);
  double peak = logits[0];
  for (std::size_t c = 1; c < classes; ++c) peak = std::max(peak, double(logits[c]));
  double z = 0;
  for (std::size_t c = 0; c < classes; ++c) z += (p[c] = std::exp(double(logits[c]) - peak));
  for (auto& v : p) v /= z;
  return p;
}

int argmax(const Tensor& logits) {
  return static_cast<int>(std::max_element(logits.raw(), logits.raw() + logits.size()) - logits.raw()) + 1;
}

struct PassTargets {
  const std::vector<PseudoLabelRecord>* labels;
  const std::vector<Tensor64>* partner_probs;
  double delta;
};

struct PassStats {
  double cls = 0, re = 0, total = 0;
  std::size_t steps = 0, correct = 0;
};

/**
 * One sequential pass in `order`. Batch loss is the mean of per-image
 * losses; gradients are accumulated image by image in batch order.
 */
PassStats run_pass(DfpgModel<float>& model, AdamState<float>& adam, const data::Dataset& train,
                   const std::vector<std::size_t>& order, std::size_t batch_size, double beta, double gamma,
                   const PassTargets* targets, std::vector<double>& step_losses) {
  DfpgModel<float> grads = zeros_like(model);
  const auto params = param_list<float>(model);
  const auto grad_refs = param_list<float>(grads);
  const std::size_t classes = static_cast<std::size_t>(model.classes);
  PassStats stats;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(order.size(), start + batch_size);
    const float scale = 1.0f / static_cast<float>(stop - start);
    zero_fill(grads);
    double cls = 0, re = 0, total = 0;
    for (std::size_t b = start; b < stop; ++b) {
      const std::size_t idx = order[b];
      const auto& sample = train[idx];
      ForwardCache<float> cache;
      const auto out = forward(model, sample.image, &cache);
      stats.correct += argmax(out.image_logits) == sample.label ? 1 : 0;
      Tensor d_img({classes});
      Tensor d_patch;
      LossValue v;
      if (model.has_patch_head()) d_patch = Tensor(out.patch_logits.shape());
      if (targets) {
        const auto& rec = (*targets->labels)[idx];
        const std::size_t k = out.patch_logits.dim(0);
        PatchTargets<float> pt{Tensor({k, classes}), Tensor({k, classes}), rec.mask};
        for (std::size_t p = 0; p < k; ++p) {
          // Own predictions enter the targets as constants.
          const auto own = softmax_row64(out.patch_logits.raw() + p * classes, classes);
          const auto row = rec.mask[p] ? filter::refine_reliable(rec.c[p], own, rec.w[p])
                                       : filter::coguess_unreliable(own, (*targets->partner_probs)[idx].row(p),
                                                                    targets->delta);
          auto& dst = rec.mask[p] ? pt.reliable : pt.unreliable;
          for (std::size_t c = 0; c < classes; ++c) dst.at(p, c) = static_cast<float>(row[c]);
        }
        v = composite_loss(out.image_logits, sample.label, &out.patch_logits, &pt, beta, gamma, &d_img,
                           &d_patch);
      } else {
        v = composite_loss<float>(out.image_logits, sample.label, nullptr, nullptr, 0.0, 0.0, &d_img, nullptr);
      }
      scale_inplace(d_img, scale);
      if (model.has_patch_head()) scale_inplace(d_patch, scale);
      backward(model, cache, d_img, d_patch, grads);
      cls += v.cls;
      re += v.re;
      total += v.total;
    }
    const double n = double(stop - start);
    stats.cls += cls / n;
    stats.re += re / n;
    stats.total += total / n;
    ++stats.steps;
    if (!std::isfinite(total)) throw NumericError("non-finite loss at step " + std::to_string(step_losses.size()));
    step_losses.push_back(total / n);
    adam_step(adam, params, grad_refs);
  }
  return stats;
}

std::vector<const Tensor*> warmup_images(const data::Dataset& train) {
  std::vector<const Tensor*> out;
  for (std::size_t i = 0; i < std::min<std::size_t>(train.size(), 64); ++i) out.push_back(&train[i].image);
  return out;
}

const char* shuffle_tag(int id) { return id == 0 ? "shuffle_a" : "shuffle_b"; }

void finish_record(EpochRecord& rec, const PassStats& s, std::size_t n) {
  rec.l_cls = s.cls / double(s.steps);
  rec.l_re = s.re / double(s.steps);
  rec.l_total = s.total / double(s.steps);
  rec.train_accuracy = double(s.correct) / double(n);
}

}  // namespace

std::vector<PseudoLabelRecord> align_labels(const data::Dataset& dataset,
                                            const std::vector<PseudoLabelRecord>& labels) {
  std::map<std::string, const PseudoLabelRecord*> by_id;
  for (const auto& r : labels) by_id[r.image_id] = &r;
  std::vector<PseudoLabelRecord> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw DataError("no pseudo-labels for image '" + s.id + "'");
    out.push_back(*it->second);
  }
  return out;
}

std::vector<double> patch_losses(const DfpgModel<float>& model, const data::Dataset& dataset,
                                 const std::vector<PseudoLabelRecord>& labels,
                                 std::vector<Tensor64>* patch_probs) {
  if (!model.has_patch_head()) throw ConfigError("patch losses need a model with a patch head");
  if (labels.size() != dataset.size()) throw DataError("patch_losses: label count differs from dataset");
  const std::size_t classes = static_cast<std::size_t>(model.classes);
  std::vector<double> losses;
  if (patch_probs) patch_probs->clear();
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto out = forward(model, dataset[i].image);
    const std::size_t k = out.patch_logits.dim(0);
    if (labels[i].c.size() != k) throw ShapeError("pseudo-label length differs from K for " + dataset[i].id);
    Tensor64 probs({k, classes});
    for (std::size_t p = 0; p < k; ++p) {
      const auto row = softmax_row64(out.patch_logits.raw() + p * classes, classes);
      std::copy(row.begin(), row.end(), probs.row(p).begin());
      const int c = labels[i].c[p];
      if (c < 1 || static_cast<std::size_t>(c) > classes) throw DataError("pseudo-label class out of range");
      losses.push_back(-std::log(std::max(row[c - 1], 1e-300)));
    }
    if (patch_probs) patch_probs->push_back(std::move(probs));
  }
  return losses;
}

double pseudo_label_precision(const std::vector<PseudoLabelRecord>& labels,
                              const std::vector<std::vector<int>>& truth, bool retained_only) {
  if (labels.size() != truth.size()) throw DataError("pseudo_label_precision: truth count differs");
  std::size_t hit = 0, seen = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (truth[i].size() != labels[i].c.size()) throw ShapeError("pseudo_label_precision: K differs");
    for (std::size_t k = 0; k < truth[i].size(); ++k) {
      if (retained_only && !labels[i].mask[k]) continue;
      ++seen;
      hit += labels[i].c[k] == truth[i][k] ? 1 : 0;
    }
  }
  return seen ? double(hit) / double(seen) : 0.0;
}

CoteachResult train_coteaching(const ModelSpec& spec, const data::Dataset& train,
                               const std::vector<PseudoLabelRecord>& labels, const CoteachConfig& config,
                               RngStream rng, const TrainOptions& options) {
  validate(config);
  if (spec.kind != ModelKind::dfl) throw ConfigError("co-teaching needs the dfl model kind");
  if (train.empty()) throw DataError("co-teaching: empty training set");
  std::vector<PseudoLabelRecord> current = align_labels(train, labels);
  if (options.patch_truth && options.patch_truth->size() != train.size()) {
    throw DataError("co-teaching: patch truth count differs from training set");
  }

  const auto warmup = warmup_images(train);
  DfpgModel<float> models[2] = {init_model(spec, warmup, rng.derive("model", 0)),
                                init_model(spec, warmup, rng.derive("model", 1))};
  AdamState<float> adam[2];
  adam[0].config.lr = adam[1].config.lr = config.lr;
  int passes[2] = {0, 0};
  TrainHistory history;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const int act = active_model(epoch), fix = 1 - act;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.active = model_name(act);
    rec.gamma = epoch_gamma(config, epoch);

    // Without filtering every patch is reliable, so the fixed model's outputs are never read.
    std::vector<Tensor64> fixed_probs;
    std::vector<double> losses;
    filter::FilterResult fr;
    if (config.filtering) {
      losses = patch_losses(models[fix], train, current, &fixed_probs);
      fr = filter::filter_patches(losses, config.tau, config.gmm);
    } else {
      std::size_t total = 0;
      for (const auto& r : current) total += r.c.size();
      fr.w.assign(total, 1.0);
      fr.mask.assign(total, 1);
    }
    std::size_t pos = 0, retained = 0;
    for (auto& r : current) {
      for (std::size_t k = 0; k < r.c.size(); ++k, ++pos) {
        r.w[k] = static_cast<float>(fr.w[pos]);
        r.mask[k] = fr.mask[pos];
        retained += fr.mask[pos];
      }
    }
    rec.retained_fraction = double(retained) / double(pos);
    rec.degenerate = fr.degenerate;
    if (options.on_filter) {
      options.on_filter(FilterEvent{epoch, act, fix, models[act], models[fix], losses, fr});
    }
    if (!options.snapshot_prefix.empty()) {
      auto path = options.snapshot_prefix;
      path += ".epoch" + std::to_string(epoch);
      annotator::save_pseudo_labels(path, current);
    }
    if (options.patch_truth) {
      rec.precision_all = pseudo_label_precision(current, *options.patch_truth, false);
      rec.precision_retained = pseudo_label_precision(current, *options.patch_truth, true);
    }

    const auto order = rng.derive(shuffle_tag(act), static_cast<std::uint64_t>(passes[act]++)).permutation(train.size());
    PassTargets targets{&current, &fixed_probs, config.delta};
    const auto stats = run_pass(models[act], adam[act], train, order, config.batch_size, config.beta, rec.gamma,
                                &targets, history.step_losses[act]);
    finish_record(rec, stats, train.size());
    if (options.validation && !options.validation->empty()) {
      rec.val = evaluate_model(models[0], *options.validation, config.ensemble_eval ? &models[1] : nullptr);
    }
    history.epochs.push_back(std::move(rec));
  }
  return {std::move(models[0]), std::move(models[1]), std::move(history), std::move(current)};
}

PlainResult train_plain(const ModelSpec& spec, const data::Dataset& train, const CoteachConfig& config,
                        RngStream rng, const TrainOptions& options) {
  validate(config);
  if (train.empty()) throw DataError("training: empty training set");
  PlainResult result{init_model(spec, warmup_images(train), rng.derive("model", 0)), {}};
  AdamState<float> adam;
  adam.config.lr = config.lr;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.gamma = 0;
    const auto order = rng.derive(shuffle_tag(0), static_cast<std::uint64_t>(epoch)).permutation(train.size());
    const auto stats = run_pass(result.model, adam, train, order, config.batch_size, 0.0, 0.0, nullptr,
                                result.history.step_losses[0]);
    finish_record(rec, stats, train.size());
    if (options.validation && !options.validation->empty()) {
      rec.val = evaluate_model(result.model, *options.validation);
    }
    result.history.epochs.push_back(std::move(rec));
  }
  return result;
}

int predict(const DfpgModel<float>& model, const Tensor& image) { return argmax(forward(model, image).image_logits); }

int predict_ensemble(const DfpgModel<float>& a, const DfpgModel<float>& b, const Tensor& image) {
  const auto la = forward(a, image).image_logits;
  const auto lb = forward(b, image).image_logits;
  const auto pa = softmax_row64(la.raw(), la.size());
  const auto pb = softmax_row64(lb.raw(), lb.size());
  std::size_t best = 0;
  for (std::size_t c = 1; c < pa.size(); ++c) {
    if (pa[c] + pb[c] > pa[best] + pb[best]) best = c;
  }
  return static_cast<int>(best) + 1;
}

data::MetricsReport evaluate_model(const DfpgModel<float>& model, const data::Dataset& dataset,
                                   const DfpgModel<float>* partner) {
  std::vector<int> preds, labels;
  for (const auto& s : dataset) {
    preds.push_back(partner ? predict_ensemble(model, *partner, s.image) : predict(model, s.image));
    labels.push_back(s.label);
  }
  return data::evaluate(preds, labels, model.classes);
}

std::string history_jsonl(const TrainHistory& history, int classes) {
  std::string out;
  for (const auto& r : history.epochs) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["active"] = std::string(1, r.active);
    j["gamma"] = r.gamma;
    j["l_cls"] = r.l_cls;
    j["l_re"] = r.l_re;
    j["l_total"] = r.l_total;
    j["train_accuracy"] = r.train_accuracy;
    if (r.val) {
      j["val_accuracy"] = r.val->accuracy;
      j["macro_precision"] = r.val->macro_precision;
      j["macro_recall"] = r.val->macro_recall;
      j["macro_f1"] = r.val->macro_f1;
      j["mae"] = r.val->mae;
      j["recall_per_class"] = r.val->recall;
    }
    j["retained_fraction"] = r.retained_fraction;
    j["degenerate_gmm"] = r.degenerate;
    if (r.precision_all) j["precision_all"] = *r.precision_all;
    if (r.precision_retained) j["precision_retained"] = *r.precision_retained;
    j["classes"] = classes;
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace dfpg::coteach
