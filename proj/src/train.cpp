#include "crs/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include "crs/ops.hpp"

namespace crs {

double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg) {
  cfg.validate();
  if (steps_per_epoch < 1) throw ValueError("lr_at: steps_per_epoch must be >= 1");
  if (step < 0) throw ValueError("lr_at: step must be >= 0");
  const long total = static_cast<long>(cfg.epochs) * steps_per_epoch;
  const long warm = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
  if (step >= total) step = total - 1;
  if (warm > 0 && step < warm)
    return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const long q = step - warm;
  const long span = total - warm;
  if (q == 0) return cfg.base_lr;  // exact continuity with the warmup endpoint
  const double p = span > 1 ? static_cast<double>(q) / static_cast<double>(span - 1) : 1.0;
  const double w = (1.0 + std::cos(3.14159265358979323846 * p)) / 2.0;
  const double f = cfg.final_lr_fraction;
  return cfg.base_lr * (f + (1.0 - f) * w);
}

void sgd_step(const std::vector<Parameter*>& params, SgdState& state, double lr,
              double momentum, double weight_decay) {
  for (Parameter* p : params) {
    const long n = p->value.numel();
    std::vector<float>& v = state.velocity[p->name];
    if (v.empty()) v.assign(static_cast<size_t>(n), 0.0f);
    float* value = p->value.data();
    const float* grad = p->value.requires_grad() ? p->value.grad() : nullptr;
    const float mu = static_cast<float>(momentum);
    const float wd = p->decay ? static_cast<float>(weight_decay) : 0.0f;
    const float step_size = static_cast<float>(lr);
    for (long i = 0; i < n; ++i) {
      const float g = (grad ? grad[i] : 0.0f) + wd * value[i];
      v[static_cast<size_t>(i)] = mu * v[static_cast<size_t>(i)] + g;
      value[i] -= step_size * v[static_cast<size_t>(i)];
    }
  }
}

Tensor augment_batch(const Tensor& batch, Rng& rng, int pad) {
  if (batch.rank() != 4) throw ShapeError("augment_batch expects a rank-4 batch");
  const int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  Tensor out({N, C, H, W});
  const float* x = batch.data();
  float* y = out.data();
  const size_t plane = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    const bool flip = rng.uniform() < 0.5;
    const int dy = rng.uniform_int(2 * pad + 1);
    const int dx = rng.uniform_int(2 * pad + 1);
    for (int c = 0; c < C; ++c) {
      const float* xc = x + (static_cast<size_t>(n) * C + c) * plane;
      float* yc = y + (static_cast<size_t>(n) * C + c) * plane;
      for (int h = 0; h < H; ++h) {
        const int sh = h + dy - pad;
        for (int w = 0; w < W; ++w) {
          int sw = w + dx - pad;
          if (flip && sw >= 0 && sw < W) sw = W - 1 - sw;
          yc[static_cast<size_t>(h) * W + w] =
              (sh >= 0 && sh < H && sw >= 0 && sw < W)
                  ? xc[static_cast<size_t>(sh) * W + sw]
                  : 0.0f;
        }
      }
    }
  }
  return out;
}

namespace {

Tensor gather_batch(const LabeledDataset& ds, const std::vector<int>& order, int start, int count,
                    std::vector<int>* labels_out) {
  const Shape& s = ds.images.shape();
  const long row = static_cast<long>(s[1]) * s[2] * s[3];
  Tensor batch({count, s[1], s[2], s[3]});
  if (labels_out) labels_out->resize(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int src = order[static_cast<size_t>(start + i)];
    std::memcpy(batch.data() + static_cast<long>(i) * row,
                ds.images.data() + static_cast<long>(src) * row,
                static_cast<size_t>(row) * sizeof(float));
    if (labels_out) (*labels_out)[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(src)];
  }
  return batch;
}

int count_correct(const Tensor& logits, const std::vector<int>& labels) {
  const int n = logits.dim(0), k = logits.dim(1);
  int correct = 0;
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<size_t>(i) * k;
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (row[j] > row[best]) best = j;
    if (best == labels[static_cast<size_t>(i)]) ++correct;
  }
  return correct;
}

}  // namespace

double evaluate(Model& model, const LabeledDataset& dataset, int batch_size) {
  if (dataset.size() == 0) throw ValueError("evaluate: empty dataset");
  NoGradGuard ng;
  const bool was_training = model.training;
  model.set_training(false);
  std::vector<int> order(static_cast<size_t>(dataset.size()));
  std::iota(order.begin(), order.end(), 0);
  long correct = 0;
  for (int start = 0; start < dataset.size(); start += batch_size) {
    const int cur = std::min(batch_size, dataset.size() - start);
    std::vector<int> labels;
    Tensor batch = gather_batch(dataset, order, start, cur, &labels);
    correct += count_correct(model.forward(batch), labels);
  }
  model.set_training(was_training);
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RunMetrics train(Model& model, const LabeledDataset& train_split, const TrainConfig& cfg,
                 const LabeledDataset* eval_split, bool quiet) {
  cfg.validate();
  if (train_split.size() == 0) throw ValueError("train: empty dataset");
  const int n = train_split.size();
  const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;

  Rng rng(cfg.seed);
  SgdState opt;
  std::vector<Parameter*> params = model.parameters();
  RunMetrics metrics;
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    model.set_training(true);
    rng.shuffle(order);
    double loss_sum = 0.0;
    long correct = 0;
    double last_lr = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int cur = std::min(cfg.batch_size, n - start);
      std::vector<int> labels;
      Tensor batch = gather_batch(train_split, order, start, cur, &labels);
      if (cfg.augment) batch = augment_batch(batch, rng);

      Tensor loss;
      try {
        Tensor logits = model.forward(batch);
        loss = cross_entropy(logits, labels);
        correct += count_correct(logits, labels);
      } catch (const NonFiniteError& e) {
        throw TrainAbort(step, strf("training aborted at step %ld: %s", step, e.what()));
      }
      const double loss_v = static_cast<double>(loss.data()[0]);
      if (!std::isfinite(loss_v))
        throw TrainAbort(step, strf("training aborted at step %ld: loss is not finite", step));
      loss_sum += loss_v * cur;

      model.zero_grads();
      backward(loss);
      last_lr = lr_at(step, steps_per_epoch, cfg);
      sgd_step(params, opt, last_lr, cfg.momentum, cfg.weight_decay);
      ++step;
    }
    metrics.train_loss.push_back(loss_sum / n);
    metrics.train_top1.push_back(static_cast<double>(correct) / n);
    metrics.eval_top1.push_back(evaluate(model, eval_split ? *eval_split : train_split));
    metrics.lr.push_back(last_lr);
    if (!quiet)
      std::printf("epoch %3d  loss %.4f  train %.4f  eval %.4f  lr %.5f\n", epoch + 1,
                  metrics.train_loss.back(), metrics.train_top1.back(),
                  metrics.eval_top1.back(), metrics.lr.back());
  }
  model.set_training(false);
  return metrics;
}

}  // namespace crs
