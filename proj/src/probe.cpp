#include "slidekit/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "slidekit/errors.hpp"
#include "slidekit/random.hpp"

namespace slidekit {

Eigen::MatrixXd LinearModel::logits(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  return (x * weights.transpose()).rowwise() + bias.transpose();
}

std::vector<int> LinearModel::predict(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  const Eigen::MatrixXd z = logits(x);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    Eigen::Index arg = 0;
    z.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

void adam_step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads, AdamState& state,
               double lr, const AdamParams& p) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error("adam_step: shape mismatch");
  }
  if (!grads.allFinite()) throw Error("adam_step: non-finite gradient");
  ++state.t;
  state.m = p.beta1 * state.m + (1.0 - p.beta1) * grads;
  state.v = p.beta2 * state.v + (1.0 - p.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + p.eps);
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw Error("cosine_lr: total_steps must be > 0");
  if (step < 0 || step > total_steps) throw Error("cosine_lr: step outside [0, total_steps]");
  return 0.5 * base_lr *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

double softmax_cross_entropy(const LinearModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                             std::span<const int> labels, Eigen::MatrixXd* grad_w, Eigen::VectorXd* grad_b) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size() || n == 0) throw Error("cross-entropy: bad batch");
  Eigen::MatrixXd z = model.logits(x);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mx = z.row(i).maxCoeff();
    z.row(i).array() = (z.row(i).array() - mx).exp();
    const double sum = z.row(i).sum();
    z.row(i) /= sum;
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= std::log(std::max(z(i, y), std::numeric_limits<double>::min()));
    z(i, y) -= 1.0;  // z now holds dL_i/dlogits
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  if (grad_w) *grad_w = z.transpose() * x * inv_n;
  if (grad_b) *grad_b = z.colwise().sum().transpose() * inv_n;
  return loss * inv_n;
}

LinearModel train_probe(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels, const TrainConfig& cfg,
                        TrainReport* report) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) throw Error("train_probe: label count mismatch");
  if (!(cfg.learning_rate > 0.0) || cfg.batch_size < 1 || cfg.epochs < 1) {
    throw Error("train_probe: learning rate, batch size and epochs must be positive");
  }
  std::set<int> present;
  for (int l : labels) {
    if (l < 0) throw Error("train_probe: negative class id");
    present.insert(l);
  }
  if (present.size() < 2) throw Error("train_probe: need at least 2 classes");

  const int classes = *present.rbegin() + 1;
  const Eigen::Index n = x.rows(), d = x.cols();
  LinearModel model{Eigen::MatrixXd::Zero(classes, d), Eigen::VectorXd::Zero(classes)};
  AdamState state_w(classes * d), state_b(classes);

  const std::int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::int64_t step = 0;
  Eigen::MatrixXd gw;
  Eigen::VectorXd gb;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(counter_hash(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    for (std::int64_t b = 0; b < steps_per_epoch; ++b, ++step) {
      const auto begin = static_cast<std::size_t>(b * cfg.batch_size);
      const auto end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      Eigen::MatrixXd xb(static_cast<Eigen::Index>(end - begin), d);
      std::vector<int> yb(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        xb.row(static_cast<Eigen::Index>(i - begin)) = x.row(static_cast<Eigen::Index>(order[i]));
        yb[i - begin] = labels[order[i]];
      }
      softmax_cross_entropy(model, xb, yb, &gw, &gb);
      const double lr = cosine_lr(step, total_steps, cfg.learning_rate);
      if (cfg.weight_decay > 0.0) model.weights *= (1.0 - lr * cfg.weight_decay);
      Eigen::Map<Eigen::VectorXd> w(model.weights.data(), model.weights.size());
      adam_step(w, Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size()), state_w, lr, cfg.adam);
      adam_step(model.bias, gb, state_b, lr, cfg.adam);
    }
    if (report) report->epoch_loss.push_back(softmax_cross_entropy(model, x, labels));
  }
  return model;
}

// ---------------------------------------------------------------------------

namespace {

void check_pair(std::span<const int> preds, std::span<const int> labels) {
  if (preds.empty() || labels.empty()) throw Error("metrics: empty input");
  if (preds.size() != labels.size()) throw Error("metrics: prediction and label counts differ");
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || labels[i] < 0) throw Error("metrics: negative class id");
  }
}

int class_count(std::span<const int> preds, std::span<const int> labels) {
  return std::max(*std::max_element(preds.begin(), preds.end()), *std::max_element(labels.begin(), labels.end())) + 1;
}

}  // namespace

Eigen::MatrixXi confusion_matrix(std::span<const int> preds, std::span<const int> labels, int classes) {
  check_pair(preds, labels);
  Eigen::MatrixXi cm = Eigen::MatrixXi::Zero(classes, classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] >= classes || preds[i] >= classes) throw Error("confusion_matrix: class id out of range");
    ++cm(labels[i], preds[i]);
  }
  return cm;
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds, labels);
  const Eigen::MatrixXi cm = confusion_matrix(preds, labels, class_count(preds, labels));
  double sum = 0.0;
  int present = 0;
  for (Eigen::Index c = 0; c < cm.rows(); ++c) {
    const int positives = cm.row(c).sum();
    if (positives == 0) continue;
    sum += static_cast<double>(cm(c, c)) / positives;
    ++present;
  }
  return sum / present;
}

double accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds, labels);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

ClassF1 per_class_f1(std::span<const int> preds, std::span<const int> labels) {
  check_pair(preds, labels);
  const Eigen::MatrixXi cm = confusion_matrix(preds, labels, class_count(preds, labels));
  ClassF1 out;
  for (Eigen::Index c = 0; c < cm.rows(); ++c) {
    const int tp = cm(c, c);
    const int fn = cm.row(c).sum() - tp;
    const int fp = cm.col(c).sum() - tp;
    const bool defined = tp + fn + fp > 0;
    out.defined.push_back(defined);
    out.f1.push_back(defined ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0);
  }
  return out;
}

double macro_f1(std::span<const int> preds, std::span<const int> labels) {
  const ClassF1 f = per_class_f1(preds, labels);
  double sum = 0.0;
  int n = 0;
  for (std::size_t c = 0; c < f.f1.size(); ++c) {
    if (!f.defined[c]) continue;
    sum += f.f1[c];
    ++n;
  }
  return sum / n;
}

// ---------------------------------------------------------------------------

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n, double fraction,
                                                                         std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("split fraction must be in [0, 1)");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const auto second = static_cast<std::size_t>(std::lround(static_cast<double>(n) * fraction));
  std::vector<std::size_t> b(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(second));
  std::vector<std::size_t> a(order.begin() + static_cast<std::ptrdiff_t>(second), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

SweepResult sweep_probe(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const int> labels,
                        std::span<const double> learning_rates, std::span<const double> weight_decays,
                        const TrainConfig& base, double validation_fraction) {
  if (learning_rates.empty() || weight_decays.empty()) throw Error("sweep: empty grid");
  const auto [train_rows, val_rows] = split_rows(labels.size(), validation_fraction, counter_hash(base.seed, 0x5EED));
  if (val_rows.empty()) throw Error("sweep: validation split is empty");
  auto gather = [&](const std::vector<std::size_t>& rows, Eigen::MatrixXd& xs, std::vector<int>& ys) {
    xs.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
    ys.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      xs.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
      ys[i] = labels[rows[i]];
    }
  };
  Eigen::MatrixXd xt, xv;
  std::vector<int> yt, yv;
  gather(train_rows, xt, yt);
  gather(val_rows, xv, yv);

  SweepResult best;
  bool have = false;
  for (double lr : learning_rates) {
    for (double wd : weight_decays) {
      TrainConfig cfg = base;
      cfg.learning_rate = lr;
      cfg.weight_decay = wd;
      LinearModel m = train_probe(xt, yt, cfg);
      const double score = balanced_accuracy(m.predict(xv), yv);
      best.trials.push_back({lr, wd, score});
      if (!have || score > best.validation_balanced_accuracy) {
        have = true;
        best.model = std::move(m);
        best.learning_rate = lr;
        best.weight_decay = wd;
        best.validation_balanced_accuracy = score;
      }
    }
  }
  return best;
}

std::vector<std::pair<std::size_t, int>> load_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::pair<std::size_t, int>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(path.string() + " line " + std::to_string(line_no) + ": expected row,label");
    try {
      std::size_t used = 0;
      const long long row = std::stoll(line.substr(0, comma), &used);
      const int label = std::stoi(line.substr(comma + 1));
      if (row < 0 || label < 0) throw std::invalid_argument("negative");
      out.emplace_back(static_cast<std::size_t>(row), label);
    } catch (const std::exception&) {
      if (line_no == 1) continue;  // header
      throw Error(path.string() + " line " + std::to_string(line_no) + ": bad row,label");
    }
  }
  return out;
}

}  // namespace slidekit
